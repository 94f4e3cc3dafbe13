#include <catch2/catch_amalgamated.hpp>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "fratmae/synthetic.hpp"
#include "fratmae/volume.hpp"

using namespace fratmae;
namespace fs = std::filesystem;

namespace {

Volume make_volume(Grid3 dims, Modality m, IntensityUnits u, float fill) {
  Volume v(dims, m, u);
  std::fill(v.data.begin(), v.data.end(), fill);
  return v;
}

fs::path test_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fratmae_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("normalize maps window endpoints and midpoint") {
  Volume v({1, 1, 4}, Modality::CT, IntensityUnits::HU);
  v.data = {-1024.0f, 1024.0f, 0.0f, -2000.0f};
  const Volume n = normalize(v, {-1024.0, 1024.0});
  CHECK(n.data[0] == 0.0f);
  CHECK(n.data[1] == 1.0f);
  CHECK(n.data[2] == Catch::Approx(0.5));  // 0 HU sits mid-window
  CHECK(n.data[3] == 0.0f);                // clipped below
  CHECK(n.units == IntensityUnits::Normalized);

  Volume w({1, 1, 3}, Modality::PET, IntensityUnits::SUV);
  w.data = {2.0f, 7.0f, 4.5f};
  const Volume nw = normalize(w, {2.0, 7.0});
  CHECK(nw.data[0] == 0.0f);
  CHECK(nw.data[1] == 1.0f);
  CHECK(nw.data[2] == Catch::Approx(0.5));
}

TEST_CASE("normalize is idempotent through the unit window") {
  Rng rng(3);
  Volume v({4, 5, 6}, Modality::CT, IntensityUnits::HU);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform(-1500.0, 1500.0));
  const Volume once = normalize(v, {-1024.0, 1024.0});
  const Volume twice = normalize(once, {0.0, 1.0});
  REQUIRE(once.data.size() == twice.data.size());
  for (size_t i = 0; i < once.data.size(); ++i) CHECK(once.data[i] == twice.data[i]);
}

TEST_CASE("normalize rejects inverted windows") {
  Volume v({1, 1, 1}, Modality::CT, IntensityUnits::HU);
  CHECK_THROWS_AS(normalize(v, {5.0, 5.0}), ConfigError);
  CHECK_THROWS_AS(normalize(v, {7.0, 5.0}), ConfigError);
}

TEST_CASE("resize_volume: identity, constant, linear ramp") {
  SECTION("identity dims leave values unchanged") {
    Rng rng(4);
    Volume v({5, 6, 7}, Modality::CT, IntensityUnits::HU);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(-100.0, 100.0));
    const Volume r = resize_volume(v, v.dims);
    for (size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == Catch::Approx(v.data[i]).margin(1e-6));
  }
  SECTION("constant field stays constant at any target dims") {
    const Volume v = make_volume({4, 4, 4}, Modality::PET, IntensityUnits::SUV, 3.25f);
    const Volume r = resize_volume(v, {9, 3, 7});
    CHECK(r.dims == Grid3{9, 3, 7});
    for (float x : r.data) CHECK(x == Catch::Approx(3.25).margin(1e-6));
  }
  SECTION("ramp along height survives 2x upsampling") {
    const int S = 8;
    Volume v({S, 2, 2}, Modality::CT, IntensityUnits::HU);
    const double a = -3.0, b = 2.5;
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) v.at(i, j, k) = static_cast<float>(a + b * i);
    const int T = 2 * S;
    const Volume r = resize_volume(v, {T, 2, 2});
    for (int i = 0; i < T; ++i) {
      const double coord = static_cast<double>(i) * (S - 1) / (T - 1);
      CHECK(r.at(i, 0, 0) == Catch::Approx(a + b * coord).margin(1e-6));
    }
    // original sample points map to the endpoints exactly
    CHECK(r.at(0, 0, 0) == Catch::Approx(a).margin(1e-6));
    CHECK(r.at(T - 1, 0, 0) == Catch::Approx(a + b * (S - 1)).margin(1e-6));
  }
  SECTION("spacing rescales with the sample span") {
    Volume v({5, 5, 5}, Modality::CT, IntensityUnits::HU);
    v.spacing = {2.0, 2.0, 2.0};
    const Volume r = resize_volume(v, {9, 9, 9});
    CHECK(r.spacing[0] == Catch::Approx(2.0 * 4 / 8));
  }
}

TEST_CASE("synthetic generator basics") {
  SECTION("no lesions: zero mask and early stage") {
    SyntheticSpec spec;
    spec.grid_dims = {32, 32, 32};
    spec.n_lesions = 0;
    spec.seed = 11;
    const VolumePair p = generate_synthetic_pair(spec);
    REQUIRE(p.lesion_mask.has_value());
    CHECK(p.lesion_mask->sum() == 0);
    CHECK(p.stage_label == StageLabel::Early);
    CHECK(p.metadata.diagnosis == "negative control");
  }
  SECTION("same seed is bit-identical, different seeds differ") {
    SyntheticSpec spec;
    spec.grid_dims = {32, 32, 32};
    spec.n_lesions = 2;
    spec.seed = 7;
    const VolumePair a = generate_synthetic_pair(spec);
    const VolumePair b = generate_synthetic_pair(spec);
    CHECK(std::memcmp(a.ct.data.data(), b.ct.data.data(), a.ct.data.size() * 4) == 0);
    CHECK(std::memcmp(a.pet.data.data(), b.pet.data.data(), a.pet.data.size() * 4) == 0);
    CHECK(a.lesion_mask->data == b.lesion_mask->data);
    CHECK(a.metadata == b.metadata);
    spec.seed = 8;
    const VolumePair c = generate_synthetic_pair(spec);
    CHECK(std::memcmp(a.pet.data.data(), c.pet.data.data(), a.pet.data.size() * 4) != 0);
  }
  SECTION("co-registration and finiteness") {
    SyntheticSpec spec;
    spec.grid_dims = {24, 28, 20};
    spec.n_lesions = 1;
    spec.seed = 5;
    const VolumePair p = generate_synthetic_pair(spec);
    CHECK(p.ct.dims == p.pet.dims);
    CHECK(p.ct.spacing == p.pet.spacing);
    for (float x : p.ct.data) REQUIRE(std::isfinite(x));
    for (float x : p.pet.data) REQUIRE(std::isfinite(x));
  }
  SECTION("rejects grids too small for lesions") {
    SyntheticSpec spec;
    spec.grid_dims = {8, 8, 8};
    spec.n_lesions = 1;
    CHECK_THROWS_AS(generate_synthetic_pair(spec), ConfigError);
  }
}

TEST_CASE("uptake_correlation=1, zero noise: PET is a function of CT values") {
  SyntheticSpec spec;
  spec.grid_dims = {32, 32, 32};
  spec.n_organs = 5;
  spec.n_lesions = 2;
  spec.uptake_correlation = 1.0;
  spec.noise_sigma = 0.0;
  spec.seed = 42;
  const VolumePair p = generate_synthetic_pair(spec);
  // exhaustive per-CT-value lookup must have zero residual
  std::map<float, float> lut;
  for (size_t i = 0; i < p.ct.data.size(); ++i) {
    const auto [it, fresh] = lut.emplace(p.ct.data[i], p.pet.data[i]);
    if (!fresh) REQUIRE(it->second == p.pet.data[i]);
  }
  CHECK(lut.size() >= 4);  // air, body, organs, lesions all distinct
}

TEST_CASE("stage label is recomputable from the mask alone") {
  for (uint64_t seed = 0; seed < 12; ++seed) {
    SyntheticSpec spec;
    spec.grid_dims = {36, 32, 32};
    spec.n_lesions = static_cast<int>(seed % 4);
    spec.seed = seed;
    const VolumePair p = generate_synthetic_pair(spec);
    REQUIRE(p.stage_label.has_value());
    CHECK(*p.stage_label == stage_from_mask(*p.lesion_mask));
  }
}

TEST_CASE("lesions are PET-hot and CT-faint") {
  SyntheticSpec spec;
  spec.grid_dims = {40, 40, 40};
  spec.n_lesions = 2;
  spec.uptake_correlation = 1.0;
  spec.noise_sigma = 0.0;
  spec.seed = 3;
  const VolumePair p = generate_synthetic_pair(spec);
  REQUIRE(p.lesion_mask->sum() > 0);
  double pet_in = 0, pet_out = 0, ct_in = 0;
  int64_t n_in = 0, n_out = 0;
  for (size_t i = 0; i < p.pet.data.size(); ++i) {
    if (p.lesion_mask->data[i]) {
      pet_in += p.pet.data[i];
      ct_in += p.ct.data[i];
      ++n_in;
    } else {
      pet_out += p.pet.data[i];
      ++n_out;
    }
  }
  CHECK(pet_in / n_in > 4.0 * (pet_out / n_out));  // hot in PET
  CHECK(std::fabs(ct_in / n_in - 40.0) < 60.0);    // near soft tissue in CT
}

TEST_CASE("volume bundle round-trips bit-exactly") {
  const fs::path dir = test_dir("bundle_roundtrip");
  SyntheticSpec spec;
  spec.grid_dims = {20, 24, 16};
  spec.n_lesions = 1;
  spec.seed = 9;
  const VolumePair p = generate_synthetic_pair(spec);
  const std::string base = (dir / "case").string();
  write_bundle(p, base);
  const VolumePair q = read_bundle(base);
  CHECK(q.ct.dims == p.ct.dims);
  CHECK(std::memcmp(q.ct.data.data(), p.ct.data.data(), p.ct.data.size() * 4) == 0);
  CHECK(std::memcmp(q.pet.data.data(), p.pet.data.data(), p.pet.data.size() * 4) == 0);
  CHECK(q.lesion_mask->data == p.lesion_mask->data);
  CHECK(q.metadata == p.metadata);
  CHECK(q.stage_label == p.stage_label);
  CHECK(q.ct.spacing == p.ct.spacing);
  CHECK(q.ct.units == p.ct.units);
  CHECK(q.pet.units == p.pet.units);
}

TEST_CASE("bundle corruption yields distinct errors") {
  const fs::path dir = test_dir("bundle_errors");
  SyntheticSpec spec;
  spec.grid_dims = {16, 16, 16};
  spec.n_lesions = 0;
  const VolumePair p = generate_synthetic_pair(spec);
  const std::string base = (dir / "case").string();

  SECTION("sidecar dims disagreeing with blob size") {
    write_bundle(p, base);
    nlohmann::json side;
    {
      std::ifstream in(base + ".json");
      in >> side;
    }
    side["dims"] = {16, 16, 32};
    side["blob_bytes"] = 4 * 3 * 16 * 16 * 32;
    std::ofstream out(base + ".json", std::ios::trunc);
    out << side.dump(2);
    out.close();
    CHECK_THROWS_AS(read_bundle(base), BundleDimError);
  }
  SECTION("unknown format version") {
    write_bundle(p, base);
    nlohmann::json side;
    {
      std::ifstream in(base + ".json");
      in >> side;
    }
    side["format_version"] = 99;
    std::ofstream out(base + ".json", std::ios::trunc);
    out << side.dump(2);
    out.close();
    CHECK_THROWS_AS(read_bundle(base), BundleVersionError);
  }
  SECTION("malformed sidecar") {
    write_bundle(p, base);
    std::ofstream out(base + ".json", std::ios::trunc);
    out << "{not json";
    out.close();
    CHECK_THROWS_AS(read_bundle(base), BundleParseError);
  }
  SECTION("missing fields are a parse error") {
    write_bundle(p, base);
    std::ofstream out(base + ".json", std::ios::trunc);
    out << "{\"format_version\": 1}";
    out.close();
    CHECK_THROWS_AS(read_bundle(base), BundleParseError);
  }
}
