#include <catch2/catch_amalgamated.hpp>
#include <cstring>
#include <set>

#include "fratmae/masking.hpp"
#include "fratmae/patches.hpp"

using namespace fratmae;

namespace {

// CT voxels encode their own height index; PET mirrors CT.
VolumePair indexed_pair(Grid3 dims) {
  VolumePair p;
  p.ct = Volume(dims, Modality::CT, IntensityUnits::Normalized);
  for (int i = 0; i < dims[0]; ++i)
    for (int j = 0; j < dims[1]; ++j)
      for (int k = 0; k < dims[2]; ++k) p.ct.at(i, j, k) = static_cast<float>(i);
  p.pet = p.ct;
  p.pet.modality = Modality::PET;
  return p;
}

VolumePair random_pair(Grid3 dims, uint64_t seed) {
  Rng rng(seed);
  VolumePair p;
  p.ct = Volume(dims, Modality::CT, IntensityUnits::Normalized);
  for (auto& x : p.ct.data) x = static_cast<float>(rng.uniform());
  p.pet = Volume(dims, Modality::PET, IntensityUnits::Normalized);
  for (auto& x : p.pet.data) x = static_cast<float>(rng.uniform());
  return p;
}

}  // namespace

TEST_CASE("coronal stack picks every k-th height slice") {
  // paper-scale geometry: 160x160x192 source, 32x160x192 patch, k=2
  const VolumePair p = indexed_pair({160, 160, 192});
  PatchSpec spec;
  spec.patch_dims = {32, 160, 192};
  spec.k = 2;
  spec.mode = StackMode::CoronalStack;
  const StackCrop crop = extract_stack(p, spec, Grid3{10, 0, 0});
  for (int i = 0; i < 32; ++i) CHECK(crop.ct.at(i, 3, 5) == static_cast<float>(10 + 2 * i));
  CHECK(crop.ct.at(31, 0, 0) == 72.0f);

  // and the default tokenization yields 480 tokens
  const TokenGrid grid = patchify(crop.ct, spec.token_size);
  CHECK(grid.count() == 480);
  CHECK(grid.grid == Grid3{4, 10, 12});
}

TEST_CASE("subsampling arithmetic, exhaustive on small grids") {
  const VolumePair p = indexed_pair({24, 6, 6});
  for (int k = 1; k <= 3; ++k) {
    PatchSpec spec;
    spec.patch_dims = {6, 6, 6};
    spec.token_size = {2, 2, 2};
    spec.k = k;
    spec.mode = StackMode::CoronalStack;
    const Grid3 hi = max_origin(p.ct.dims, spec);
    CHECK(hi[0] == 24 - ((6 - 1) * k + 1));
    for (int oh = 0; oh <= hi[0]; ++oh) {
      const StackCrop crop = extract_stack(p, spec, Grid3{oh, 0, 0});
      for (int i = 0; i < 6; ++i) REQUIRE(crop.ct.at(i, 0, 0) == static_cast<float>(oh + i * k));
    }
  }
}

TEST_CASE("k=1 coronal mode equals axial mode") {
  const VolumePair p = random_pair({20, 12, 12}, 5);
  PatchSpec coronal;
  coronal.patch_dims = {8, 8, 8};
  coronal.token_size = {2, 2, 2};
  coronal.k = 1;
  coronal.mode = StackMode::CoronalStack;
  PatchSpec axial = coronal;
  axial.k = 2;  // ignored in axial mode
  axial.mode = StackMode::AxialStack;
  const Grid3 origin{3, 2, 1};
  const StackCrop a = extract_stack(p, coronal, origin);
  const StackCrop b = extract_stack(p, axial, origin);
  CHECK(a.ct.data == b.ct.data);
  CHECK(a.pet.data == b.pet.data);
}

TEST_CASE("shared origin: identical modalities give identical patches") {
  VolumePair p = random_pair({20, 12, 12}, 6);
  p.pet.data = p.ct.data;  // make PET == CT
  PatchSpec spec;
  spec.patch_dims = {4, 8, 8};
  spec.token_size = {2, 2, 2};
  spec.k = 3;
  Rng rng(1);
  const StackCrop crop = extract_stack(p, spec, rng);
  CHECK(crop.ct.data == crop.pet.data);
}

TEST_CASE("mask crops share the crop with the volumes") {
  VolumePair p = random_pair({20, 12, 12}, 8);
  MaskVolume m({20, 12, 12});
  m.at(5, 3, 3) = 1;
  p.lesion_mask = m;
  PatchSpec spec;
  spec.patch_dims = {4, 8, 8};
  spec.token_size = {2, 2, 2};
  spec.k = 1;
  const StackCrop crop = extract_stack(p, spec, Grid3{4, 0, 0});
  REQUIRE(crop.mask.has_value());
  CHECK(crop.mask->at(1, 3, 3) == 1.0f);
  CHECK(crop.mask->at(0, 0, 0) == 0.0f);
}

TEST_CASE("out-of-bounds crops are rejected") {
  const VolumePair p = indexed_pair({16, 8, 8});
  PatchSpec spec;
  spec.patch_dims = {8, 8, 8};
  spec.token_size = {2, 2, 2};
  spec.k = 2;
  CHECK_THROWS_AS(extract_stack(p, spec, Grid3{2, 0, 0}), ShapeError);  // 2 + 7*2 = 16 > 15
  CHECK_NOTHROW(extract_stack(p, spec, Grid3{1, 0, 0}));
  CHECK_THROWS_AS(extract_stack(p, spec, Grid3{0, 1, 0}), ShapeError);
  PatchSpec big = spec;
  big.patch_dims = {8, 16, 8};
  CHECK_THROWS_AS(extract_stack(p, big, Grid3{0, 0, 0}), ShapeError);
}

TEST_CASE("full-height coverage when k * patch height == source height") {
  const VolumePair p = indexed_pair({24, 6, 6});
  PatchSpec spec;
  spec.patch_dims = {6, 6, 6};
  spec.token_size = {2, 2, 2};
  spec.k = 4;
  const StackCrop crop = extract_stack(p, spec, Grid3{0, 0, 0});
  std::set<int> covered;
  for (int i = 0; i < 6; ++i) covered.insert(static_cast<int>(crop.ct.at(i, 0, 0)));
  CHECK(covered == std::set<int>{0, 4, 8, 12, 16, 20});
  // every height third of the source is represented
  for (int third = 0; third < 3; ++third) {
    bool hit = false;
    for (int s : covered) hit = hit || (std::min(2, 3 * s / 24) == third);
    CHECK(hit);
  }
}

TEST_CASE("patchify/unpatchify is a bijection") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Grid3 token{1 + rng.uniform_int(3), 1 + rng.uniform_int(3), 1 + rng.uniform_int(3)};
    const Grid3 dims{token[0] * (1 + rng.uniform_int(4)), token[1] * (1 + rng.uniform_int(4)),
                     token[2] * (1 + rng.uniform_int(4))};
    Patch3D patch(dims);
    for (auto& x : patch.data) x = static_cast<float>(rng.normal());
    const TokenGrid grid = patchify(patch, token);
    REQUIRE(grid.count() == (dims[0] / token[0]) * (dims[1] / token[1]) * (dims[2] / token[2]));
    const Patch3D back = unpatchify(grid);
    REQUIRE(back.dims == dims);
    REQUIRE(std::memcmp(back.data.data(), patch.data.data(), patch.data.size() * 4) == 0);
  }
}

TEST_CASE("constant patch gives identical tokens") {
  Patch3D patch({4, 4, 4});
  std::fill(patch.data.begin(), patch.data.end(), 2.5f);
  const TokenGrid grid = patchify(patch, {2, 2, 2});
  const int pv = grid.token_volume();
  for (int t = 1; t < grid.count(); ++t)
    for (int q = 0; q < pv; ++q) REQUIRE(grid.tokens[t * pv + q] == grid.tokens[q]);
}

TEST_CASE("tokenization errors") {
  Patch3D patch({4, 4, 4});
  CHECK_THROWS_AS(patchify(patch, {3, 2, 2}), ShapeError);
  TokenGrid bad;
  bad.grid = {2, 2, 2};
  bad.token_size = {2, 2, 2};
  bad.tokens.resize(17);  // not 8 * 8
  CHECK_THROWS_AS(unpatchify(bad), ShapeError);
}

TEST_CASE("patch spec validation") {
  PatchSpec spec;
  spec.patch_dims = {32, 160, 192};
  spec.token_size = {8, 16, 16};
  CHECK_NOTHROW(spec.validate());
  spec.token_size = {7, 16, 16};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.token_size = {8, 16, 16};
  spec.k = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("center origin matches the k-expanded arithmetic") {
  PatchSpec spec;
  spec.patch_dims = {32, 160, 192};
  spec.token_size = {8, 16, 16};
  spec.k = 2;
  const Grid3 origin = center_origin({160, 160, 192}, spec);
  CHECK(origin == Grid3{48, 0, 0});
  const VolumePair p = indexed_pair({160, 160, 192});
  const StackCrop crop = extract_stack(p, spec, origin);
  CHECK(crop.ct.at(0, 0, 0) == 48.0f);
  CHECK(crop.ct.at(31, 0, 0) == 110.0f);
}

TEST_CASE("tiling covers the divisible region without overlap") {
  const auto origins = tile_origins({48, 64, 64}, {16, 32, 32});
  CHECK(origins.size() == 3 * 2 * 2);
  std::set<std::array<int, 3>> seen(origins.begin(), origins.end());
  CHECK(seen.size() == origins.size());
}
