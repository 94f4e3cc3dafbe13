#ifndef FRATMAE_DATASET_HPP
#define FRATMAE_DATASET_HPP

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fratmae/config.hpp"
#include "fratmae/synthetic.hpp"
#include "fratmae/volume.hpp"

namespace fratmae {

inline constexpr int kManifestFormatVersion = 1;

struct ManifestCase {
  std::string bundle;  // base path relative to the manifest directory
  std::string split;   // "train" | "test"
  std::string prompt;
  std::optional<StageLabel> stage_label;
};

struct Manifest {
  uint64_t seed = 0;
  std::vector<ManifestCase> cases;
};

inline void write_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kManifestFormatVersion;
  j["seed"] = m.seed;
  nlohmann::json cases = nlohmann::json::array();
  for (const ManifestCase& c : m.cases) {
    cases.push_back({{"bundle", c.bundle},
                     {"split", c.split},
                     {"prompt", c.prompt},
                     {"stage_label", c.stage_label ? nlohmann::json(to_string(*c.stage_label))
                                                   : nlohmann::json(nullptr)}});
  }
  j["cases"] = cases;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest: " + path);
  os << j.dump(2) << "\n";
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest: invalid JSON: " + std::string(e.what()));
  }
  Manifest m;
  try {
    if (j.at("format_version").get<int>() != kManifestFormatVersion)
      throw ConfigError("manifest: unsupported format version");
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& c : j.at("cases")) {
      ManifestCase mc;
      mc.bundle = c.at("bundle").get<std::string>();
      mc.split = c.at("split").get<std::string>();
      mc.prompt = c.at("prompt").get<std::string>();
      if (!c.at("stage_label").is_null())
        mc.stage_label = stage_from_string(c.at("stage_label").get<std::string>());
      if (mc.split != "train" && mc.split != "test")
        throw ConfigError("manifest: bad split: " + mc.split);
      m.cases.push_back(std::move(mc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest: missing field: " + std::string(e.what()));
  }
  return m;
}

// Deterministic synthetic cohort: per-case generator seeds derive from the
// cohort seed, lesion counts cycle through 0..max_lesions so both stage
// classes appear.
inline Manifest generate_cohort(const ExperimentConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "bundles");
  Manifest manifest;
  manifest.seed = cfg.seed;
  const int n_train = std::max(1, static_cast<int>(std::lround(cfg.synth.n_cases * cfg.synth.train_split)));
  Rng cohort_rng(cfg.seed ^ 0xc0110c7ull);
  for (int i = 0; i < cfg.synth.n_cases; ++i) {
    SyntheticSpec spec;
    spec.grid_dims = cfg.synth.grid;
    spec.n_organs = cfg.synth.n_organs;
    spec.n_lesions = cfg.synth.max_lesions > 0 ? cohort_rng.uniform_int(cfg.synth.max_lesions + 1) : 0;
    spec.uptake_correlation = cfg.synth.uptake_correlation;
    spec.noise_sigma = cfg.synth.noise_sigma;
    spec.seed = cfg.seed * 1000003ull + static_cast<uint64_t>(i);
    const VolumePair pair = generate_synthetic_pair(spec);

    char name[32];
    std::snprintf(name, sizeof(name), "bundles/case_%04d", i);
    write_bundle(pair, (fs::path(out_dir) / name).string());

    ManifestCase mc;
    mc.bundle = name;
    mc.split = i < n_train ? "train" : "test";
    mc.prompt = format_prompt(pair.metadata);
    mc.stage_label = pair.stage_label;
    manifest.cases.push_back(std::move(mc));
  }
  write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  return manifest;
}

struct LoadedCase {
  VolumePair pair;  // normalized; resized when requested
  std::string prompt;
};

struct Dataset {
  std::vector<LoadedCase> train, test;
};

// Loads bundles, normalizes both modalities into [0,1] with the configured
// windows, optionally resamples onto `resize_to`.
inline Dataset load_dataset(const std::string& manifest_path, const VolumeConfig& vol,
                            std::optional<Grid3> resize_to) {
  namespace fs = std::filesystem;
  const Manifest manifest = read_manifest(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  Dataset out;
  for (const ManifestCase& mc : manifest.cases) {
    VolumePair pair = read_bundle((root / mc.bundle).string());
    pair.ct = normalize(pair.ct, vol.ct_window);
    pair.pet = normalize(pair.pet, vol.pet_window);
    if (resize_to && pair.ct.dims != *resize_to) pair = resize_pair(pair, *resize_to);
    LoadedCase c;
    c.pair = std::move(pair);
    c.prompt = mc.prompt;
    (mc.split == "train" ? out.train : out.test).push_back(std::move(c));
  }
  return out;
}

}  // namespace fratmae

#endif
