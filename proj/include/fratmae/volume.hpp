#ifndef FRATMAE_VOLUME_HPP
#define FRATMAE_VOLUME_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fratmae/errors.hpp"
#include "fratmae/prompt.hpp"

namespace fratmae {

using Grid3 = std::array<int, 3>;  // (H, W, D) in voxels

inline int64_t voxel_count(const Grid3& g) {
  return static_cast<int64_t>(g[0]) * g[1] * g[2];
}

enum class Modality { CT, PET };
enum class IntensityUnits { HU, SUV, Normalized };
enum class StageLabel { Early, Advanced };

inline std::string to_string(StageLabel s) { return s == StageLabel::Early ? "early" : "advanced"; }
inline StageLabel stage_from_string(const std::string& s) {
  if (s == "early") return StageLabel::Early;
  if (s == "advanced") return StageLabel::Advanced;
  throw ConfigError("invalid stage label: " + s);
}

inline std::string to_string(IntensityUnits u) {
  switch (u) {
    case IntensityUnits::HU: return "HU";
    case IntensityUnits::SUV: return "SUV";
    default: return "normalized";
  }
}
inline IntensityUnits units_from_string(const std::string& s) {
  if (s == "HU") return IntensityUnits::HU;
  if (s == "SUV") return IntensityUnits::SUV;
  if (s == "normalized") return IntensityUnits::Normalized;
  throw ConfigError("invalid intensity units: " + s);
}

// 3-D scalar grid indexed (height, width, depth), depth contiguous.
struct Volume {
  Grid3 dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel
  Modality modality = Modality::CT;
  IntensityUnits units = IntensityUnits::HU;
  std::vector<float> data;

  Volume() = default;
  Volume(Grid3 d, Modality m, IntensityUnits u)
      : dims(d), modality(m), units(u), data(static_cast<size_t>(voxel_count(d)), 0.0f) {
    if (d[0] < 1 || d[1] < 1 || d[2] < 1) throw ShapeError("volume dims must be >= 1");
  }

  int64_t idx(int i, int j, int k) const {
    return (static_cast<int64_t>(i) * dims[1] + j) * dims[2] + k;
  }
  float& at(int i, int j, int k) { return data[idx(i, j, k)]; }
  float at(int i, int j, int k) const { return data[idx(i, j, k)]; }
};

// Binary mask on the same grid convention.
struct MaskVolume {
  Grid3 dims{0, 0, 0};
  std::vector<uint8_t> data;

  MaskVolume() = default;
  explicit MaskVolume(Grid3 d) : dims(d), data(static_cast<size_t>(voxel_count(d)), 0) {}
  int64_t idx(int i, int j, int k) const {
    return (static_cast<int64_t>(i) * dims[1] + j) * dims[2] + k;
  }
  uint8_t& at(int i, int j, int k) { return data[idx(i, j, k)]; }
  uint8_t at(int i, int j, int k) const { return data[idx(i, j, k)]; }
  int64_t sum() const {
    int64_t s = 0;
    for (uint8_t v : data) s += v;
    return s;
  }
};

struct VolumePair {
  Volume ct;
  Volume pet;
  std::optional<MaskVolume> lesion_mask;
  std::optional<StageLabel> stage_label;
  TextMetadata metadata;

  void check_coregistered() const {
    if (ct.dims != pet.dims || ct.spacing != pet.spacing)
      throw ShapeError("CT and PET grids are not co-registered");
    if (lesion_mask && lesion_mask->dims != ct.dims)
      throw ShapeError("lesion mask grid does not match volumes");
  }
};

// Clip to [lo, hi], then map affinely onto [0, 1].
inline Volume normalize(const Volume& v, std::pair<double, double> window) {
  const auto [lo, hi] = window;
  if (!(lo < hi)) throw ConfigError("normalize: window lo must be < hi");
  Volume out = v;
  out.units = IntensityUnits::Normalized;
  const double scale = 1.0 / (hi - lo);
  for (auto& x : out.data) {
    double y = (static_cast<double>(x) - lo) * scale;
    y = y < 0.0 ? 0.0 : (y > 1.0 ? 1.0 : y);
    x = static_cast<float>(y);
  }
  return out;
}

namespace detail {

// Align-corners source coordinate for target index i: spans [0, S-1] exactly.
inline double resample_coord(int i, int src, int dst) {
  if (dst == 1) return (src - 1) / 2.0;
  return static_cast<double>(i) * (src - 1) / (dst - 1);
}

}  // namespace detail

// Trilinear resampling onto a new grid; spacing rescaled to keep the physical
// extent of the sample span.
inline Volume resize_volume(const Volume& v, Grid3 target) {
  if (target[0] < 1 || target[1] < 1 || target[2] < 1)
    throw ShapeError("resize_volume: target dims must be >= 1");
  Volume out(target, v.modality, v.units);
  for (int a = 0; a < 3; ++a)
    out.spacing[a] = target[a] > 1 ? v.spacing[a] * (v.dims[a] - 1) / (target[a] - 1)
                                   : v.spacing[a] * v.dims[a];
  for (int i = 0; i < target[0]; ++i) {
    const double z = detail::resample_coord(i, v.dims[0], target[0]);
    const int z0 = std::min(static_cast<int>(z), v.dims[0] - 1);
    const int z1 = std::min(z0 + 1, v.dims[0] - 1);
    const double fz = z - z0;
    for (int j = 0; j < target[1]; ++j) {
      const double y = detail::resample_coord(j, v.dims[1], target[1]);
      const int y0 = std::min(static_cast<int>(y), v.dims[1] - 1);
      const int y1 = std::min(y0 + 1, v.dims[1] - 1);
      const double fy = y - y0;
      for (int k = 0; k < target[2]; ++k) {
        const double x = detail::resample_coord(k, v.dims[2], target[2]);
        const int x0 = std::min(static_cast<int>(x), v.dims[2] - 1);
        const int x1 = std::min(x0 + 1, v.dims[2] - 1);
        const double fx = x - x0;
        const double c00 = v.at(z0, y0, x0) * (1 - fx) + v.at(z0, y0, x1) * fx;
        const double c01 = v.at(z0, y1, x0) * (1 - fx) + v.at(z0, y1, x1) * fx;
        const double c10 = v.at(z1, y0, x0) * (1 - fx) + v.at(z1, y0, x1) * fx;
        const double c11 = v.at(z1, y1, x0) * (1 - fx) + v.at(z1, y1, x1) * fx;
        const double c0 = c00 * (1 - fy) + c01 * fy;
        const double c1 = c10 * (1 - fy) + c11 * fy;
        out.at(i, j, k) = static_cast<float>(c0 * (1 - fz) + c1 * fz);
      }
    }
  }
  return out;
}

// Masks stay binary: nearest-neighbor resampling.
inline MaskVolume resize_mask(const MaskVolume& m, Grid3 target) {
  MaskVolume out(target);
  for (int i = 0; i < target[0]; ++i) {
    const int z = static_cast<int>(std::lround(detail::resample_coord(i, m.dims[0], target[0])));
    for (int j = 0; j < target[1]; ++j) {
      const int y = static_cast<int>(std::lround(detail::resample_coord(j, m.dims[1], target[1])));
      for (int k = 0; k < target[2]; ++k) {
        const int x = static_cast<int>(std::lround(detail::resample_coord(k, m.dims[2], target[2])));
        out.at(i, j, k) = m.at(std::min(z, m.dims[0] - 1), std::min(y, m.dims[1] - 1),
                               std::min(x, m.dims[2] - 1));
      }
    }
  }
  return out;
}

inline VolumePair resize_pair(const VolumePair& p, Grid3 target) {
  VolumePair out;
  out.ct = resize_volume(p.ct, target);
  out.pet = resize_volume(p.pet, target);
  if (p.lesion_mask) out.lesion_mask = resize_mask(*p.lesion_mask, target);
  out.stage_label = p.stage_label;
  out.metadata = p.metadata;
  return out;
}

// ---- volume bundle on-disk format ----
//
// <base>.json   sidecar: dims, spacing, units, metadata, labels, version
// <base>.fmb    blob: CT voxels, PET voxels, then the mask (if present),
//               each as raw little-endian float32 in (H, W, D) order.

inline constexpr int kBundleFormatVersion = 1;
inline constexpr const char* kBundleBlobExt = ".fmb";
inline constexpr const char* kBundleSidecarExt = ".json";

namespace detail {

inline void write_f32_le(std::ostream& os, const std::vector<float>& v) {
  for (float x : v) {
    uint32_t u;
    std::memcpy(&u, &x, 4);
    const char bytes[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                           static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
    os.write(bytes, 4);
  }
}

inline void read_f32_le(std::istream& is, std::vector<float>& v) {
  for (float& x : v) {
    unsigned char bytes[4];
    is.read(reinterpret_cast<char*>(bytes), 4);
    const uint32_t u = static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
                       (static_cast<uint32_t>(bytes[2]) << 16) |
                       (static_cast<uint32_t>(bytes[3]) << 24);
    std::memcpy(&x, &u, 4);
  }
}

}  // namespace detail

inline void write_bundle(const VolumePair& pair, const std::string& base_path) {
  pair.check_coregistered();
  const Grid3 d = pair.ct.dims;
  const int64_t n = voxel_count(d);
  const int64_t blob_bytes = 4 * (2 * n + (pair.lesion_mask ? n : 0));

  nlohmann::json side;
  side["format_version"] = kBundleFormatVersion;
  side["dims"] = {d[0], d[1], d[2]};
  side["spacing"] = {pair.ct.spacing[0], pair.ct.spacing[1], pair.ct.spacing[2]};
  side["ct_units"] = to_string(pair.ct.units);
  side["pet_units"] = to_string(pair.pet.units);
  side["has_mask"] = pair.lesion_mask.has_value();
  side["stage_label"] = pair.stage_label ? nlohmann::json(to_string(*pair.stage_label))
                                         : nlohmann::json(nullptr);
  side["metadata"] = {{"tracer", pair.metadata.tracer},
                      {"diagnosis", pair.metadata.diagnosis},
                      {"age", pair.metadata.age},
                      {"sex", to_string(pair.metadata.sex)}};
  side["blob_bytes"] = blob_bytes;

  std::ofstream js(base_path + kBundleSidecarExt, std::ios::trunc);
  if (!js) throw IoError("cannot write sidecar: " + base_path + kBundleSidecarExt);
  js << side.dump(2) << "\n";
  js.close();

  std::ofstream blob(base_path + kBundleBlobExt, std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot write blob: " + base_path + kBundleBlobExt);
  detail::write_f32_le(blob, pair.ct.data);
  detail::write_f32_le(blob, pair.pet.data);
  if (pair.lesion_mask) {
    std::vector<float> m(pair.lesion_mask->data.begin(), pair.lesion_mask->data.end());
    detail::write_f32_le(blob, m);
  }
}

inline VolumePair read_bundle(const std::string& base_path) {
  std::ifstream js(base_path + kBundleSidecarExt);
  if (!js) throw IoError("cannot open sidecar: " + base_path + kBundleSidecarExt);
  nlohmann::json side;
  try {
    js >> side;
  } catch (const nlohmann::json::exception& e) {
    throw BundleParseError("malformed sidecar " + base_path + ": " + e.what());
  }

  int version = -1;
  Grid3 dims{};
  bool has_mask = false;
  int64_t blob_bytes = -1;
  VolumePair pair;
  try {
    version = side.at("format_version").get<int>();
    if (version != kBundleFormatVersion)
      throw BundleVersionError("unsupported bundle format version " + std::to_string(version));
    const auto dd = side.at("dims");
    dims = {dd.at(0).get<int>(), dd.at(1).get<int>(), dd.at(2).get<int>()};
    has_mask = side.at("has_mask").get<bool>();
    blob_bytes = side.at("blob_bytes").get<int64_t>();
    pair.ct = Volume(dims, Modality::CT, units_from_string(side.at("ct_units").get<std::string>()));
    pair.pet = Volume(dims, Modality::PET, units_from_string(side.at("pet_units").get<std::string>()));
    const auto sp = side.at("spacing");
    for (int a = 0; a < 3; ++a) pair.ct.spacing[a] = pair.pet.spacing[a] = sp.at(a).get<double>();
    if (!side.at("stage_label").is_null())
      pair.stage_label = stage_from_string(side.at("stage_label").get<std::string>());
    const auto& md = side.at("metadata");
    pair.metadata.tracer = md.at("tracer").get<std::string>();
    pair.metadata.diagnosis = md.at("diagnosis").get<std::string>();
    pair.metadata.age = md.at("age").get<int>();
    pair.metadata.sex = sex_from_string(md.at("sex").get<std::string>());
  } catch (const BundleError&) {
    throw;
  } catch (const std::exception& e) {
    throw BundleParseError("malformed sidecar " + base_path + ": " + e.what());
  }

  const int64_t n = voxel_count(dims);
  const int64_t expected = 4 * (2 * n + (has_mask ? n : 0));
  std::error_code ec;
  const auto actual = std::filesystem::file_size(base_path + kBundleBlobExt, ec);
  if (ec) throw IoError("cannot stat blob: " + base_path + kBundleBlobExt);
  if (blob_bytes != expected || static_cast<int64_t>(actual) != expected)
    throw BundleDimError("blob size " + std::to_string(actual) + " does not match sidecar dims (" +
                         std::to_string(expected) + " bytes expected)");

  std::ifstream blob(base_path + kBundleBlobExt, std::ios::binary);
  if (!blob) throw IoError("cannot open blob: " + base_path + kBundleBlobExt);
  detail::read_f32_le(blob, pair.ct.data);
  detail::read_f32_le(blob, pair.pet.data);
  if (has_mask) {
    std::vector<float> m(static_cast<size_t>(n));
    detail::read_f32_le(blob, m);
    MaskVolume mask(dims);
    for (int64_t i = 0; i < n; ++i) mask.data[i] = m[i] != 0.0f ? 1 : 0;
    pair.lesion_mask = std::move(mask);
  }
  return pair;
}

}  // namespace fratmae

#endif
