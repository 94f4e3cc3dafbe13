#ifndef FRATMAE_PATCHES_HPP
#define FRATMAE_PATCHES_HPP

#include <optional>
#include <string>
#include <vector>

#include "fratmae/rng.hpp"
#include "fratmae/volume.hpp"

namespace fratmae {

enum class StackMode { CoronalStack, AxialStack };

inline std::string to_string(StackMode m) {
  return m == StackMode::CoronalStack ? "coronal" : "axial";
}
inline StackMode stack_mode_from_string(const std::string& s) {
  if (s == "coronal") return StackMode::CoronalStack;
  if (s == "axial") return StackMode::AxialStack;
  throw ConfigError("invalid stack mode: " + s);
}

struct PatchSpec {
  Grid3 patch_dims{32, 160, 192};
  int k = 2;  // height subsampling factor (coronal mode)
  StackMode mode = StackMode::CoronalStack;
  Grid3 token_size{8, 16, 16};

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (patch_dims[a] < 1 || token_size[a] < 1)
        throw ConfigError("patch: dims and token size must be >= 1");
      if (patch_dims[a] % token_size[a] != 0)
        throw ConfigError("patch: patch_dims must be divisible by token_size");
    }
    if (k < 1) throw ConfigError("patch: k must be >= 1");
  }

  int height_stride() const { return mode == StackMode::CoronalStack ? k : 1; }
  // source voxels the crop spans along each axis
  Grid3 crop_span() const {
    return {(patch_dims[0] - 1) * height_stride() + 1, patch_dims[1], patch_dims[2]};
  }
  Grid3 token_grid() const {
    return {patch_dims[0] / token_size[0], patch_dims[1] / token_size[1],
            patch_dims[2] / token_size[2]};
  }
  int token_count() const {
    const Grid3 g = token_grid();
    return g[0] * g[1] * g[2];
  }
  int token_volume() const { return token_size[0] * token_size[1] * token_size[2]; }
};

// A cropped sub-grid, same (H, W, D) layout as Volume.
struct Patch3D {
  Grid3 dims{0, 0, 0};
  std::vector<float> data;

  Patch3D() = default;
  explicit Patch3D(Grid3 d) : dims(d), data(static_cast<size_t>(voxel_count(d)), 0.0f) {}
  int64_t idx(int i, int j, int k) const {
    return (static_cast<int64_t>(i) * dims[1] + j) * dims[2] + k;
  }
  float& at(int i, int j, int k) { return data[idx(i, j, k)]; }
  float at(int i, int j, int k) const { return data[idx(i, j, k)]; }
};

struct StackCrop {
  Patch3D ct;
  Patch3D pet;
  std::optional<Patch3D> mask;  // 0/1 values, crop shared with ct/pet
  Grid3 origin{0, 0, 0};
};

inline Grid3 max_origin(const Grid3& src, const PatchSpec& spec) {
  const Grid3 span = spec.crop_span();
  Grid3 out;
  for (int a = 0; a < 3; ++a) {
    out[a] = src[a] - span[a];
    if (out[a] < 0)
      throw ShapeError("source " + std::to_string(src[a]) + " too small for crop span " +
                       std::to_string(span[a]) + " on axis " + std::to_string(a));
  }
  return out;
}

inline Grid3 sample_origin(const Grid3& src, const PatchSpec& spec, Rng& rng) {
  const Grid3 hi = max_origin(src, spec);
  return {rng.uniform_int(hi[0] + 1), rng.uniform_int(hi[1] + 1), rng.uniform_int(hi[2] + 1)};
}

// Deterministic centered origin. Along height the centering uses the
// k-expanded extent (patch_dims.H * k) in coronal mode.
inline Grid3 center_origin(const Grid3& src, const PatchSpec& spec) {
  max_origin(src, spec);  // validates fit
  Grid3 out;
  const int hspan = spec.patch_dims[0] * spec.height_stride();
  out[0] = std::max(0, (src[0] - hspan) / 2);
  out[1] = (src[1] - spec.patch_dims[1]) / 2;
  out[2] = (src[2] - spec.patch_dims[2]) / 2;
  return out;
}

namespace detail {

template <typename Src, typename Get>
Patch3D crop_with(const Src& src, const Get& get, const PatchSpec& spec, const Grid3& origin) {
  Patch3D out(spec.patch_dims);
  const int stride = spec.height_stride();
  for (int i = 0; i < spec.patch_dims[0]; ++i) {
    const int si = origin[0] + i * stride;
    for (int j = 0; j < spec.patch_dims[1]; ++j)
      for (int k = 0; k < spec.patch_dims[2]; ++k)
        out.at(i, j, k) = get(src, si, origin[1] + j, origin[2] + k);
  }
  return out;
}

}  // namespace detail

// Extracts the same crop from CT, PET and (when present) the lesion mask.
// Coronal mode takes every k-th source slice along height; axial mode is a
// plain contiguous crop.
inline StackCrop extract_stack(const VolumePair& pair, const PatchSpec& spec, const Grid3& origin) {
  spec.validate();
  pair.check_coregistered();
  const Grid3 hi = max_origin(pair.ct.dims, spec);
  for (int a = 0; a < 3; ++a)
    if (origin[a] < 0 || origin[a] > hi[a])
      throw ShapeError("crop origin out of bounds on axis " + std::to_string(a));

  StackCrop out;
  out.origin = origin;
  out.ct = detail::crop_with(pair.ct, [](const Volume& v, int i, int j, int k) { return v.at(i, j, k); },
                             spec, origin);
  out.pet = detail::crop_with(pair.pet, [](const Volume& v, int i, int j, int k) { return v.at(i, j, k); },
                              spec, origin);
  if (pair.lesion_mask)
    out.mask = detail::crop_with(
        *pair.lesion_mask,
        [](const MaskVolume& m, int i, int j, int k) { return static_cast<float>(m.at(i, j, k)); },
        spec, origin);
  return out;
}

inline StackCrop extract_stack(const VolumePair& pair, const PatchSpec& spec, Rng& rng) {
  return extract_stack(pair, spec, sample_origin(pair.ct.dims, spec, rng));
}

// Token sequence view of a patch. Token t = (th*w + tw)*d + td, voxels within
// a token row-major; this ordering is a format contract the positional
// embeddings rely on.
struct TokenGrid {
  Grid3 grid{0, 0, 0};       // token counts (h, w, d)
  Grid3 token_size{0, 0, 0};
  Grid3 origin{0, 0, 0};
  std::vector<float> tokens;  // [T, token_volume] flattened

  int count() const { return grid[0] * grid[1] * grid[2]; }
  int token_volume() const { return token_size[0] * token_size[1] * token_size[2]; }
};

inline TokenGrid patchify(const Patch3D& patch, const Grid3& token_size, Grid3 origin = {0, 0, 0}) {
  for (int a = 0; a < 3; ++a) {
    if (token_size[a] < 1) throw ShapeError("patchify: token size must be >= 1");
    if (patch.dims[a] % token_size[a] != 0)
      throw ShapeError("patchify: patch dims not divisible by token size on axis " +
                       std::to_string(a));
  }
  TokenGrid out;
  out.grid = {patch.dims[0] / token_size[0], patch.dims[1] / token_size[1],
              patch.dims[2] / token_size[2]};
  out.token_size = token_size;
  out.origin = origin;
  const int pv = out.token_volume();
  out.tokens.resize(static_cast<size_t>(out.count()) * pv);
  int t = 0;
  for (int th = 0; th < out.grid[0]; ++th)
    for (int tw = 0; tw < out.grid[1]; ++tw)
      for (int td = 0; td < out.grid[2]; ++td, ++t) {
        float* dst = out.tokens.data() + static_cast<size_t>(t) * pv;
        int q = 0;
        for (int i = 0; i < token_size[0]; ++i)
          for (int j = 0; j < token_size[1]; ++j)
            for (int k = 0; k < token_size[2]; ++k, ++q)
              dst[q] = patch.at(th * token_size[0] + i, tw * token_size[1] + j,
                                td * token_size[2] + k);
      }
  return out;
}

inline Patch3D unpatchify(const TokenGrid& grid) {
  if (static_cast<int64_t>(grid.tokens.size()) !=
      static_cast<int64_t>(grid.count()) * grid.token_volume())
    throw ShapeError("unpatchify: token buffer inconsistent with grid dims");
  Patch3D out({grid.grid[0] * grid.token_size[0], grid.grid[1] * grid.token_size[1],
               grid.grid[2] * grid.token_size[2]});
  const int pv = grid.token_volume();
  int t = 0;
  for (int th = 0; th < grid.grid[0]; ++th)
    for (int tw = 0; tw < grid.grid[1]; ++tw)
      for (int td = 0; td < grid.grid[2]; ++td, ++t) {
        const float* src = grid.tokens.data() + static_cast<size_t>(t) * pv;
        int q = 0;
        for (int i = 0; i < grid.token_size[0]; ++i)
          for (int j = 0; j < grid.token_size[1]; ++j)
            for (int k = 0; k < grid.token_size[2]; ++k, ++q)
              out.at(th * grid.token_size[0] + i, tw * grid.token_size[1] + j,
                     td * grid.token_size[2] + k) = src[q];
      }
  return out;
}

// Origins of a non-overlapping tiling that covers the largest prefix region
// divisible by the patch dims (evaluation only; remainders are skipped).
inline std::vector<Grid3> tile_origins(const Grid3& src, const Grid3& patch_dims) {
  std::vector<Grid3> out;
  for (int i = 0; i + patch_dims[0] <= src[0]; i += patch_dims[0])
    for (int j = 0; j + patch_dims[1] <= src[1]; j += patch_dims[1])
      for (int k = 0; k + patch_dims[2] <= src[2]; k += patch_dims[2])
        out.push_back({i, j, k});
  return out;
}

}  // namespace fratmae

#endif
