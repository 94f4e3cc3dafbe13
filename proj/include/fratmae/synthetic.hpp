#ifndef FRATMAE_SYNTHETIC_HPP
#define FRATMAE_SYNTHETIC_HPP

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fratmae/rng.hpp"
#include "fratmae/volume.hpp"

namespace fratmae {

// Paired-phantom generator spec. Output is a pure function of this struct.
struct SyntheticSpec {
  Grid3 grid_dims{64, 64, 64};
  int n_organs = 4;
  int n_lesions = 2;
  double uptake_correlation = 0.9;  // 1.0 = PET is an exact function of CT anatomy
  double noise_sigma = 0.2;         // SUV-scale Gaussian noise on PET
  uint64_t seed = 0;

  void validate() const {
    if (grid_dims[0] < 1 || grid_dims[1] < 1 || grid_dims[2] < 1)
      throw ConfigError("synthetic: grid dims must be >= 1");
    if (n_organs < 0 || n_lesions < 0) throw ConfigError("synthetic: counts must be >= 0");
    if (uptake_correlation < 0.0 || uptake_correlation > 1.0)
      throw ConfigError("synthetic: uptake_correlation must be in [0,1]");
    if (noise_sigma < 0.0) throw ConfigError("synthetic: noise_sigma must be >= 0");
    const int min_dim = std::min({grid_dims[0], grid_dims[1], grid_dims[2]});
    if (n_lesions > 0 && min_dim < 16)
      throw ConfigError("synthetic: grid too small to place lesions (min dim 16)");
  }
};

// Ann Arbor-style spread proxy: advanced iff the mask touches >= 2 of the
// three disjoint height thirds. A geometric stand-in, not clinical truth.
inline StageLabel stage_from_mask(const MaskVolume& mask) {
  const int H = mask.dims[0];
  std::set<int> thirds;
  for (int i = 0; i < H; ++i) {
    const int third = std::min(2, 3 * i / H);
    bool any = false;
    const int64_t row = static_cast<int64_t>(i) * mask.dims[1] * mask.dims[2];
    for (int64_t p = 0; p < static_cast<int64_t>(mask.dims[1]) * mask.dims[2] && !any; ++p)
      any = mask.data[row + p] != 0;
    if (any) thirds.insert(third);
  }
  return thirds.size() >= 2 ? StageLabel::Advanced : StageLabel::Early;
}

namespace detail {

struct Ellipsoid {
  double ci, cj, ck;  // center, voxels
  double ri, rj, rk;  // semi-axes, voxels
  double norm2(int i, int j, int k) const {
    const double a = (i - ci) / ri, b = (j - cj) / rj, c = (k - ck) / rk;
    return a * a + b * b + c * c;
  }
};

// Distinct HU-like levels for organ regions; chosen to stay clear of the body
// (40 HU) and lesion (70+ HU) levels so every label keeps a unique CT value.
inline double organ_hu(int j) {
  static const double table[] = {-800, -450, -150, 250, 450, 650, 850, 1000};
  const int n = static_cast<int>(sizeof(table) / sizeof(table[0]));
  return table[j % n] + 2.0 * (j / n);
}

inline double organ_suv(int j) {
  static const double table[] = {0.4, 2.2, 3.6, 5.0, 1.6, 2.8, 4.2, 0.8};
  const int n = static_cast<int>(sizeof(table) / sizeof(table[0]));
  return table[j % n] + 0.05 * (j / n);
}

}  // namespace detail

// Builds a co-registered CT/PET pair: CT holds ellipsoidal anatomy at
// distinct HU levels, PET blends a per-label uptake map with an
// anatomy-independent gradient field (weighted by uptake_correlation) plus
// Gaussian noise. Lesions are PET-hot, CT-faint spheres recorded in the mask.
inline VolumePair generate_synthetic_pair(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Grid3 d = spec.grid_dims;
  const int H = d[0], W = d[1], D = d[2];
  const int64_t n = voxel_count(d);

  VolumePair pair;
  pair.ct = Volume(d, Modality::CT, IntensityUnits::HU);
  pair.pet = Volume(d, Modality::PET, IntensityUnits::SUV);
  pair.ct.spacing = pair.pet.spacing = {3.0, 2.0, 2.0};
  MaskVolume mask(d);

  // metadata first so its draws never depend on geometry
  static const char* kTracers[] = {"18F FDG", "18F PSMA", "68Ga PSMA"};
  static const char* kDiagnoses[] = {"melanoma", "lymphoma", "lung cancer", "prostate cancer"};
  const int tracer_idx = rng.uniform_int(3);
  pair.metadata.tracer = kTracers[tracer_idx];
  pair.metadata.diagnosis = spec.n_lesions == 0 ? "negative control" : kDiagnoses[rng.uniform_int(4)];
  pair.metadata.age = 20 + rng.uniform_int(61);
  pair.metadata.sex = rng.bernoulli() ? Sex::M : Sex::F;
  const double tracer_gain = 1.0 + 0.2 * (tracer_idx - 1);

  detail::Ellipsoid body{H / 2.0, W / 2.0, D / 2.0,
                         (0.44 + 0.03 * rng.uniform()) * H,
                         (0.40 + 0.03 * rng.uniform()) * W,
                         (0.40 + 0.03 * rng.uniform()) * D};

  std::vector<detail::Ellipsoid> organs;
  for (int j = 0; j < spec.n_organs; ++j) {
    detail::Ellipsoid e;
    e.ci = rng.uniform(0.22, 0.78) * H;
    e.cj = rng.uniform(0.25, 0.75) * W;
    e.ck = rng.uniform(0.25, 0.75) * D;
    e.ri = std::max(1.5, rng.uniform(0.08, 0.20) * H);
    e.rj = std::max(1.5, rng.uniform(0.08, 0.20) * W);
    e.rk = std::max(1.5, rng.uniform(0.08, 0.20) * D);
    organs.push_back(e);
  }

  // anatomy-independent PET component for uptake_correlation < 1
  const double bg_base = rng.uniform(0.8, 1.6);
  const double bg_i = rng.uniform(-1.5, 1.5);
  const double bg_j = rng.uniform(-1.5, 1.5);
  const double bg_k = rng.uniform(-1.5, 1.5);

  // label field: 0 air, 1 body, 2+j organ j; lesions painted afterwards
  std::vector<int> label(static_cast<size_t>(n), 0);
  {
    int64_t p = 0;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        for (int k = 0; k < D; ++k, ++p) {
          if (body.norm2(i, j, k) > 1.0) continue;
          int lab = 1;
          for (int o = 0; o < static_cast<int>(organs.size()); ++o)
            if (organs[o].norm2(i, j, k) <= 1.0) lab = 2 + o;
          label[p] = lab;
        }
  }

  // lesions: small spheres, inside the body, pairwise disjoint
  struct Lesion {
    double ci, cj, ck, r;
  };
  std::vector<Lesion> lesions;
  const int min_dim = std::min({H, W, D});
  for (int li = 0; li < spec.n_lesions; ++li) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      Lesion L;
      L.r = 2.0 + rng.uniform() * std::max(1.0, min_dim / 24.0);
      L.ci = rng.uniform(0.10, 0.90) * H;
      L.cj = rng.uniform(0.15, 0.85) * W;
      L.ck = rng.uniform(0.15, 0.85) * D;
      if (body.norm2(static_cast<int>(L.ci), static_cast<int>(L.cj), static_cast<int>(L.ck)) > 0.75)
        continue;
      if (L.ci - L.r < 1 || L.ci + L.r > H - 2 || L.cj - L.r < 1 || L.cj + L.r > W - 2 ||
          L.ck - L.r < 1 || L.ck + L.r > D - 2)
        continue;
      bool overlaps = false;
      for (const Lesion& o : lesions) {
        const double dist = std::sqrt((L.ci - o.ci) * (L.ci - o.ci) + (L.cj - o.cj) * (L.cj - o.cj) +
                                      (L.ck - o.ck) * (L.ck - o.ck));
        if (dist < L.r + o.r + 1.0) overlaps = true;
      }
      if (overlaps) continue;
      lesions.push_back(L);
      placed = true;
    }
    if (!placed)
      throw ConfigError("synthetic: grid too small to place " + std::to_string(spec.n_lesions) +
                        " lesions");
  }
  for (int li = 0; li < static_cast<int>(lesions.size()); ++li) {
    const Lesion& L = lesions[li];
    const int i0 = std::max(0, static_cast<int>(L.ci - L.r)), i1 = std::min(H - 1, static_cast<int>(L.ci + L.r) + 1);
    const int j0 = std::max(0, static_cast<int>(L.cj - L.r)), j1 = std::min(W - 1, static_cast<int>(L.cj + L.r) + 1);
    const int k0 = std::max(0, static_cast<int>(L.ck - L.r)), k1 = std::min(D - 1, static_cast<int>(L.ck + L.r) + 1);
    for (int i = i0; i <= i1; ++i)
      for (int j = j0; j <= j1; ++j)
        for (int k = k0; k <= k1; ++k) {
          const double dist2 = (i - L.ci) * (i - L.ci) + (j - L.cj) * (j - L.cj) + (k - L.ck) * (k - L.ck);
          const int64_t p = mask.idx(i, j, k);
          if (dist2 <= L.r * L.r && label[p] >= 1) {
            label[p] = 100 + li;
            mask.data[p] = 1;
          }
        }
  }

  // per-label intensities; every label carries a unique CT value so that at
  // uptake_correlation == 1 PET is a pointwise function of CT
  auto ct_of = [](int lab) -> double {
    if (lab == 0) return -1000.0;
    if (lab == 1) return 40.0;
    if (lab >= 100) return 70.0 + 2.0 * (lab - 100);
    return detail::organ_hu(lab - 2);
  };
  auto suv_of = [&](int lab) -> double {
    if (lab == 0) return 0.02;
    if (lab == 1) return 1.0;
    if (lab >= 100) return 10.0 + 0.3 * (lab - 100);
    return detail::organ_suv(lab - 2);
  };

  {
    const double c = spec.uptake_correlation;
    int64_t p = 0;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        for (int k = 0; k < D; ++k, ++p) {
          pair.ct.data[p] = static_cast<float>(ct_of(label[p]));
          const double bg = bg_base + bg_i * (static_cast<double>(i) / H) +
                            bg_j * (static_cast<double>(j) / W) + bg_k * (static_cast<double>(k) / D);
          pair.pet.data[p] = static_cast<float>(c * tracer_gain * suv_of(label[p]) + (1.0 - c) * bg);
        }
  }
  if (spec.noise_sigma > 0.0) {
    for (auto& x : pair.pet.data)
      x = static_cast<float>(std::max(0.0, x + rng.normal(0.0, spec.noise_sigma)));
  }

  pair.lesion_mask = std::move(mask);
  pair.stage_label = stage_from_mask(*pair.lesion_mask);
  return pair;
}

}  // namespace fratmae

#endif
