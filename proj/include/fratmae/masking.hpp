#ifndef FRATMAE_MASKING_HPP
#define FRATMAE_MASKING_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "fratmae/patches.hpp"
#include "fratmae/rng.hpp"
#include "fratmae/tensor.hpp"
#include "fratmae/volume.hpp"

namespace fratmae {

// One iteration's asymmetric masking choice: modality S gets floor(ratio*T)
// of its tokens hidden, the other modality stays fully visible.
struct MaskingPlan {
  Modality masked_modality = Modality::PET;
  std::vector<uint8_t> token_mask;  // length T; 1 = visible, 0 = masked
  double ratio = 0.5;

  int token_count() const { return static_cast<int>(token_mask.size()); }
  int masked_count() const {
    int c = 0;
    for (uint8_t b : token_mask) c += b == 0;
    return c;
  }
  std::vector<int> visible_indices() const {
    std::vector<int> out;
    for (int i = 0; i < token_count(); ++i)
      if (token_mask[i]) out.push_back(i);
    return out;
  }
  std::vector<int> masked_indices() const {
    std::vector<int> out;
    for (int i = 0; i < token_count(); ++i)
      if (!token_mask[i]) out.push_back(i);
    return out;
  }
};

inline MaskingPlan sample_masking_plan(int token_count, double ratio, Rng& rng) {
  if (token_count < 1) throw ConfigError("masking: token count must be >= 1");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("masking: ratio must be in (0,1)");
  MaskingPlan plan;
  plan.ratio = ratio;
  plan.masked_modality = rng.bernoulli() ? Modality::PET : Modality::CT;
  plan.token_mask.assign(static_cast<size_t>(token_count), 1);
  const int n_masked = static_cast<int>(std::floor(ratio * token_count));
  for (int i : rng.sample_without_replacement(token_count, n_masked)) plan.token_mask[i] = 0;
  return plan;
}

struct VisibleTokens {
  Tensor<float> tokens;         // [n_visible, token_volume]
  std::vector<int> index_map;   // original token index per row, ascending
};

// Keeps only the visible tokens when `target` is the plan's masked modality;
// the complementary modality passes through untouched (its implied mask is
// all ones).
inline VisibleTokens apply_mask(const TokenGrid& grid, const MaskingPlan& plan, Modality target) {
  if (static_cast<int>(plan.token_mask.size()) != grid.count())
    throw ShapeError("apply_mask: plan length does not match token count");
  const int pv = grid.token_volume();
  VisibleTokens out;
  if (target == plan.masked_modality) {
    out.index_map = plan.visible_indices();
  } else {
    out.index_map.resize(grid.count());
    for (int i = 0; i < grid.count(); ++i) out.index_map[i] = i;
  }
  out.tokens = Tensor<float>({static_cast<int>(out.index_map.size()), pv});
  for (size_t r = 0; r < out.index_map.size(); ++r)
    std::copy(grid.tokens.begin() + static_cast<size_t>(out.index_map[r]) * pv,
              grid.tokens.begin() + static_cast<size_t>(out.index_map[r] + 1) * pv,
              out.tokens.v.begin() + r * pv);
  return out;
}

}  // namespace fratmae

#endif
