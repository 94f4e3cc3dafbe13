#ifndef FRATMAE_ENCODER_HPP
#define FRATMAE_ENCODER_HPP

#include <array>
#include <string>
#include <vector>

#include "fratmae/masking.hpp"
#include "fratmae/transformer.hpp"

namespace fratmae::nn {

// Per-modality ViT encoder configuration. Desk-scale defaults; `vit_b()` is
// the full-size preset.
struct EncoderConfig {
  int embed_dim = 96;  // ch
  int depth = 4;
  int heads = 4;
  double mlp_ratio = 4.0;
  std::array<int, 4> taps{1, 2, 3, 4};  // 1-based block indices recorded for fusion

  int hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }

  void validate() const {
    if (embed_dim < 1 || depth < 1 || heads < 1) throw ConfigError("encoder: dims must be >= 1");
    if (embed_dim % heads != 0) throw ConfigError("encoder: embed_dim not divisible by heads");
    for (int i = 0; i < 4; ++i) {
      if (taps[i] < 1 || taps[i] > depth) throw ConfigError("encoder: tap index out of range");
      if (i > 0 && taps[i] <= taps[i - 1]) throw ConfigError("encoder: taps must be increasing");
    }
  }

  static EncoderConfig vit_b() {
    EncoderConfig c;
    c.embed_dim = 768;
    c.depth = 12;
    c.heads = 12;
    c.taps = {3, 6, 9, 12};
    return c;
  }
};

// CT and PET encoders use disjoint parameter sets under distinct prefixes
// ("enc_ct." / "enc_pet.").
template <typename S>
void build_encoder_params(ParamStore<S>& store, const std::string& prefix,
                          const EncoderConfig& cfg, int token_volume, int token_count) {
  cfg.validate();
  store.add(prefix + "embed.w", {token_volume, cfg.embed_dim});
  store.add(prefix + "embed.b", {cfg.embed_dim});
  store.add(prefix + "cls", {1, cfg.embed_dim});
  store.add(prefix + "pos", {token_count, cfg.embed_dim});
  for (int i = 0; i < cfg.depth; ++i)
    build_encoder_block_params(store, prefix + "blk" + std::to_string(i), cfg.embed_dim,
                               cfg.hidden());
  build_norm_params(store, prefix + "norm", cfg.embed_dim);
}

template <typename S>
struct EncodedRep {
  typename Graph<S>::Var tokens = -1;                // [n_visible+1, ch], CLS at row 0
  std::array<typename Graph<S>::Var, 4> taps{-1, -1, -1, -1};
  Grid3 token_grid{0, 0, 0};
  std::vector<int> index_map;  // original token index per non-CLS row

  int visible_count() const { return static_cast<int>(index_map.size()); }
};

// Linear patch embedding -> positional embedding gathered by original token
// index -> CLS -> pre-norm blocks -> final LN. Positional embeddings cover
// the full token grid, so masked positions stay addressable for the decoder.
template <typename S>
EncodedRep<S> encode(Graph<S>& g, Binder<S>& p, const std::string& prefix,
                     const EncoderConfig& cfg, const VisibleTokens& input, Grid3 token_grid) {
  cfg.validate();
  const int token_count = token_grid[0] * token_grid[1] * token_grid[2];
  if (input.tokens.rows() != static_cast<int>(input.index_map.size()))
    throw ShapeError("encode: token rows do not match index map");
  if (input.tokens.rows() < 1) throw ShapeError("encode: no visible tokens");
  for (int idx : input.index_map)
    if (idx < 0 || idx >= token_count) throw ShapeError("encode: index map exceeds token grid");

  const auto raw = g.constant(input.tokens.template cast<S>());
  auto x = g.add_rowvec(g.matmul(raw, p(prefix + "embed.w")), p(prefix + "embed.b"));
  x = g.add(x, g.gather_rows(p(prefix + "pos"), input.index_map));
  x = g.concat_rows({p(prefix + "cls"), x});

  EncodedRep<S> rep;
  rep.token_grid = token_grid;
  rep.index_map = input.index_map;
  int tap_slot = 0;
  for (int i = 0; i < cfg.depth; ++i) {
    x = encoder_block(g, p, prefix + "blk" + std::to_string(i), x, cfg.heads);
    if (tap_slot < 4 && cfg.taps[tap_slot] == i + 1) rep.taps[tap_slot++] = x;
  }
  rep.tokens = norm(g, p, prefix + "norm", x);
  if (!g.value(rep.tokens).all_finite()) throw NanLossError("encode: non-finite activations");
  return rep;
}

// Full-token (unmasked) encoding of a patch.
template <typename S>
EncodedRep<S> encode_full(Graph<S>& g, Binder<S>& p, const std::string& prefix,
                          const EncoderConfig& cfg, const TokenGrid& grid) {
  VisibleTokens all;
  all.index_map.resize(grid.count());
  for (int i = 0; i < grid.count(); ++i) all.index_map[i] = i;
  all.tokens = Tensor<float>({grid.count(), grid.token_volume()}, grid.tokens);
  return encode(g, p, prefix, cfg, all, grid.grid);
}

}  // namespace fratmae::nn

#endif
