#ifndef FRATMAE_DECODER_HPP
#define FRATMAE_DECODER_HPP

#include <string>
#include <vector>

#include "fratmae/encoder.hpp"

namespace fratmae::nn {

enum class LossSupport { MaskedOnly, Full };

inline std::string to_string(LossSupport s) {
  return s == LossSupport::MaskedOnly ? "masked_only" : "full";
}
inline LossSupport loss_support_from_string(const std::string& s) {
  if (s == "masked_only") return LossSupport::MaskedOnly;
  if (s == "full") return LossSupport::Full;
  throw ConfigError("invalid loss_support: " + s);
}

// One decoder parameter set per modality ("dec_ct." / "dec_pet."); the
// decoder for S reconstructs S's tokens querying the other modality.
struct DecoderConfig {
  int embed_dim = 64;
  int depth = 2;
  int heads = 4;
  double mlp_ratio = 4.0;
  bool self_attention = true;   // query-stream self-attention before the cross step
  bool cross_attention = true;  // false gives the self-only path used by the MAE ablations
  LossSupport loss_support = LossSupport::MaskedOnly;

  int hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }

  void validate() const {
    if (embed_dim < 1 || depth < 1 || heads < 1) throw ConfigError("decoder: dims must be >= 1");
    if (embed_dim % heads != 0) throw ConfigError("decoder: embed_dim not divisible by heads");
    if (!self_attention && !cross_attention)
      throw ConfigError("decoder: needs self-attention, cross-attention or both");
  }
};

template <typename S>
void build_decoder_params(ParamStore<S>& store, const std::string& prefix,
                          const DecoderConfig& cfg, int encoder_dim, int token_volume,
                          int token_count) {
  cfg.validate();
  store.add(prefix + "proj.w", {encoder_dim, cfg.embed_dim});
  store.add(prefix + "proj.b", {cfg.embed_dim});
  store.add(prefix + "mask_token", {1, cfg.embed_dim});
  store.add(prefix + "pos", {token_count, cfg.embed_dim});
  if (cfg.cross_attention) {
    store.add(prefix + "kv.w", {encoder_dim, cfg.embed_dim});
    store.add(prefix + "kv.b", {cfg.embed_dim});
  }
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string blk = prefix + "blk" + std::to_string(i);
    if (cfg.self_attention) {
      build_norm_params(store, blk + ".self.ln", cfg.embed_dim);
      build_attention_params(store, blk + ".self.attn", cfg.embed_dim);
    }
    if (cfg.cross_attention) {
      build_norm_params(store, blk + ".cross.ln", cfg.embed_dim);
      build_attention_params(store, blk + ".cross.attn", cfg.embed_dim);
    }
    build_norm_params(store, blk + ".mlp.ln", cfg.embed_dim);
    build_mlp_params(store, blk + ".mlp", cfg.embed_dim, cfg.hidden());
  }
  build_norm_params(store, prefix + "norm", cfg.embed_dim);
  store.add(prefix + "head.w", {cfg.embed_dim, token_volume});
  store.add(prefix + "head.b", {token_volume});
}

// Reconstructs all T tokens of the masked modality. The visible encoder
// outputs are projected to decoder width, mask tokens fill the hidden
// positions, decoder positional embeddings restore geometry on both the query
// stream and (rows 1..T of) the kv memory, so cross-attention can address the
// anatomically aligned token in the other modality.
template <typename S>
typename Graph<S>::Var decode_cross(Graph<S>& g, Binder<S>& p, const std::string& prefix,
                                    const DecoderConfig& cfg, const EncodedRep<S>& rep_masked,
                                    const EncodedRep<S>* rep_unmasked, const MaskingPlan& plan,
                                    int token_volume) {
  cfg.validate();
  const Grid3 tg = rep_masked.token_grid;
  const int T = tg[0] * tg[1] * tg[2];
  if (static_cast<int>(plan.token_mask.size()) != T)
    throw ShapeError("decode_cross: plan length does not match token grid");
  if (rep_masked.visible_count() != T - plan.masked_count())
    throw ShapeError("decode_cross: representation inconsistent with masking plan");
  if (cfg.cross_attention) {
    if (rep_unmasked == nullptr)
      throw ShapeError("decode_cross: cross-attention requires the unmasked representation");
    if (rep_unmasked->visible_count() != T)
      throw ShapeError("decode_cross: unmasked representation must carry all tokens");
  }

  const int nv = rep_masked.visible_count();
  const auto no_cls = g.slice_rows(rep_masked.tokens, 1, nv);
  auto x = g.add_rowvec(g.matmul(no_cls, p(prefix + "proj.w")), p(prefix + "proj.b"));
  x = g.assemble_rows(x, p(prefix + "mask_token"), rep_masked.index_map, T);
  x = g.add(x, p(prefix + "pos"));

  typename Graph<S>::Var kv_mem = -1;
  if (cfg.cross_attention) {
    const auto kv = g.add_rowvec(g.matmul(rep_unmasked->tokens, p(prefix + "kv.w")),
                                 p(prefix + "kv.b"));
    const auto kv_tok = g.add(g.slice_rows(kv, 1, T), p(prefix + "pos"));
    kv_mem = g.concat_rows({g.slice_rows(kv, 0, 1), kv_tok});
  }

  for (int i = 0; i < cfg.depth; ++i) {
    const std::string blk = prefix + "blk" + std::to_string(i);
    if (cfg.self_attention) {
      const auto n = norm(g, p, blk + ".self.ln", x);
      x = g.add(x, attention(g, p, blk + ".self.attn", n, n, cfg.heads));
    }
    if (cfg.cross_attention)
      x = g.add(x, attention(g, p, blk + ".cross.attn", norm(g, p, blk + ".cross.ln", x), kv_mem,
                             cfg.heads));
    x = g.add(x, mlp(g, p, blk + ".mlp", norm(g, p, blk + ".mlp.ln", x)));
  }
  x = norm(g, p, prefix + "norm", x);
  return g.add_rowvec(g.matmul(x, p(prefix + "head.w")), p(prefix + "head.b"));
}

// MSE over the masked token positions only (default), or over the whole grid
// in Full mode. Returns a constant zero when nothing is masked.
template <typename S>
typename Graph<S>::Var reconstruction_loss(Graph<S>& g, typename Graph<S>::Var pred,
                                           const TokenGrid& target, const MaskingPlan& plan,
                                           LossSupport support = LossSupport::MaskedOnly) {
  const int T = target.count();
  const int pv = target.token_volume();
  if (g.value(pred).rows() != T || g.value(pred).cols() != pv)
    throw ShapeError("reconstruction_loss: prediction/target grid mismatch");
  if (static_cast<int>(plan.token_mask.size()) != T)
    throw ShapeError("reconstruction_loss: plan/target mismatch");

  std::vector<int> rows;
  if (support == LossSupport::MaskedOnly) {
    rows = plan.masked_indices();
    if (rows.empty()) return g.constant(Tensor<S>::scalar(S(0)));
  } else {
    rows.resize(T);
    for (int i = 0; i < T; ++i) rows[i] = i;
  }
  Tensor<S> tgt({static_cast<int>(rows.size()), pv});
  for (size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < pv; ++c)
      tgt.at(static_cast<int>(r), c) = static_cast<S>(target.tokens[static_cast<size_t>(rows[r]) * pv + c]);
  return g.mean_square(g.sub(g.gather_rows(pred, rows), g.constant(std::move(tgt))));
}

}  // namespace fratmae::nn

#endif
