#ifndef FRATMAE_TRANSFORMER_HPP
#define FRATMAE_TRANSFORMER_HPP

#include <string>

#include "fratmae/params.hpp"

namespace fratmae::nn {

template <typename S>
void build_attention_params(ParamStore<S>& store, const std::string& prefix, int dim) {
  store.add(prefix + ".q.w", {dim, dim});
  store.add(prefix + ".q.b", {dim});
  store.add(prefix + ".k.w", {dim, dim});
  store.add(prefix + ".k.b", {dim});
  store.add(prefix + ".v.w", {dim, dim});
  store.add(prefix + ".v.b", {dim});
  store.add(prefix + ".o.w", {dim, dim});
  store.add(prefix + ".o.b", {dim});
}

// Multi-head scaled dot-product attention. Queries come from `q_in`, keys and
// values from `kv_in`; self-attention is the q_in == kv_in case. There is no
// positional term inside the attention itself.
template <typename S>
typename Graph<S>::Var attention(Graph<S>& g, Binder<S>& p, const std::string& prefix,
                                 typename Graph<S>::Var q_in, typename Graph<S>::Var kv_in,
                                 int heads) {
  const int dim = g.value(q_in).cols();
  if (g.value(kv_in).cols() != dim) throw ShapeError("attention: query/kv width mismatch");
  if (dim % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const int dh = dim / heads;
  const auto q = g.add_rowvec(g.matmul(q_in, p(prefix + ".q.w")), p(prefix + ".q.b"));
  const auto k = g.add_rowvec(g.matmul(kv_in, p(prefix + ".k.w")), p(prefix + ".k.b"));
  const auto v = g.add_rowvec(g.matmul(kv_in, p(prefix + ".v.w")), p(prefix + ".v.b"));
  std::vector<typename Graph<S>::Var> ctx;
  for (int h = 0; h < heads; ++h) {
    const auto qh = g.slice_cols(q, h * dh, dh);
    const auto kh = g.slice_cols(k, h * dh, dh);
    const auto vh = g.slice_cols(v, h * dh, dh);
    const auto scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    ctx.push_back(g.matmul(g.softmax_rows(scores), vh));
  }
  const auto merged = heads == 1 ? ctx[0] : g.concat_cols(ctx);
  return g.add_rowvec(g.matmul(merged, p(prefix + ".o.w")), p(prefix + ".o.b"));
}

template <typename S>
void build_mlp_params(ParamStore<S>& store, const std::string& prefix, int dim, int hidden) {
  store.add(prefix + ".fc1.w", {dim, hidden});
  store.add(prefix + ".fc1.b", {hidden});
  store.add(prefix + ".fc2.w", {hidden, dim});
  store.add(prefix + ".fc2.b", {dim});
}

template <typename S>
typename Graph<S>::Var mlp(Graph<S>& g, Binder<S>& p, const std::string& prefix,
                           typename Graph<S>::Var x) {
  const auto h = g.gelu(g.add_rowvec(g.matmul(x, p(prefix + ".fc1.w")), p(prefix + ".fc1.b")));
  return g.add_rowvec(g.matmul(h, p(prefix + ".fc2.w")), p(prefix + ".fc2.b"));
}

template <typename S>
void build_norm_params(ParamStore<S>& store, const std::string& prefix, int dim) {
  store.add(prefix + ".gamma", {dim});
  store.add(prefix + ".beta", {dim});
}

template <typename S>
typename Graph<S>::Var norm(Graph<S>& g, Binder<S>& p, const std::string& prefix,
                            typename Graph<S>::Var x) {
  return g.layer_norm(x, p(prefix + ".gamma"), p(prefix + ".beta"));
}

template <typename S>
void build_encoder_block_params(ParamStore<S>& store, const std::string& prefix, int dim,
                                int hidden) {
  build_norm_params(store, prefix + ".ln1", dim);
  build_attention_params(store, prefix + ".attn", dim);
  build_norm_params(store, prefix + ".ln2", dim);
  build_mlp_params(store, prefix + ".mlp", dim, hidden);
}

// Pre-norm block: x += attn(LN(x)); x += mlp(LN(x)).
template <typename S>
typename Graph<S>::Var encoder_block(Graph<S>& g, Binder<S>& p, const std::string& prefix,
                                     typename Graph<S>::Var x, int heads) {
  const auto n1 = norm(g, p, prefix + ".ln1", x);
  x = g.add(x, attention(g, p, prefix + ".attn", n1, n1, heads));
  return g.add(x, mlp(g, p, prefix + ".mlp", norm(g, p, prefix + ".ln2", x)));
}

}  // namespace fratmae::nn

#endif
