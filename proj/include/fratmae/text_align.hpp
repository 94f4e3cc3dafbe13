#ifndef FRATMAE_TEXT_ALIGN_HPP
#define FRATMAE_TEXT_ALIGN_HPP

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fratmae/encoder.hpp"
#include "fratmae/prompt.hpp"

namespace fratmae::nn {

// Word-level vocabulary over the training prompts. Frozen into the
// checkpoint so tokenization is reproducible at load time.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> words;
  std::map<std::string, int> ids;

  static std::vector<std::string> split_words(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> out;
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
  }

  static Vocabulary build(const std::vector<std::string>& corpus) {
    Vocabulary v;
    v.words = {"<pad>", "<bos>", "<eos>", "<unk>", "<tracer>", "<diagnosis>", "<age>", "<sex>"};
    std::set<std::string> seen(v.words.begin(), v.words.end());
    std::set<std::string> extra;
    for (const std::string& prompt : corpus)
      for (const std::string& w : split_words(prompt))
        if (!seen.count(w)) extra.insert(w);
    for (const std::string& w : extra) v.words.push_back(w);
    for (int i = 0; i < static_cast<int>(v.words.size()); ++i) v.ids[v.words[i]] = i;
    return v;
  }

  int size() const { return static_cast<int>(words.size()); }

  int id_of(const std::string& w) const {
    auto it = ids.find(w);
    return it == ids.end() ? kUnk : it->second;
  }

  // BOS <words> EOS, padded/truncated to max_len.
  std::vector<int> encode(const std::string& prompt, int max_len) const {
    if (max_len < 2) throw ConfigError("tokenize: max_len must be >= 2");
    std::vector<int> out;
    out.push_back(kBos);
    for (const std::string& w : split_words(prompt)) {
      if (static_cast<int>(out.size()) >= max_len - 1) break;
      out.push_back(id_of(w));
    }
    out.push_back(kEos);
    while (static_cast<int>(out.size()) < max_len) out.push_back(kPad);
    return out;
  }

  std::string decode(const std::vector<int>& token_ids) const {
    std::string out;
    for (int id : token_ids) {
      if (id == kPad || id == kBos || id == kEos) continue;
      if (id < 0 || id >= size()) throw ShapeError("decode: token id out of range");
      if (!out.empty()) out += ' ';
      out += words[id];
    }
    return out;
  }
};

// ContextAlign configuration: small text transformer + PET CLS projection +
// InfoNCE temperature.
struct TextConfig {
  int embed_dim = 64;
  int depth = 2;
  int heads = 4;
  double mlp_ratio = 4.0;
  int max_len = 16;
  int align_dim = 64;
  double temperature = 0.07;
  bool learnable_temperature = false;
  bool symmetric = false;

  int hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }

  void validate() const {
    if (embed_dim < 1 || depth < 1 || heads < 1 || align_dim < 1)
      throw ConfigError("text: dims must be >= 1");
    if (embed_dim % heads != 0) throw ConfigError("text: embed_dim not divisible by heads");
    if (temperature <= 0.0) throw ConfigError("text: temperature must be > 0");
    if (max_len < 2) throw ConfigError("text: max_len must be >= 2");
  }
};

template <typename S>
void build_text_params(ParamStore<S>& store, const TextConfig& cfg, int vocab_size,
                       int encoder_dim) {
  cfg.validate();
  store.add("text.emb", {vocab_size, cfg.embed_dim});
  store.add("text.pos", {cfg.max_len, cfg.embed_dim});
  store.add("text.cls", {1, cfg.embed_dim});
  for (int i = 0; i < cfg.depth; ++i)
    build_encoder_block_params(store, "text.blk" + std::to_string(i), cfg.embed_dim, cfg.hidden());
  build_norm_params(store, "text.norm", cfg.embed_dim);
  store.add("text.proj.w", {cfg.embed_dim, cfg.align_dim});
  store.add("text.proj.b", {cfg.align_dim});
  store.add("align.pet_proj.w", {encoder_dim, cfg.align_dim});
  store.add("align.pet_proj.b", {cfg.align_dim});
  if (cfg.learnable_temperature) {
    auto& t = store.add("align.log_tau", {1});
    t.v[0] = static_cast<S>(std::log(cfg.temperature));
  }
}

// Token embedding + positions -> CLS -> blocks -> LN -> linear projection of
// the CLS row, unit-normalized. Returns a [1, align_dim] var.
template <typename S>
typename Graph<S>::Var encode_text(Graph<S>& g, Binder<S>& p, const TextConfig& cfg,
                                   const std::vector<int>& token_ids, int vocab_size) {
  cfg.validate();
  if (token_ids.empty() || static_cast<int>(token_ids.size()) > cfg.max_len)
    throw ShapeError("encode_text: bad token count");
  for (int id : token_ids)
    if (id < 0 || id >= vocab_size) throw ShapeError("encode_text: token id out of range");

  auto x = g.gather_rows(p("text.emb"), token_ids);
  std::vector<int> pos_idx(token_ids.size());
  for (size_t i = 0; i < token_ids.size(); ++i) pos_idx[i] = static_cast<int>(i);
  x = g.add(x, g.gather_rows(p("text.pos"), pos_idx));
  x = g.concat_rows({p("text.cls"), x});
  for (int i = 0; i < cfg.depth; ++i)
    x = encoder_block(g, p, "text.blk" + std::to_string(i), x, cfg.heads);
  x = norm(g, p, "text.norm", x);
  const auto cls = g.slice_rows(x, 0, 1);
  const auto z = g.add_rowvec(g.matmul(cls, p("text.proj.w")), p("text.proj.b"));
  return g.unit_normalize_rows(z);
}

// PET CLS token mapped into the alignment space, unit-normalized.
template <typename S>
typename Graph<S>::Var pet_align_embedding(Graph<S>& g, Binder<S>& p, const EncodedRep<S>& rep_pet) {
  const auto cls = g.slice_rows(rep_pet.tokens, 0, 1);
  const auto z = g.add_rowvec(g.matmul(cls, p("align.pet_proj.w")), p("align.pet_proj.b"));
  return g.unit_normalize_rows(z);
}

namespace detail {

template <typename S>
void check_unit_rows(const Tensor<S>& m, const char* which) {
  for (int r = 0; r < m.rows(); ++r) {
    S s = 0;
    for (int c = 0; c < m.cols(); ++c) s += m.at(r, c) * m.at(r, c);
    if (std::fabs(std::sqrt(static_cast<double>(s)) - 1.0) > 1e-4)
      throw ConfigError(std::string("info_nce: ") + which + " rows must be unit-normalized");
  }
}

}  // namespace detail

// InfoNCE over a batch of matched rows: mean_i -log softmax_j(s_ij / tau) at
// j == i, with s = pet . text^T. Direction is PET -> text; the symmetric flag
// averages in the text -> PET term.
template <typename S>
typename Graph<S>::Var info_nce(Graph<S>& g, typename Graph<S>::Var pet_cls,
                                typename Graph<S>::Var text_cls, const TextConfig& cfg,
                                Binder<S>* p = nullptr) {
  const Tensor<S>& a = g.value(pet_cls);
  const Tensor<S>& b = g.value(text_cls);
  if (!a.same_shape(b)) throw ShapeError("info_nce: batch shapes differ");
  if (a.rows() < 1) throw ShapeError("info_nce: empty batch");
  if (cfg.temperature <= 0.0) throw ConfigError("info_nce: temperature must be > 0");
  detail::check_unit_rows(a, "pet");
  detail::check_unit_rows(b, "text");

  auto logits = g.matmul(pet_cls, g.transpose(text_cls));
  if (cfg.learnable_temperature) {
    if (p == nullptr) throw ConfigError("info_nce: learnable temperature needs bound params");
    logits = g.mul_scalar_var(logits, g.exp(g.scale((*p)("align.log_tau"), -1.0)));
  } else {
    logits = g.scale(logits, 1.0 / cfg.temperature);
  }
  std::vector<int> diag(a.rows());
  for (int i = 0; i < a.rows(); ++i) diag[i] = i;
  auto loss = g.cross_entropy_rows(logits, diag);
  if (cfg.symmetric)
    loss = g.scale(g.add(loss, g.cross_entropy_rows(g.transpose(logits), diag)), 0.5);
  return loss;
}

// Plain-value convenience for analytic checks.
template <typename S>
S info_nce_value(const Tensor<S>& pet_cls, const Tensor<S>& text_cls, double tau,
                 bool symmetric = false) {
  Graph<S> g;
  TextConfig cfg;
  cfg.temperature = tau;
  cfg.symmetric = symmetric;
  return g.value(info_nce(g, g.constant(pet_cls), g.constant(text_cls), cfg)).v[0];
}

}  // namespace fratmae::nn

#endif
