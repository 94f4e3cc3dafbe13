#include <catch2/catch_amalgamated.hpp>
#include <cstring>

#include "fratmae/encoder.hpp"
#include "grad_check.hpp"

using namespace fratmae;
using namespace fratmae::nn;

namespace {

EncoderConfig tiny_config(int ch = 8, int depth = 4, int heads = 2) {
  EncoderConfig cfg;
  cfg.embed_dim = ch;
  cfg.depth = depth;
  cfg.heads = heads;
  cfg.taps = {1, 2, 3, 4};
  return cfg;
}

TokenGrid random_grid(Grid3 grid, Grid3 token, uint64_t seed) {
  Rng rng(seed);
  TokenGrid g;
  g.grid = grid;
  g.token_size = token;
  g.tokens.resize(static_cast<size_t>(g.count()) * g.token_volume());
  for (auto& x : g.tokens) x = static_cast<float>(rng.uniform());
  return g;
}

template <typename S>
ParamStore<S> encoder_store(const std::string& prefix, const EncoderConfig& cfg, int pv, int T,
                            uint64_t seed) {
  ParamStore<S> store;
  build_encoder_params(store, prefix, cfg, pv, T);
  init_params(store, seed);
  return store;
}

}  // namespace

TEST_CASE("encode shape contract across a config sweep") {
  for (int ch : {8, 16}) {
    for (int n_visible : {1, 3, 7}) {
      const EncoderConfig cfg = tiny_config(ch);
      const TokenGrid grid = random_grid({2, 2, 2}, {2, 2, 2}, 7);
      auto store = encoder_store<double>("enc.", cfg, grid.token_volume(), grid.count(), 1);
      Rng rng(n_visible);
      MaskingPlan plan;
      plan.masked_modality = Modality::CT;
      plan.token_mask.assign(8, 0);
      std::vector<int> all{0, 1, 2, 3, 4, 5, 6, 7};
      rng.shuffle(all);
      for (int i = 0; i < n_visible; ++i) plan.token_mask[all[i]] = 1;
      const VisibleTokens vis = apply_mask(grid, plan, Modality::CT);

      Graph<double> g;
      Binder<double> p(g, store);
      const EncodedRep<double> rep = encode(g, p, "enc.", cfg, vis, grid.grid);
      CHECK(g.value(rep.tokens).rows() == n_visible + 1);
      CHECK(g.value(rep.tokens).cols() == ch);
      for (int t = 0; t < 4; ++t) {
        REQUIRE(rep.taps[t] >= 0);
        CHECK(g.value(rep.taps[t]).rows() == n_visible + 1);
      }
      CHECK(g.value(rep.tokens).all_finite());
    }
  }
}

TEST_CASE("modality encoders use disjoint parameters") {
  const EncoderConfig cfg = tiny_config();
  const TokenGrid grid = random_grid({2, 2, 1}, {2, 2, 2}, 3);
  ParamStore<double> store;
  build_encoder_params(store, "enc_ct.", cfg, grid.token_volume(), grid.count());
  build_encoder_params(store, "enc_pet.", cfg, grid.token_volume(), grid.count());
  init_params(store, 5);
  // same seed, different prefixes: independently initialized tensors
  CHECK(store.at("enc_ct.embed.w").v != store.at("enc_pet.embed.w").v);

  Graph<double> g;
  Binder<double> p(g, store);
  const auto rep_ct = encode_full(g, p, "enc_ct.", cfg, grid);
  const auto rep_pet = encode_full(g, p, "enc_pet.", cfg, grid);
  CHECK(g.value(rep_ct.tokens).v != g.value(rep_pet.tokens).v);
}

TEST_CASE("init_params is deterministic per seed and finite") {
  const EncoderConfig cfg = tiny_config();
  auto a = encoder_store<float>("enc.", cfg, 8, 8, 42);
  auto b = encoder_store<float>("enc.", cfg, 8, 8, 42);
  auto c = encoder_store<float>("enc.", cfg, 8, 8, 43);
  for (const auto& [name, t] : a.items) {
    REQUIRE(t.v == b.at(name).v);
    REQUIRE(t.all_finite());
  }
  bool any_diff = false;
  for (const auto& [name, t] : a.items)
    any_diff = any_diff || (ends_with(name, ".w") && t.v != c.at(name).v);
  CHECK(any_diff);
  // biases zero, norm gains one
  for (float x : a.at("enc.embed.b").v) REQUIRE(x == 0.0f);
  for (float x : a.at("enc.norm.gamma").v) REQUIRE(x == 1.0f);
}

TEST_CASE("positional gather: permuting visible tokens permutes outputs") {
  const EncoderConfig cfg = tiny_config();
  const TokenGrid grid = random_grid({2, 2, 2}, {2, 2, 2}, 9);
  auto store = encoder_store<double>("enc.", cfg, grid.token_volume(), grid.count(), 2);

  MaskingPlan plan;
  plan.masked_modality = Modality::CT;
  plan.token_mask = {1, 0, 1, 1, 0, 1, 0, 1};
  const VisibleTokens vis = apply_mask(grid, plan, Modality::CT);

  VisibleTokens perm;
  const std::vector<int> order{3, 0, 4, 1, 2};  // permutation of the 5 visible rows
  perm.tokens = Tensor<float>({5, grid.token_volume()});
  perm.index_map.resize(5);
  for (int r = 0; r < 5; ++r) {
    perm.index_map[r] = vis.index_map[order[r]];
    for (int c = 0; c < grid.token_volume(); ++c)
      perm.tokens.at(r, c) = vis.tokens.at(order[r], c);
  }

  Graph<double> g;
  Binder<double> p(g, store);
  const auto rep_a = encode(g, p, "enc.", cfg, vis, grid.grid);
  const auto rep_b = encode(g, p, "enc.", cfg, perm, grid.grid);
  const auto& ta = g.value(rep_a.tokens);
  const auto& tb = g.value(rep_b.tokens);
  // CLS fixed
  for (int c = 0; c < ta.cols(); ++c) CHECK(ta.at(0, c) == Catch::Approx(tb.at(0, c)).margin(1e-9));
  // token rows permuted identically
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < ta.cols(); ++c)
      REQUIRE(ta.at(1 + order[r], c) == Catch::Approx(tb.at(1 + r, c)).margin(1e-9));
}

TEST_CASE("encode gradients match finite differences") {
  const EncoderConfig cfg = tiny_config(8, 4, 2);
  const TokenGrid grid = random_grid({2, 2, 1}, {2, 2, 2}, 11);
  auto store = encoder_store<double>("enc.", cfg, grid.token_volume(), grid.count(), 3);

  MaskingPlan plan;
  plan.masked_modality = Modality::CT;
  plan.token_mask = {1, 0, 1, 0};
  const VisibleTokens vis = apply_mask(grid, plan, Modality::CT);

  const auto build = [&](gradtest::Graphd& g, Binder<double>& p) {
    const auto rep = encode(g, p, "enc.", cfg, vis, grid.grid);
    return g.mean_square(rep.tokens);
  };
  const double err = gradtest::param_grad_check(
      store,
      {"enc.embed.w", "enc.cls", "enc.pos", "enc.blk0.attn.q.w", "enc.blk2.mlp.fc1.w",
       "enc.blk3.ln1.gamma", "enc.norm.beta"},
      build);
  CHECK(err < 1e-4);
}

TEST_CASE("encode rejects inconsistent inputs") {
  const EncoderConfig cfg = tiny_config();
  const TokenGrid grid = random_grid({2, 2, 1}, {2, 2, 2}, 13);
  auto store = encoder_store<double>("enc.", cfg, grid.token_volume(), grid.count(), 4);
  Graph<double> g;
  Binder<double> p(g, store);

  VisibleTokens bad;
  bad.tokens = Tensor<float>({2, grid.token_volume()});
  bad.index_map = {0};  // size mismatch
  CHECK_THROWS_AS(encode(g, p, "enc.", cfg, bad, grid.grid), ShapeError);

  bad.index_map = {0, 99};  // out of grid
  CHECK_THROWS_AS(encode(g, p, "enc.", cfg, bad, grid.grid), ShapeError);

  // missing params -> uninitialized error
  ParamStore<double> empty;
  Binder<double> p2(g, empty);
  Rng rng(1);
  const VisibleTokens vis = apply_mask(grid, sample_masking_plan(4, 0.5, rng), Modality::CT);
  CHECK_THROWS_AS(encode(g, p2, "enc.", cfg, vis, grid.grid), ConfigError);
}
