#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "fratmae/text_align.hpp"
#include "grad_check.hpp"

using namespace fratmae;
using namespace fratmae::nn;

TEST_CASE("prompt template is byte-exact") {
  const TextMetadata meta{"18F FDG", "melanoma", 61, Sex::M};
  CHECK(format_prompt(meta) == "<tracer> 18F FDG <diagnosis> melanoma <age> 61 <sex> M");
  const TextMetadata meta2{"18F FDG", "lymphoma", 35, Sex::F};
  CHECK(format_prompt(meta2) == "<tracer> 18F FDG <diagnosis> lymphoma <age> 35 <sex> F");
}

TEST_CASE("prompt parse inverts the template") {
  const std::vector<TextMetadata> cases = {
      {"18F FDG", "melanoma", 61, Sex::M},
      {"68Ga PSMA", "prostate cancer", 74, Sex::M},
      {"18F FDG", "negative control", 29, Sex::F},
  };
  for (const auto& meta : cases) {
    const TextMetadata back = parse_prompt(format_prompt(meta));
    REQUIRE(back == meta);
  }
  CHECK_THROWS_AS(parse_prompt("no markers here"), ConfigError);
}

TEST_CASE("formatting is injective over distinct metadata") {
  std::set<std::string> prompts;
  int total = 0;
  for (const std::string& tracer : {"18F FDG", "18F PSMA"})
    for (const std::string& diag : {"melanoma", "lymphoma", "lung cancer"})
      for (int age : {30, 61})
        for (Sex sex : {Sex::M, Sex::F}) {
          prompts.insert(format_prompt({tracer, diag, age, sex}));
          ++total;
        }
  CHECK(static_cast<int>(prompts.size()) == total);
}

TEST_CASE("tokenizer round-trips known prompts, maps OOV to UNK, pads empties") {
  const std::vector<std::string> corpus = {
      format_prompt({"18F FDG", "melanoma", 61, Sex::M}),
      format_prompt({"68Ga PSMA", "prostate cancer", 74, Sex::F}),
  };
  const Vocabulary vocab = Vocabulary::build(corpus);

  SECTION("round-trip to the same token strings") {
    const std::string prompt = corpus[0];
    const auto ids = vocab.encode(prompt, 16);
    REQUIRE(static_cast<int>(ids.size()) == 16);
    CHECK(ids.front() == Vocabulary::kBos);
    CHECK(vocab.decode(ids) == prompt);
  }
  SECTION("unseen words become UNK") {
    const auto ids = vocab.encode("<tracer> 11C choline", 8);
    CHECK(ids[1] == vocab.id_of("<tracer>"));
    CHECK(ids[2] == Vocabulary::kUnk);
    CHECK(ids[3] == Vocabulary::kUnk);
  }
  SECTION("empty prompt is BOS EOS then padding") {
    const auto ids = vocab.encode("", 6);
    REQUIRE(ids.size() == 6);
    CHECK(ids[0] == Vocabulary::kBos);
    CHECK(ids[1] == Vocabulary::kEos);
    for (size_t i = 2; i < ids.size(); ++i) REQUIRE(ids[i] == Vocabulary::kPad);
  }
  SECTION("deterministic") {
    CHECK(vocab.encode(corpus[1], 16) == vocab.encode(corpus[1], 16));
  }
}

namespace {

struct TextSetup {
  TextConfig cfg;
  Vocabulary vocab;
  ParamStore<double> store;

  TextSetup() {
    cfg.embed_dim = 8;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.max_len = 10;
    cfg.align_dim = 6;
    vocab = Vocabulary::build({format_prompt({"18F FDG", "melanoma", 61, Sex::M}),
                               format_prompt({"18F FDG", "lymphoma", 35, Sex::F})});
    build_text_params(store, cfg, vocab.size(), /*encoder_dim=*/8);
    init_params(store, 7);
  }
};

}  // namespace

TEST_CASE("encode_text: unit norm, distinct prompts, gradient fidelity") {
  TextSetup s;

  SECTION("output norm is 1") {
    Graph<double> g;
    Binder<double> p(g, s.store);
    const auto z = g.value(encode_text(g, p, s.cfg,
                                       s.vocab.encode("<tracer> 18F FDG", s.cfg.max_len),
                                       s.vocab.size()));
    double n = 0;
    for (double x : z.v) n += x * x;
    CHECK(std::sqrt(n) == Catch::Approx(1.0).epsilon(1e-6));
  }
  SECTION("different prompts embed differently") {
    Graph<double> g;
    Binder<double> p(g, s.store);
    const auto a = g.value(encode_text(
        g, p, s.cfg, s.vocab.encode(format_prompt({"18F FDG", "melanoma", 61, Sex::M}), s.cfg.max_len),
        s.vocab.size()));
    const auto b = g.value(encode_text(
        g, p, s.cfg, s.vocab.encode(format_prompt({"18F FDG", "lymphoma", 35, Sex::F}), s.cfg.max_len),
        s.vocab.size()));
    double diff = 0;
    for (int64_t i = 0; i < a.numel(); ++i) diff += std::fabs(a.v[i] - b.v[i]);
    CHECK(diff > 1e-4);
  }
  SECTION("gradients match finite differences") {
    const auto ids = s.vocab.encode(format_prompt({"18F FDG", "melanoma", 61, Sex::M}), s.cfg.max_len);
    const auto build = [&](gradtest::Graphd& g, Binder<double>& p) {
      return g.mean_square(encode_text(g, p, s.cfg, ids, s.vocab.size()));
    };
    const double err = gradtest::param_grad_check(
        s.store, {"text.emb", "text.cls", "text.blk0.attn.q.w", "text.proj.w", "text.pos"}, build);
    CHECK(err < 1e-4);
  }
  SECTION("out-of-range ids rejected") {
    Graph<double> g;
    Binder<double> p(g, s.store);
    CHECK_THROWS_AS(encode_text(g, p, s.cfg, {0, 1, 9999}, s.vocab.size()), ShapeError);
  }
}

namespace {

Tensor<double> unit_rows(Rng& rng, int n, int dim) {
  Tensor<double> t({n, dim});
  for (int r = 0; r < n; ++r) {
    double norm = 0;
    for (int c = 0; c < dim; ++c) {
      t.at(r, c) = rng.normal();
      norm += t.at(r, c) * t.at(r, c);
    }
    norm = std::sqrt(norm);
    for (int c = 0; c < dim; ++c) t.at(r, c) /= norm;
  }
  return t;
}

}  // namespace

TEST_CASE("info_nce analytic values") {
  SECTION("single pair: loss is zero") {
    Rng rng(1);
    const auto pet = unit_rows(rng, 1, 4);
    CHECK(info_nce_value(pet, pet, 0.07) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("uniform similarities: loss equals ln N") {
    for (int n : {2, 4, 8}) {
      // all rows identical -> every similarity equals 1
      Tensor<double> pet({n, 3});
      for (int r = 0; r < n; ++r) {
        pet.at(r, 0) = 1.0;
      }
      const double loss = info_nce_value(pet, pet, 0.5);
      CHECK(loss == Catch::Approx(std::log(static_cast<double>(n))).margin(1e-6));
    }
  }
  SECTION("perfectly separated pairs: loss below 1e-9") {
    // diagonal similarity +1, off-diagonal -1, tau = 0.07
    Tensor<double> pet({2, 2});
    pet.at(0, 0) = 1.0;
    pet.at(1, 0) = -1.0;
    const double loss = info_nce_value(pet, pet, 0.07);
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-9);
  }
  SECTION("loss is nonnegative on random unit batches") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      const auto pet = unit_rows(rng, 4, 6);
      const auto text = unit_rows(rng, 4, 6);
      REQUIRE(info_nce_value(pet, text, 0.07) >= 0.0);
    }
  }
  SECTION("symmetric flag averages both directions") {
    Rng rng(11);
    const auto pet = unit_rows(rng, 3, 5);
    const auto text = unit_rows(rng, 3, 5);
    const double one_way = info_nce_value(pet, text, 0.2, false);
    const double other_way = info_nce_value(text, pet, 0.2, false);
    const double sym = info_nce_value(pet, text, 0.2, true);
    CHECK(sym == Catch::Approx(0.5 * (one_way + other_way)).margin(1e-12));
  }
}

TEST_CASE("info_nce validates inputs") {
  Rng rng(13);
  const auto ok = unit_rows(rng, 2, 4);
  Tensor<double> bad = ok;
  bad.at(0, 0) *= 2.0;  // breaks unit norm
  CHECK_THROWS_AS(info_nce_value(bad, ok, 0.07), ConfigError);
  CHECK_THROWS_AS(info_nce_value(ok, bad, 0.07), ConfigError);
  CHECK_THROWS_AS(info_nce_value(ok, ok, 0.0), ConfigError);
  CHECK_THROWS_AS(info_nce_value(ok, ok, -1.0), ConfigError);
}

TEST_CASE("info_nce gradient fidelity (fixed and learnable temperature)") {
  Rng rng(17);
  auto pet_raw = gradtest::randn(rng, {4, 5});
  auto text_raw = gradtest::randn(rng, {4, 5});

  TextConfig cfg;
  cfg.temperature = 0.2;
  CHECK(gradtest::max_rel_err({pet_raw, text_raw}, [&](gradtest::Graphd& g,
                                                       const std::vector<gradtest::Var>& v) {
          return info_nce(g, g.unit_normalize_rows(v[0]), g.unit_normalize_rows(v[1]), cfg);
        }) < 1e-4);

  // learnable log-temperature gets a gradient too
  ParamStore<double> store;
  TextConfig lcfg;
  lcfg.learnable_temperature = true;
  lcfg.temperature = 0.3;
  auto& t = store.add("align.log_tau", {1});
  t.v[0] = std::log(lcfg.temperature);
  const auto build = [&](gradtest::Graphd& g, Binder<double>& p) {
    return info_nce(g, g.unit_normalize_rows(g.constant(pet_raw)),
                    g.unit_normalize_rows(g.constant(text_raw)), lcfg, &p);
  };
  CHECK(gradtest::param_grad_check(store, {"align.log_tau"}, build) < 1e-4);
}

TEST_CASE("gradient steps on a 4-pair toy batch reduce the loss") {
  Rng rng(21);
  Tensor<double> pet = gradtest::randn(rng, {4, 6});
  Tensor<double> text = gradtest::randn(rng, {4, 6});
  TextConfig cfg;
  cfg.temperature = 0.2;

  const auto loss_of = [&](const Tensor<double>& a, const Tensor<double>& b) {
    Graph<double> g;
    return g.value(info_nce(g, g.unit_normalize_rows(g.constant(a)),
                            g.unit_normalize_rows(g.constant(b)), cfg)).v[0];
  };
  const double before = loss_of(pet, text);
  for (int step = 0; step < 50; ++step) {
    Graph<double> g;
    const auto pl = g.leaf(pet);
    const auto tl = g.leaf(text);
    const auto loss = info_nce(g, g.unit_normalize_rows(pl), g.unit_normalize_rows(tl), cfg);
    g.backward(loss);
    for (int64_t i = 0; i < pet.numel(); ++i) {
      pet.v[i] -= 0.5 * g.grad(pl).v[i];
      text.v[i] -= 0.5 * g.grad(tl).v[i];
    }
  }
  const double after = loss_of(pet, text);
  CHECK(after < before);
}
