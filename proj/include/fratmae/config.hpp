#ifndef FRATMAE_CONFIG_HPP
#define FRATMAE_CONFIG_HPP

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "fratmae/decoder.hpp"
#include "fratmae/encoder.hpp"
#include "fratmae/patches.hpp"
#include "fratmae/rng.hpp"
#include "fratmae/text_align.hpp"

namespace fratmae {

// Pre-training ablation arms.
enum class Ablation { BaselineNone, Mae, MaeContextAlign, FratmaeNoContextAlign, Fratmae };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::BaselineNone: return "baseline_none";
    case Ablation::Mae: return "mae";
    case Ablation::MaeContextAlign: return "mae_contextalign";
    case Ablation::FratmaeNoContextAlign: return "fratmae_no_contextalign";
    default: return "fratmae";
  }
}
inline Ablation ablation_from_string(const std::string& s) {
  if (s == "baseline_none") return Ablation::BaselineNone;
  if (s == "mae") return Ablation::Mae;
  if (s == "mae_contextalign") return Ablation::MaeContextAlign;
  if (s == "fratmae_no_contextalign") return Ablation::FratmaeNoContextAlign;
  if (s == "fratmae") return Ablation::Fratmae;
  throw ConfigError("unknown ablation: " + s);
}

inline bool ablation_uses_cross(Ablation a) {
  return a == Ablation::FratmaeNoContextAlign || a == Ablation::Fratmae;
}
inline bool ablation_uses_align(Ablation a) {
  return a == Ablation::MaeContextAlign || a == Ablation::Fratmae;
}
inline bool ablation_trains(Ablation a) { return a != Ablation::BaselineNone; }

namespace detail {

// Tracks consumed keys so unknown config keys are rejected with their path.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    consumed_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for " + path_ + key + ": " + e.what());
    }
  }

  Grid3 get_grid(const std::string& key, Grid3 fallback) {
    const auto v = get<std::vector<int>>(key, {fallback[0], fallback[1], fallback[2]});
    if (v.size() != 3) throw ConfigError("config: " + path_ + key + " must have 3 entries");
    return {v[0], v[1], v[2]};
  }

  std::pair<double, double> get_window(const std::string& key, std::pair<double, double> fb) {
    const auto v = get<std::vector<double>>(key, {fb.first, fb.second});
    if (v.size() != 2) throw ConfigError("config: " + path_ + key + " must have 2 entries");
    return {v[0], v[1]};
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json* section(const std::string& key) {
    consumed_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!consumed_.count(it.key()))
        throw ConfigError("config: unknown key " + path_ + it.key());
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> consumed_;
};

}  // namespace detail

inline constexpr int kConfigSchemaVersion = 1;

struct SynthConfig {
  int n_cases = 16;
  double train_split = 0.8;
  Grid3 grid{64, 64, 64};
  int n_organs = 4;
  int max_lesions = 3;
  double uptake_correlation = 0.9;
  double noise_sigma = 0.2;
};

struct VolumeConfig {
  std::pair<double, double> ct_window{-1024.0, 1024.0};  // HU-like; assumption, see README
  std::pair<double, double> pet_window{0.0, 15.0};       // SUV-like; assumption
  Grid3 resize_to{64, 64, 64};
};

struct MaskConfig {
  double ratio = 0.5;
  bool per_sample_plan = false;
};

struct PretrainConfig {
  Ablation ablation = Ablation::Fratmae;
  int epochs = 30;
  int batch_size = 4;
  double lr_init = 1e-4;
  double lr_min = 0.0;
  double weight_decay = 0.01;
  double lambda_align = 1.0;
  bool align_on_masked = false;  // default: re-encode PET unmasked for the alignment branch
};

struct FinetuneConfig {
  int seg_steps = 300;
  int seg_batch = 2;
  double seg_lr = 1e-4;
  int stage_steps = 500;
  int stage_batch = 4;
  double stage_lr = 5e-5;
  double train_fraction = 1.0;
  bool freeze_encoders = false;
  int mlp_hidden = 64;
  std::string feature_mode = "cls_plus_pooled";  // or "cls_only"
  double weight_decay = 0.01;
};

struct EvalConfig {
  int n_bootstrap = 1000;
  double ci_level = 0.95;
};

struct ExperimentConfig {
  uint64_t seed = 0;
  SynthConfig synth;
  VolumeConfig volume;
  PatchSpec patch;
  MaskConfig mask;
  nn::EncoderConfig encoder;
  nn::DecoderConfig decoder;
  nn::TextConfig text;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  EvalConfig eval;

  void validate() const {
    patch.validate();
    encoder.validate();
    decoder.validate();
    text.validate();
    if (!(mask.ratio > 0.0 && mask.ratio < 1.0)) throw ConfigError("config: mask.ratio in (0,1)");
    if (synth.n_cases < 1 || synth.train_split <= 0.0 || synth.train_split > 1.0)
      throw ConfigError("config: invalid synth section");
    if (pretrain.epochs < 0 || pretrain.batch_size < 1)
      throw ConfigError("config: invalid pretrain section");
    if (finetune.train_fraction <= 0.0 || finetune.train_fraction > 1.0)
      throw ConfigError("config: finetune.train_fraction in (0,1]");
    if (finetune.feature_mode != "cls_plus_pooled" && finetune.feature_mode != "cls_only")
      throw ConfigError("config: finetune.feature_mode must be cls_plus_pooled or cls_only");
    if (!(volume.ct_window.first < volume.ct_window.second) ||
        !(volume.pet_window.first < volume.pet_window.second))
      throw ConfigError("config: invalid normalization windows");
    if (eval.n_bootstrap < 1 || eval.ci_level <= 0.0 || eval.ci_level >= 1.0)
      throw ConfigError("config: invalid eval section");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["seed"] = seed;
    j["synth"] = {{"n_cases", synth.n_cases},
                  {"train_split", synth.train_split},
                  {"grid", {synth.grid[0], synth.grid[1], synth.grid[2]}},
                  {"n_organs", synth.n_organs},
                  {"max_lesions", synth.max_lesions},
                  {"uptake_correlation", synth.uptake_correlation},
                  {"noise_sigma", synth.noise_sigma}};
    j["volume"] = {{"ct_window", {volume.ct_window.first, volume.ct_window.second}},
                   {"pet_window", {volume.pet_window.first, volume.pet_window.second}},
                   {"resize_to", {volume.resize_to[0], volume.resize_to[1], volume.resize_to[2]}}};
    j["patch"] = {{"dims", {patch.patch_dims[0], patch.patch_dims[1], patch.patch_dims[2]}},
                  {"token", {patch.token_size[0], patch.token_size[1], patch.token_size[2]}},
                  {"k", patch.k},
                  {"mode", to_string(patch.mode)}};
    j["mask"] = {{"ratio", mask.ratio}, {"per_sample_plan", mask.per_sample_plan}};
    j["encoder"] = {{"embed_dim", encoder.embed_dim},
                    {"depth", encoder.depth},
                    {"heads", encoder.heads},
                    {"mlp_ratio", encoder.mlp_ratio},
                    {"taps", {encoder.taps[0], encoder.taps[1], encoder.taps[2], encoder.taps[3]}}};
    j["decoder"] = {{"embed_dim", decoder.embed_dim},
                    {"depth", decoder.depth},
                    {"heads", decoder.heads},
                    {"mlp_ratio", decoder.mlp_ratio},
                    {"self_attention", decoder.self_attention},
                    {"loss_support", nn::to_string(decoder.loss_support)}};
    j["text"] = {{"embed_dim", text.embed_dim},
                 {"depth", text.depth},
                 {"heads", text.heads},
                 {"mlp_ratio", text.mlp_ratio},
                 {"max_len", text.max_len},
                 {"align_dim", text.align_dim},
                 {"temperature", text.temperature},
                 {"learnable_temperature", text.learnable_temperature},
                 {"symmetric", text.symmetric}};
    j["pretrain"] = {{"ablation", to_string(pretrain.ablation)},
                     {"epochs", pretrain.epochs},
                     {"batch_size", pretrain.batch_size},
                     {"lr_init", pretrain.lr_init},
                     {"lr_min", pretrain.lr_min},
                     {"weight_decay", pretrain.weight_decay},
                     {"lambda_align", pretrain.lambda_align},
                     {"align_on_masked", pretrain.align_on_masked}};
    j["finetune"] = {{"seg_steps", finetune.seg_steps},
                     {"seg_batch", finetune.seg_batch},
                     {"seg_lr", finetune.seg_lr},
                     {"stage_steps", finetune.stage_steps},
                     {"stage_batch", finetune.stage_batch},
                     {"stage_lr", finetune.stage_lr},
                     {"train_fraction", finetune.train_fraction},
                     {"freeze_encoders", finetune.freeze_encoders},
                     {"mlp_hidden", finetune.mlp_hidden},
                     {"feature_mode", finetune.feature_mode},
                     {"weight_decay", finetune.weight_decay}};
    j["eval"] = {{"n_bootstrap", eval.n_bootstrap}, {"ci_level", eval.ci_level}};
    return j;
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json().dump())));
    return std::string(buf);
  }
};

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::JsonReader top(j, "");
  const int version = top.get<int>("schema_version", kConfigSchemaVersion);
  if (version != kConfigSchemaVersion)
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));
  cfg.seed = top.get<uint64_t>("seed", cfg.seed);

  if (const auto* s = top.section("synth")) {
    detail::JsonReader r(*s, "synth.");
    cfg.synth.n_cases = r.get<int>("n_cases", cfg.synth.n_cases);
    cfg.synth.train_split = r.get<double>("train_split", cfg.synth.train_split);
    cfg.synth.grid = r.get_grid("grid", cfg.synth.grid);
    cfg.synth.n_organs = r.get<int>("n_organs", cfg.synth.n_organs);
    cfg.synth.max_lesions = r.get<int>("max_lesions", cfg.synth.max_lesions);
    cfg.synth.uptake_correlation = r.get<double>("uptake_correlation", cfg.synth.uptake_correlation);
    cfg.synth.noise_sigma = r.get<double>("noise_sigma", cfg.synth.noise_sigma);
    r.finish();
  }
  if (const auto* s = top.section("volume")) {
    detail::JsonReader r(*s, "volume.");
    cfg.volume.ct_window = r.get_window("ct_window", cfg.volume.ct_window);
    cfg.volume.pet_window = r.get_window("pet_window", cfg.volume.pet_window);
    cfg.volume.resize_to = r.get_grid("resize_to", cfg.volume.resize_to);
    r.finish();
  }
  if (const auto* s = top.section("patch")) {
    detail::JsonReader r(*s, "patch.");
    cfg.patch.patch_dims = r.get_grid("dims", cfg.patch.patch_dims);
    cfg.patch.token_size = r.get_grid("token", cfg.patch.token_size);
    cfg.patch.k = r.get<int>("k", cfg.patch.k);
    cfg.patch.mode = stack_mode_from_string(r.get<std::string>("mode", to_string(cfg.patch.mode)));
    r.finish();
  }
  if (const auto* s = top.section("mask")) {
    detail::JsonReader r(*s, "mask.");
    cfg.mask.ratio = r.get<double>("ratio", cfg.mask.ratio);
    cfg.mask.per_sample_plan = r.get<bool>("per_sample_plan", cfg.mask.per_sample_plan);
    r.finish();
  }
  if (const auto* s = top.section("encoder")) {
    detail::JsonReader r(*s, "encoder.");
    cfg.encoder.embed_dim = r.get<int>("embed_dim", cfg.encoder.embed_dim);
    cfg.encoder.depth = r.get<int>("depth", cfg.encoder.depth);
    cfg.encoder.heads = r.get<int>("heads", cfg.encoder.heads);
    cfg.encoder.mlp_ratio = r.get<double>("mlp_ratio", cfg.encoder.mlp_ratio);
    const auto taps = r.get<std::vector<int>>(
        "taps", {cfg.encoder.taps[0], cfg.encoder.taps[1], cfg.encoder.taps[2], cfg.encoder.taps[3]});
    if (taps.size() != 4) throw ConfigError("config: encoder.taps must have 4 entries");
    for (int i = 0; i < 4; ++i) cfg.encoder.taps[i] = taps[i];
    r.finish();
  }
  if (const auto* s = top.section("decoder")) {
    detail::JsonReader r(*s, "decoder.");
    cfg.decoder.embed_dim = r.get<int>("embed_dim", cfg.decoder.embed_dim);
    cfg.decoder.depth = r.get<int>("depth", cfg.decoder.depth);
    cfg.decoder.heads = r.get<int>("heads", cfg.decoder.heads);
    cfg.decoder.mlp_ratio = r.get<double>("mlp_ratio", cfg.decoder.mlp_ratio);
    cfg.decoder.self_attention = r.get<bool>("self_attention", cfg.decoder.self_attention);
    cfg.decoder.loss_support = nn::loss_support_from_string(
        r.get<std::string>("loss_support", nn::to_string(cfg.decoder.loss_support)));
    r.finish();
  }
  if (const auto* s = top.section("text")) {
    detail::JsonReader r(*s, "text.");
    cfg.text.embed_dim = r.get<int>("embed_dim", cfg.text.embed_dim);
    cfg.text.depth = r.get<int>("depth", cfg.text.depth);
    cfg.text.heads = r.get<int>("heads", cfg.text.heads);
    cfg.text.mlp_ratio = r.get<double>("mlp_ratio", cfg.text.mlp_ratio);
    cfg.text.max_len = r.get<int>("max_len", cfg.text.max_len);
    cfg.text.align_dim = r.get<int>("align_dim", cfg.text.align_dim);
    cfg.text.temperature = r.get<double>("temperature", cfg.text.temperature);
    cfg.text.learnable_temperature =
        r.get<bool>("learnable_temperature", cfg.text.learnable_temperature);
    cfg.text.symmetric = r.get<bool>("symmetric", cfg.text.symmetric);
    r.finish();
  }
  if (const auto* s = top.section("pretrain")) {
    detail::JsonReader r(*s, "pretrain.");
    cfg.pretrain.ablation =
        ablation_from_string(r.get<std::string>("ablation", to_string(cfg.pretrain.ablation)));
    cfg.pretrain.epochs = r.get<int>("epochs", cfg.pretrain.epochs);
    cfg.pretrain.batch_size = r.get<int>("batch_size", cfg.pretrain.batch_size);
    cfg.pretrain.lr_init = r.get<double>("lr_init", cfg.pretrain.lr_init);
    cfg.pretrain.lr_min = r.get<double>("lr_min", cfg.pretrain.lr_min);
    cfg.pretrain.weight_decay = r.get<double>("weight_decay", cfg.pretrain.weight_decay);
    cfg.pretrain.lambda_align = r.get<double>("lambda_align", cfg.pretrain.lambda_align);
    cfg.pretrain.align_on_masked = r.get<bool>("align_on_masked", cfg.pretrain.align_on_masked);
    r.finish();
  }
  if (const auto* s = top.section("finetune")) {
    detail::JsonReader r(*s, "finetune.");
    cfg.finetune.seg_steps = r.get<int>("seg_steps", cfg.finetune.seg_steps);
    cfg.finetune.seg_batch = r.get<int>("seg_batch", cfg.finetune.seg_batch);
    cfg.finetune.seg_lr = r.get<double>("seg_lr", cfg.finetune.seg_lr);
    cfg.finetune.stage_steps = r.get<int>("stage_steps", cfg.finetune.stage_steps);
    cfg.finetune.stage_batch = r.get<int>("stage_batch", cfg.finetune.stage_batch);
    cfg.finetune.stage_lr = r.get<double>("stage_lr", cfg.finetune.stage_lr);
    cfg.finetune.train_fraction = r.get<double>("train_fraction", cfg.finetune.train_fraction);
    cfg.finetune.freeze_encoders = r.get<bool>("freeze_encoders", cfg.finetune.freeze_encoders);
    cfg.finetune.mlp_hidden = r.get<int>("mlp_hidden", cfg.finetune.mlp_hidden);
    cfg.finetune.feature_mode = r.get<std::string>("feature_mode", cfg.finetune.feature_mode);
    cfg.finetune.weight_decay = r.get<double>("weight_decay", cfg.finetune.weight_decay);
    r.finish();
  }
  if (const auto* s = top.section("eval")) {
    detail::JsonReader r(*s, "eval.");
    cfg.eval.n_bootstrap = r.get<int>("n_bootstrap", cfg.eval.n_bootstrap);
    cfg.eval.ci_level = r.get<double>("ci_level", cfg.eval.ci_level);
    r.finish();
  }
  top.finish();
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

}  // namespace fratmae

#endif
