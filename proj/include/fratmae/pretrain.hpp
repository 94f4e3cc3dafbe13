#ifndef FRATMAE_PRETRAIN_HPP
#define FRATMAE_PRETRAIN_HPP

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fratmae/checkpoint.hpp"
#include "fratmae/dataset.hpp"
#include "fratmae/decoder.hpp"
#include "fratmae/masking.hpp"
#include "fratmae/optim.hpp"

namespace fratmae {

struct PretrainState {
  ExperimentConfig cfg;
  nn::ParamStore<float> params;
  nn::AdamW<float> opt;
  nn::Vocabulary vocab;
  Rng rng;
  int64_t global_step = 0;
  int epoch = 0;
  int64_t total_steps = 0;
};

// Allocates exactly the parameters the ablation trains: baseline_none gets
// encoders only, the MAE arms get self-only decoders, the ContextAlign arms
// add the text tower. Absent branches therefore see zero gradient trivially.
inline PretrainState init_pretrain_state(const ExperimentConfig& cfg,
                                         const std::vector<std::string>& prompts,
                                         int64_t total_steps) {
  cfg.validate();
  PretrainState st;
  st.cfg = cfg;
  st.rng = Rng(cfg.seed);
  st.total_steps = total_steps;
  st.opt.weight_decay = cfg.pretrain.weight_decay;

  const int pv = cfg.patch.token_volume();
  const int T = cfg.patch.token_count();
  nn::build_encoder_params(st.params, "enc_ct.", cfg.encoder, pv, T);
  nn::build_encoder_params(st.params, "enc_pet.", cfg.encoder, pv, T);
  const Ablation ab = cfg.pretrain.ablation;
  if (ablation_trains(ab)) {
    nn::DecoderConfig dec = cfg.decoder;
    dec.cross_attention = ablation_uses_cross(ab);
    nn::build_decoder_params(st.params, "dec_ct.", dec, cfg.encoder.embed_dim, pv, T);
    nn::build_decoder_params(st.params, "dec_pet.", dec, cfg.encoder.embed_dim, pv, T);
  }
  if (ablation_uses_align(ab)) {
    st.vocab = nn::Vocabulary::build(prompts);
    nn::build_text_params(st.params, cfg.text, st.vocab.size(), cfg.encoder.embed_dim);
  }
  nn::init_params(st.params, cfg.seed);
  return st;
}

struct StepLog {
  int64_t step = 0;
  int epoch = 0;
  Modality masked = Modality::PET;
  double loss_mse = 0.0;
  std::optional<double> loss_nce;
  double loss_total = 0.0;
  double lr = 0.0;
};

// One optimizer step over a batch. A single masking plan is shared across the
// batch by default (per_sample_plan switches that off). Exactly one of the
// two reconstruction directions runs per plan, selected by the sampled S.
inline StepLog pretrain_step(PretrainState& st, const std::vector<const LoadedCase*>& batch) {
  const ExperimentConfig& cfg = st.cfg;
  const Ablation ab = cfg.pretrain.ablation;
  if (!ablation_trains(ab)) throw ConfigError("pretrain_step: baseline_none does not train");
  if (batch.empty()) throw ConfigError("pretrain_step: empty batch");
  const int T = cfg.patch.token_count();

  nn::DecoderConfig dec = cfg.decoder;
  dec.cross_attention = ablation_uses_cross(ab);

  nn::Graph<float> g;
  nn::Binder<float> p(g, st.params);

  MaskingPlan shared_plan;
  if (!cfg.mask.per_sample_plan) shared_plan = sample_masking_plan(T, cfg.mask.ratio, st.rng);

  std::vector<nn::Graph<float>::Var> recon_losses, pet_cls_batch, text_cls_batch;
  Modality logged_masked = Modality::PET;
  for (size_t s = 0; s < batch.size(); ++s) {
    const LoadedCase& item = *batch[s];
    const MaskingPlan plan =
        cfg.mask.per_sample_plan ? sample_masking_plan(T, cfg.mask.ratio, st.rng) : shared_plan;
    if (s == 0) logged_masked = plan.masked_modality;

    const StackCrop crop = extract_stack(item.pair, cfg.patch, st.rng);
    const TokenGrid grid_ct = patchify(crop.ct, cfg.patch.token_size, crop.origin);
    const TokenGrid grid_pet = patchify(crop.pet, cfg.patch.token_size, crop.origin);

    const bool pet_masked = plan.masked_modality == Modality::PET;
    const TokenGrid& grid_masked = pet_masked ? grid_pet : grid_ct;
    const TokenGrid& grid_other = pet_masked ? grid_ct : grid_pet;
    const std::string enc_masked = pet_masked ? "enc_pet." : "enc_ct.";
    const std::string enc_other = pet_masked ? "enc_ct." : "enc_pet.";
    const std::string dec_prefix = pet_masked ? "dec_pet." : "dec_ct.";

    const VisibleTokens vis = apply_mask(grid_masked, plan, plan.masked_modality);
    const auto rep_masked = nn::encode(g, p, enc_masked, cfg.encoder, vis, grid_masked.grid);

    std::optional<nn::EncodedRep<float>> rep_other;
    if (dec.cross_attention) rep_other = nn::encode_full(g, p, enc_other, cfg.encoder, grid_other);

    const auto pred = nn::decode_cross(g, p, dec_prefix, dec, rep_masked,
                                       rep_other ? &*rep_other : nullptr, plan,
                                       cfg.patch.token_volume());
    recon_losses.push_back(nn::reconstruction_loss(g, pred, grid_masked, plan, dec.loss_support));

    if (ablation_uses_align(ab)) {
      // Z_PET^CLS for the alignment branch: reuse the full PET encoding when
      // available, re-encode unmasked otherwise (align_on_masked keeps the
      // masked CLS instead).
      nn::Graph<float>::Var pet_tokens_var = -1;
      if (pet_masked && cfg.pretrain.align_on_masked) {
        pet_tokens_var = rep_masked.tokens;
      } else if (!pet_masked && rep_other) {
        pet_tokens_var = rep_other->tokens;
      } else {
        const TokenGrid& pet_grid = pet_masked ? grid_masked : grid_other;
        pet_tokens_var = nn::encode_full(g, p, "enc_pet.", cfg.encoder, pet_grid).tokens;
      }
      nn::EncodedRep<float> pet_rep_for_align;
      pet_rep_for_align.tokens = pet_tokens_var;
      pet_cls_batch.push_back(nn::pet_align_embedding(g, p, pet_rep_for_align));
      text_cls_batch.push_back(nn::encode_text(
          g, p, cfg.text, st.vocab.encode(item.prompt, cfg.text.max_len), st.vocab.size()));
    }
  }

  auto mse = recon_losses[0];
  for (size_t i = 1; i < recon_losses.size(); ++i) mse = g.add(mse, recon_losses[i]);
  mse = g.scale(mse, 1.0 / static_cast<double>(recon_losses.size()));

  auto total = mse;
  std::optional<double> nce_value;
  if (ablation_uses_align(ab)) {
    const auto nce = nn::info_nce(g, g.concat_rows(pet_cls_batch), g.concat_rows(text_cls_batch),
                                  cfg.text, &p);
    nce_value = static_cast<double>(g.value(nce).v[0]);
    total = g.add(total, g.scale(nce, cfg.pretrain.lambda_align));
  }

  StepLog log;
  log.step = st.global_step;
  log.epoch = st.epoch;
  log.masked = logged_masked;
  log.loss_mse = static_cast<double>(g.value(mse).v[0]);
  log.loss_nce = nce_value;
  log.loss_total = static_cast<double>(g.value(total).v[0]);
  if (!std::isfinite(log.loss_total))
    throw NanLossError("non-finite loss at step " + std::to_string(st.global_step));

  g.backward(total);
  log.lr = nn::lr_schedule(st.global_step, st.total_steps, cfg.pretrain.lr_init, cfg.pretrain.lr_min);
  st.opt.step(st.params, p.bound, g, log.lr);
  ++st.global_step;
  return log;
}

inline Checkpoint make_checkpoint(const PretrainState& st) {
  Checkpoint ck;
  ck.ablation = to_string(st.cfg.pretrain.ablation);
  ck.epoch = st.epoch;
  ck.global_step = st.global_step;
  ck.total_steps = st.total_steps;
  ck.rng_state = st.rng.serialize();
  ck.config = st.cfg.to_json();
  ck.vocab_words = st.vocab.words;
  ck.adam_step_count = st.opt.step_count;
  ck.params = st.params;
  ck.adam_m = st.opt.m;
  ck.adam_v = st.opt.v;
  return ck;
}

inline void apply_checkpoint(PretrainState& st, const Checkpoint& ck) {
  if (ck.config.dump() != st.cfg.to_json().dump())
    throw ConfigError("resume: checkpoint config does not match the current config");
  st.params = ck.params;
  st.opt.m = ck.adam_m;
  st.opt.v = ck.adam_v;
  st.opt.step_count = ck.adam_step_count;
  st.rng.deserialize(ck.rng_state);
  st.epoch = ck.epoch;
  st.global_step = ck.global_step;
  st.vocab.words = ck.vocab_words;
  st.vocab.ids.clear();
  for (int i = 0; i < static_cast<int>(st.vocab.words.size()); ++i)
    st.vocab.ids[st.vocab.words[i]] = i;
}

inline nlohmann::json step_log_json(const StepLog& log, const std::string& config_hash) {
  nlohmann::json j;
  j["step"] = log.step;
  j["epoch"] = log.epoch;
  j["masked"] = log.masked == Modality::PET ? "PET" : "CT";
  j["loss_mse"] = log.loss_mse;
  if (log.loss_nce) j["loss_nce"] = *log.loss_nce;
  j["loss_total"] = log.loss_total;
  j["lr"] = log.lr;
  j["config_hash"] = config_hash;
  return j;
}

struct PretrainResult {
  std::string final_checkpoint;
  std::vector<StepLog> logs;
};

// Stage-1 driver: epoch shuffling, per-step logging, one checkpoint per
// epoch, all state (including the RNG) restorable from the last checkpoint.
inline PretrainResult run_pretraining(const ExperimentConfig& cfg, const std::string& manifest_path,
                                      const std::string& out_dir,
                                      const std::optional<std::string>& resume = std::nullopt) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(out_dir);
  const Dataset data = load_dataset(manifest_path, cfg.volume, cfg.volume.resize_to);
  const int n_train = static_cast<int>(data.train.size());

  std::vector<std::string> prompts;
  for (const LoadedCase& c : data.train) prompts.push_back(c.prompt);

  PretrainResult result;
  const std::string final_path = (fs::path(out_dir) / "ckpt_final.ckpt").string();
  result.final_checkpoint = final_path;

  if (!ablation_trains(cfg.pretrain.ablation) || cfg.pretrain.epochs == 0) {
    PretrainState st = init_pretrain_state(cfg, prompts, 0);
    write_checkpoint(make_checkpoint(st), final_path);
    std::ofstream((fs::path(out_dir) / "metrics.jsonl").string(), std::ios::trunc);
    return result;
  }

  if (n_train < cfg.pretrain.batch_size)
    throw ConfigError("pretrain: train split smaller than batch size");
  const int bpe = n_train / cfg.pretrain.batch_size;
  const int64_t total_steps = static_cast<int64_t>(cfg.pretrain.epochs) * bpe;

  PretrainState st = init_pretrain_state(cfg, prompts, total_steps);
  bool resumed = false;
  if (resume) {
    apply_checkpoint(st, read_checkpoint(*resume));
    resumed = true;
  }

  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, resumed ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics log: " + metrics_path);
  const std::string config_hash = cfg.hash();

  for (int epoch = st.epoch; epoch < cfg.pretrain.epochs; ++epoch) {
    std::vector<int> order(n_train);
    for (int i = 0; i < n_train; ++i) order[i] = i;
    st.rng.shuffle(order);
    for (int b = 0; b < bpe; ++b) {
      std::vector<const LoadedCase*> batch;
      for (int i = 0; i < cfg.pretrain.batch_size; ++i)
        batch.push_back(&data.train[order[b * cfg.pretrain.batch_size + i]]);
      const StepLog log = pretrain_step(st, batch);
      metrics << step_log_json(log, config_hash).dump() << "\n";
      result.logs.push_back(log);
    }
    st.epoch = epoch + 1;
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.ckpt", st.epoch);
    write_checkpoint(make_checkpoint(st), (fs::path(out_dir) / name).string());
  }
  metrics.flush();
  write_checkpoint(make_checkpoint(st), final_path);
  return result;
}

}  // namespace fratmae

#endif
