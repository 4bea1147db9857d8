// SPDX-License-Identifier: Apache-2.0
#include "mmt/training.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"
#include "mmt/config.hpp"
#include "mmt/errors.hpp"

namespace mmt {
using nlohmann::ordered_json;

TrainConfig TrainConfig::paper_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::tiny() {
  TrainConfig c;
  c.model_dim = 32;
  c.layers = 1;
  c.heads = 2;
  c.intermediate_dim = 64;
  c.caption_dim = 32;
  c.initial_lr = 1e-3;
  c.total_steps = 2000;
  c.eval_every_steps = 0;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  if (batch_size < 2) fail("batch_size", "must be >= 2 so every pair has a negative");
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) fail("initial_lr", "must be finite and > 0");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) fail("decay_factor", "must lie in (0, 1]");
  if (decay_every_steps == 0) fail("decay_every_steps", "must be >= 1");
  if (!(margin >= 0.0) || !std::isfinite(margin)) fail("margin", "must be finite and >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1", "must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2", "must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) fail("adam_epsilon", "must be > 0");
  if (!(clip_grad_norm >= 0.0)) fail("clip_grad_norm", "must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must lie in [0, 1)");
  if (model_dim == 0) fail("model_dim", "must be >= 1");
  if (encoder == EncoderKind::mmt && layers > 0) {
    if (heads == 0 || model_dim % heads != 0) fail("heads", "must divide model_dim");
    if (intermediate_dim == 0) fail("intermediate_dim", "must be >= 1");
  }
  if (caption_dim == 0) fail("caption_dim", "must be >= 1");
  if (caption_aggregator == num::PoolMode::zero) fail("caption_aggregator", "must be max or mean");
  if (caption_embedder == CaptionEmbedderKind::precomputed && precomputed_captions.empty()) {
    fail("precomputed_captions", "required by the precomputed caption embedder");
  }
  if (max_features_per_expert == 0) fail("max_features_per_expert", "must be >= 1");
  if (max_tokens == 0) fail("max_tokens", "must be >= 1");
}

ModelConfig TrainConfig::model_config(const data::DatasetManifest& manifest, std::size_t vocab_size) const {
  ModelConfig m;
  m.experts = manifest.experts;
  m.t_max = manifest.t_max;
  m.max_features_per_expert = max_features_per_expert;
  m.encoder = encoder;
  m.temporal = temporal;
  m.agg_init = agg_init;
  m.model_dim = model_dim;
  m.layers = layers;
  m.heads = heads;
  m.intermediate_dim = intermediate_dim;
  m.dropout = dropout;
  m.clamp_timestamps = clamp_timestamps;
  m.shuffle_seed = num::derive_seed(seed, 4);
  m.caption_embedder = caption_embedder;
  m.vocab_size = vocab_size;
  m.caption_dim = caption_dim;
  m.caption_aggregator = caption_aggregator;
  m.caption_positions = caption_positions;
  m.normalize_video = normalize_video;
  return m;
}

data::LoadOptions TrainConfig::load_options() const {
  data::LoadOptions o;
  o.tokenizer.remove_stop_words = remove_stop_words;
  o.tokenizer.max_tokens = max_tokens;
  o.clamp_timestamps = clamp_timestamps;
  o.max_features_per_expert = max_features_per_expert;
  return o;
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  const auto k = static_cast<double>(step / cfg.decay_every_steps);
  return cfg.initial_lr * std::pow(cfg.decay_factor, k);
}

std::uint64_t init_seed(std::uint64_t run_seed) { return num::derive_seed(run_seed, 1); }

namespace {

ordered_json metrics_json(const RetrievalMetrics& m) {
  return {{"R@1", m.r1}, {"R@5", m.r5}, {"R@10", m.r10}, {"R@50", m.r50}, {"MdR", m.median_rank}, {"MnR", m.mean_rank}};
}

const TrainConfig& validated(const TrainConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

std::string trace_to_json(const TrainTrace& trace) {
  ordered_json doc;
  doc["losses"] = ordered_json::array();
  for (const auto& r : trace.losses) {
    doc["losses"].push_back({{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"grad_norm", r.grad_norm}});
  }
  doc["validation"] = ordered_json::array();
  for (const auto& v : trace.validation) {
    doc["validation"].push_back({{"step", v.step},
                                 {"t2v", metrics_json(v.t2v)},
                                 {"v2t", metrics_json(v.v2t)},
                                 {"geometric_mean", v.geometric_mean}});
  }
  return doc.dump(2) + "\n";
}

std::pair<VideoStore, CaptionStore> precompute_split(const Model& model, const data::Dataset& dataset,
                                                     data::Split split) {
  const auto pairs = dataset.evaluation_pairs(split);
  std::vector<const data::VideoRecord*> videos;
  std::vector<const data::CaptionRecord*> captions;
  std::vector<std::string> video_ids, caption_ids;
  for (const auto& p : pairs) {
    videos.push_back(&dataset.videos[p.video]);
    captions.push_back(&dataset.captions[p.caption]);
    video_ids.push_back(dataset.videos[p.video].video_id);
    caption_ids.push_back(dataset.captions[p.caption].caption_id);
  }
  const auto vreps = model.represent_videos(videos);
  const auto creps = model.represent_captions(captions);
  return {VideoStore::build(video_ids, vreps, model.config().similarity_options()),
          CaptionStore::build(caption_ids, creps)};
}

SplitEvaluation evaluate_split(const Model& model, const data::Dataset& dataset, data::Split split,
                               const std::string& config_tag) {
  if (dataset.evaluation_pairs(split).empty()) {
    throw ConfigError("split " + data::to_string(split) + " has no video-caption pairs to evaluate");
  }
  auto [vstore, cstore] = precompute_split(model, dataset, split);
  SplitEvaluation e;
  e.scores = similarity_matrix(vstore, cstore);
  e.t2v = metrics_from_ranks(ranks_from_matrix(e.scores.values, Direction::text_to_video), Direction::text_to_video,
                             config_tag);
  e.v2t = metrics_from_ranks(ranks_from_matrix(e.scores.values, Direction::video_to_text), Direction::video_to_text,
                             config_tag);
  e.geometric_mean = geometric_mean_recall(e.t2v);
  return e;
}

Trainer::Trainer(TrainConfig cfg, const data::Dataset& dataset)
    : cfg_(validated(cfg)),
      dataset_(&dataset),
      model_(cfg_.model_config(dataset.manifest, dataset.vocabulary.size()), init_seed(cfg_.seed)),
      sampler_rng_(num::derive_seed(cfg_.seed, 2)),
      dropout_rng_(num::derive_seed(cfg_.seed, 3)) {
  pairs_ = dataset.training_pairs(data::Split::train);
  if (pairs_.size() < cfg_.batch_size) {
    throw ConfigError("batch_size: training split has " + std::to_string(pairs_.size()) +
                      " pairs, fewer than the batch size " + std::to_string(cfg_.batch_size));
  }
  if (cfg_.caption_embedder == CaptionEmbedderKind::precomputed) {
    model_.caption_encoder().set_precomputed(
        PrecomputedCaptionVectors::load(cfg_.precomputed_captions, cfg_.caption_dim));
  }
  if (cfg_.freeze_caption) model_.params().set_frozen("caption.", true);
  if (cfg_.freeze_video) model_.params().set_frozen("video.", true);
  adam_ = num::AdamState::zeros_like(model_.params());
  sampler_.order.resize(pairs_.size());
  std::iota(sampler_.order.begin(), sampler_.order.end(), std::size_t{0});
  sampler_.cursor = sampler_.order.size();  // forces a shuffle on the first batch
}

std::vector<data::Pair> Trainer::next_batch() {
  if (sampler_.cursor + cfg_.batch_size > sampler_.order.size()) {
    std::iota(sampler_.order.begin(), sampler_.order.end(), std::size_t{0});
    sampler_rng_.shuffle(std::span<std::size_t>(sampler_.order));
    sampler_.cursor = 0;
    ++sampler_.epoch;
  }
  std::vector<data::Pair> batch;
  for (std::size_t i = 0; i < cfg_.batch_size; ++i) batch.push_back(pairs_[sampler_.order[sampler_.cursor + i]]);
  sampler_.cursor += cfg_.batch_size;
  return batch;
}

LossRecord Trainer::train_step() {
  const auto batch = next_batch();
  std::vector<const data::VideoRecord*> videos;
  std::vector<const data::CaptionRecord*> captions;
  for (const auto& p : batch) {
    videos.push_back(&dataset_->videos[p.video]);
    captions.push_back(&dataset_->captions[p.caption]);
  }
  const num::ForwardContext ctx{true, cfg_.dropout, &dropout_rng_};
  auto& params = model_.params();
  params.zero_grad();
  LossRecord rec;
  rec.step = step_;
  rec.lr = lr_at(step_, cfg_);
  {
    const VideoBatchOutput vo = model_.forward_videos(videos, ctx);
    const CaptionBatchOutput co = model_.forward_captions(captions);
    const num::Var loss = ranking_loss(model_.scores(vo, co), cfg_.margin);
    rec.loss = loss.value()[0];
    if (!std::isfinite(rec.loss)) throw Error("non-finite loss at step " + std::to_string(step_));
    if (loss.requires_grad()) num::backward(loss);
  }
  rec.grad_norm = num::gradient_norm(params);
  if (!std::isfinite(rec.grad_norm)) throw Error("non-finite gradient at step " + std::to_string(step_));
  if (cfg_.clip_grad_norm > 0.0) num::clip_gradients(params, cfg_.clip_grad_norm);
  num::adam_step(params, adam_, rec.lr, {cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_epsilon});
  ++step_;
  trace_.losses.push_back(rec);
  return rec;
}

void Trainer::run(std::size_t until) {
  until = std::min(until, cfg_.total_steps);
  while (step_ < until) {
    const LossRecord rec = train_step();
    if (on_log && cfg_.log_every_steps > 0 && step_ % cfg_.log_every_steps == 0) on_log(rec);
    if (cfg_.eval_every_steps > 0 && step_ % cfg_.eval_every_steps == 0 &&
        !dataset_->evaluation_pairs(data::Split::val).empty()) {
      validate(data::Split::val);
    }
  }
}

ValidationRecord Trainer::validate(data::Split split) {
  const SplitEvaluation e = evaluate_split(model_, *dataset_, split);
  ValidationRecord v{step_, e.t2v, e.v2t, e.geometric_mean};
  trace_.validation.push_back(v);
  return v;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.train_config_json = train_config_to_json(cfg_);
  c.model = model_.config();
  c.vocabulary = dataset_->vocabulary.words();
  c.config_hash = config_hash(c.model);
  c.step = step_;
  c.sampler_rng_state = sampler_rng_.state();
  c.dropout_rng_state = dropout_rng_.state();
  c.sampler = sampler_;
  for (const auto& p : model_.params()) c.params.emplace_back(p.name, p.value());
  c.adam = adam_;
  return c;
}

namespace {

void load_params(num::ParameterStore& store, const Checkpoint& ckpt) {
  if (ckpt.params.size() != store.size()) {
    throw IncompatibleCheckpointError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                                      " parameters, model has " + std::to_string(store.size()));
  }
  for (const auto& [name, value] : ckpt.params) {
    if (!store.contains(name)) throw IncompatibleCheckpointError("checkpoint parameter " + name + " not in model");
    auto& p = store.find(name);
    if (!p.value().same_shape(value)) {
      throw IncompatibleCheckpointError("parameter " + name + " has shape " + num::shape_string(value.shape()) +
                                        ", model expects " + num::shape_string(p.value().shape()));
    }
    p.value() = value;
  }
}

}  // namespace

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.config_hash != config_hash(model_.config())) {
    throw IncompatibleCheckpointError("checkpoint config hash does not match the training config");
  }
  if (ckpt.vocabulary != dataset_->vocabulary.words()) {
    throw IncompatibleCheckpointError("checkpoint vocabulary differs from the dataset's");
  }
  load_params(model_.params(), ckpt);
  if (ckpt.adam.first_moment.size() != model_.params().size()) {
    throw IncompatibleCheckpointError("optimizer state does not match the parameter count");
  }
  adam_ = ckpt.adam;
  if (ckpt.sampler.order.size() != pairs_.size()) {
    throw IncompatibleCheckpointError("sampler state does not match the training split size");
  }
  sampler_ = ckpt.sampler;
  sampler_rng_.set_state(ckpt.sampler_rng_state);
  dropout_rng_.set_state(ckpt.dropout_rng_state);
  step_ = ckpt.step;
  trace_ = {};
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m(ckpt.model, 0);
  load_params(m.params(), ckpt);
  if (ckpt.model.caption_embedder == CaptionEmbedderKind::precomputed) {
    const TrainConfig cfg = train_config_from_json(ckpt.train_config_json);
    m.caption_encoder().set_precomputed(PrecomputedCaptionVectors::load(cfg.precomputed_captions, cfg.caption_dim));
  }
  return m;
}

void check_compatible(const Checkpoint& ckpt, const data::DatasetManifest& manifest) {
  if (ckpt.model.experts != manifest.experts) {
    throw IncompatibleCheckpointError("checkpoint experts differ from the manifest's experts");
  }
  if (ckpt.model.t_max != manifest.t_max) {
    throw IncompatibleCheckpointError("checkpoint t_max " + std::to_string(ckpt.model.t_max) +
                                      " differs from the manifest's " + std::to_string(manifest.t_max));
  }
}

TrainResult train(const data::Dataset& dataset, const TrainConfig& cfg) {
  Trainer t(cfg, dataset);
  t.run();
  return {t.checkpoint(), t.trace()};
}

}  // namespace mmt
