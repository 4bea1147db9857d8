// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mmt/data/manifest.hpp"
#include "mmt/evaluation.hpp"
#include "mmt/matching.hpp"
#include "mmt/model.hpp"
#include "mmt/numerics/adam.hpp"
#include "mmt/numerics/random.hpp"

namespace mmt {

struct TrainConfig {
  // Optimisation.
  std::size_t batch_size = 32;
  double initial_lr = 5e-5;
  double decay_factor = 0.95;
  std::size_t decay_every_steps = 1000;
  std::size_t total_steps = 50000;
  double margin = 0.05;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// 0 disables clipping.
  double clip_grad_norm = 0.0;
  std::uint64_t seed = 0;

  // Model.
  EncoderKind encoder = EncoderKind::mmt;
  num::PoolMode agg_init = num::PoolMode::max;
  TemporalMode temporal = TemporalMode::ordered;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t model_dim = 512;
  std::size_t intermediate_dim = 3072;
  double dropout = 0.1;
  bool normalize_video = true;
  CaptionEmbedderKind caption_embedder = CaptionEmbedderKind::trainable_token;
  std::size_t caption_dim = 256;
  num::PoolMode caption_aggregator = num::PoolMode::max;
  /// Size of the learned token-position table; 0 keeps h order-blind.
  std::size_t caption_positions = 0;
  /// Directory of precomputed h(c) files for the precomputed embedder.
  std::string precomputed_captions;

  // Data.
  std::size_t max_features_per_expert = 30;
  std::size_t max_tokens = 30;
  bool remove_stop_words = false;
  bool clamp_timestamps = false;

  // Schedule of side work; 0 disables.
  std::size_t eval_every_steps = 0;
  std::size_t log_every_steps = 100;
  bool freeze_caption = false;
  bool freeze_video = false;

  /// Optimisation protocol and model size of the full-scale setting.
  static TrainConfig paper_defaults();
  /// Small model and short schedule for synthetic desk runs.
  static TrainConfig tiny();

  /// ConfigError naming the offending field.
  void validate() const;
  ModelConfig model_config(const data::DatasetManifest& manifest, std::size_t vocab_size) const;
  data::LoadOptions load_options() const;
};

/// initial_lr * decay_factor ^ floor(step / decay_every_steps)
double lr_at(std::size_t step, const TrainConfig& cfg);

struct LossRecord {
  std::size_t step = 0;  // optimisation step index (0 = first update)
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

struct ValidationRecord {
  std::size_t step = 0;  // updates applied before evaluation
  RetrievalMetrics t2v, v2t;
  double geometric_mean = 0;
};

struct TrainTrace {
  std::vector<LossRecord> losses;
  std::vector<ValidationRecord> validation;
};
std::string trace_to_json(const TrainTrace& trace);

/// Epoch-shuffled sampling without replacement; a batch never spans epochs.
struct SamplerState {
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
};

/// Eval-mode scores and metrics over the first caption of each video in a split.
struct SplitEvaluation {
  SimilarityMatrix scores;
  RetrievalMetrics t2v, v2t;
  double geometric_mean = 0;
};
SplitEvaluation evaluate_split(const Model& model, const data::Dataset& dataset, data::Split split,
                               const std::string& config_tag = {});
/// Eval-mode stores for the split's evaluation pairs.
std::pair<VideoStore, CaptionStore> precompute_split(const Model& model, const data::Dataset& dataset,
                                                     data::Split split);

struct Checkpoint;

class Trainer {
 public:
  /// The dataset must outlive the trainer.
  Trainer(TrainConfig cfg, const data::Dataset& dataset);

  const TrainConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  std::size_t step() const { return step_; }
  const TrainTrace& trace() const { return trace_; }
  const SamplerState& sampler() const { return sampler_; }
  const num::AdamState& optimizer() const { return adam_; }

  /// One update. Throws Error on a non-finite loss or gradient.
  LossRecord train_step();
  /// Trains until step() == min(until, total_steps); validates on schedule.
  void run(std::size_t until);
  void run() { run(cfg_.total_steps); }
  ValidationRecord validate(data::Split split = data::Split::val);

  /// Optional progress callback, called every log_every_steps.
  std::function<void(const LossRecord&)> on_log;

  Checkpoint checkpoint() const;
  /// Restores parameters, optimiser, sampler and generator state. The
  /// checkpoint's structural config must hash like this trainer's.
  void restore(const Checkpoint& ckpt);

 private:
  std::vector<data::Pair> next_batch();

  TrainConfig cfg_;
  const data::Dataset* dataset_;
  Model model_;
  num::AdamState adam_;
  num::Rng sampler_rng_;
  num::Rng dropout_rng_;
  SamplerState sampler_;
  std::vector<data::Pair> pairs_;
  std::size_t step_ = 0;
  TrainTrace trace_;
};

/// Seeds derived from the run seed for each random stream.
std::uint64_t init_seed(std::uint64_t run_seed);

/// Everything needed to resume training or evaluate.
struct Checkpoint {
  std::string train_config_json;
  ModelConfig model;
  std::vector<std::string> vocabulary;
  std::uint64_t config_hash = 0;
  std::size_t step = 0;
  std::string sampler_rng_state;
  std::string dropout_rng_state;
  SamplerState sampler;
  std::vector<std::pair<std::string, num::Tensor>> params;
  num::AdamState adam;
};

/// Structural hash: every config field that shapes parameters or encodings.
std::uint64_t config_hash(const ModelConfig& model);

/// Binary container (little-endian):
///   "MMTC" | version u32 | config hash u64 | train config JSON | model config
///   JSON | vocabulary | step | generator states | sampler | parameters (name,
///   rank, extents, f64 values) | Adam step and moments | FNV-1a checksum u64
/// Strings are u32 length + bytes. Corruption raises FormatError.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Serialised bytes, for bit-exact comparisons.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& origin);

/// Builds the model described by the checkpoint and loads its parameters.
Model model_from_checkpoint(const Checkpoint& ckpt);
/// IncompatibleCheckpointError when the manifest's experts or t_max differ
/// from the checkpoint's.
void check_compatible(const Checkpoint& ckpt, const data::DatasetManifest& manifest);

struct TrainResult {
  Checkpoint checkpoint;
  TrainTrace trace;
};
/// Trains from scratch for cfg.total_steps.
TrainResult train(const data::Dataset& dataset, const TrainConfig& cfg);

}  // namespace mmt
