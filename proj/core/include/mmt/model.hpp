// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmt/caption_encoder.hpp"
#include "mmt/matching.hpp"
#include "mmt/video_encoder.hpp"

namespace mmt {

struct ModelConfig {
  std::vector<data::ExpertSpec> experts;
  double t_max = 30.0;
  std::size_t max_features_per_expert = 30;

  EncoderKind encoder = EncoderKind::mmt;
  TemporalMode temporal = TemporalMode::ordered;
  num::PoolMode agg_init = num::PoolMode::max;
  std::size_t model_dim = 512;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t intermediate_dim = 3072;
  double dropout = 0.1;
  bool clamp_timestamps = false;
  /// Seeds the fixed per-video bucket permutation of the shuffled mode.
  std::uint64_t shuffle_seed = 0;

  CaptionEmbedderKind caption_embedder = CaptionEmbedderKind::trainable_token;
  std::size_t vocab_size = 2;
  std::size_t caption_dim = 256;
  num::PoolMode caption_aggregator = num::PoolMode::max;
  std::size_t caption_positions = 0;

  bool normalize_video = true;

  EncoderKind effective_encoder() const { return layers == 0 ? EncoderKind::none : encoder; }
  /// Only the NONE encoder re-weights the mixture over present experts.
  bool renormalize_missing() const { return effective_encoder() == EncoderKind::none; }
  SimilarityOptions similarity_options() const { return {normalize_video, renormalize_missing()}; }
  VideoEncoderConfig video_config() const;
  CaptionEncoderConfig caption_config() const;
  void validate() const;
};

/// Both encoders over one parameter store. Video parameters are named
/// "video.*", caption parameters "caption.*".
class Model {
 public:
  /// Parameters are drawn from a generator seeded with `seed`.
  Model(ModelConfig cfg, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  num::ParameterStore& params() { return params_; }
  const num::ParameterStore& params() const { return params_; }
  const VideoEncoder& video_encoder() const { return video_; }
  CaptionEncoder& caption_encoder() { return caption_; }
  const CaptionEncoder& caption_encoder() const { return caption_; }

  /// psi is normalised in the graph when the config asks for it.
  VideoBatchOutput forward_videos(std::span<const data::VideoRecord* const> videos,
                                  const num::ForwardContext& ctx) const;
  CaptionBatchOutput forward_captions(std::span<const data::CaptionRecord* const> captions) const;
  num::Var scores(const VideoBatchOutput& videos, const CaptionBatchOutput& captions) const;

  /// Eval-mode representations, no graph. psi is left unnormalised; the
  /// similarity options carry the normalisation.
  std::vector<VideoRepresentation> represent_videos(std::span<const data::VideoRecord* const> videos) const;
  std::vector<CaptionRepresentation> represent_captions(std::span<const data::CaptionRecord* const> captions) const;

 private:
  ModelConfig cfg_;
  num::ParameterStore params_;
  VideoEncoder video_;
  CaptionEncoder caption_;
};

}  // namespace mmt
