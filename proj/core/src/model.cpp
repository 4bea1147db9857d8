// SPDX-License-Identifier: Apache-2.0
#include "mmt/model.hpp"

#include <algorithm>

#include "mmt/errors.hpp"
#include "mmt/numerics/parallel.hpp"
#include "mmt/numerics/random.hpp"

namespace mmt {
using num::Tensor;
using num::Var;

VideoEncoderConfig ModelConfig::video_config() const {
  VideoEncoderConfig v;
  v.experts = experts;
  v.model_dim = model_dim;
  v.layers = layers;
  v.heads = heads;
  v.intermediate_dim = intermediate_dim;
  v.t_max = t_max;
  v.max_features_per_expert = max_features_per_expert;
  v.agg_init = agg_init;
  v.kind = encoder;
  v.temporal = temporal;
  v.clamp_timestamps = clamp_timestamps;
  v.shuffle_seed = shuffle_seed;
  return v;
}

CaptionEncoderConfig ModelConfig::caption_config() const {
  CaptionEncoderConfig c;
  c.kind = caption_embedder;
  c.vocab_size = vocab_size;
  c.embedding_dim = caption_dim;
  c.aggregator = caption_aggregator;
  c.positions = caption_positions;
  c.model_dim = model_dim;
  c.num_experts = experts.size();
  return c;
}

void ModelConfig::validate() const {
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  video_config().validate();
  caption_config().validate();
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  num::Rng rng(seed);
  video_ = VideoEncoder(params_, "video", cfg_.video_config(), rng);
  caption_ = CaptionEncoder(params_, "caption", cfg_.caption_config(), rng);
}

VideoBatchOutput Model::forward_videos(std::span<const data::VideoRecord* const> videos,
                                       const num::ForwardContext& ctx) const {
  VideoBatchOutput out = video_.encode_batch(videos, ctx);
  if (cfg_.normalize_video) out.psi = num::l2_normalize_rows(out.psi, 1e-12);
  return out;
}

CaptionBatchOutput Model::forward_captions(std::span<const data::CaptionRecord* const> captions) const {
  return caption_.encode_batch(captions);
}

Var Model::scores(const VideoBatchOutput& videos, const CaptionBatchOutput& captions) const {
  return similarity_scores(videos.psi, captions.phi, captions.weights, videos.present, cfg_.experts.size(),
                           cfg_.renormalize_missing());
}

namespace {

// Fixed chunking keeps results independent of the worker count.
constexpr std::size_t kInferenceChunk = 64;

}  // namespace

std::vector<VideoRepresentation> Model::represent_videos(std::span<const data::VideoRecord* const> videos) const {
  std::vector<VideoRepresentation> out(videos.size());
  const std::size_t n_experts = cfg_.experts.size();
  const std::size_t d = cfg_.model_dim;
  const std::size_t chunks = (videos.size() + kInferenceChunk - 1) / kInferenceChunk;
  num::parallel_for(chunks, [&](std::size_t begin, std::size_t end) {
    num::NoGradGuard guard;
    const num::ForwardContext eval{};
    for (std::size_t c = begin; c < end; ++c) {
      const std::size_t lo = c * kInferenceChunk, hi = std::min(videos.size(), lo + kInferenceChunk);
      const VideoBatchOutput batch = video_.encode_batch(videos.subspan(lo, hi - lo), eval);
      const Tensor& psi = batch.psi.value();
      const std::size_t b_count = hi - lo;
      for (std::size_t b = 0; b < b_count; ++b) {
        VideoRepresentation rep;
        rep.psi = Tensor(num::Shape{n_experts, d});
        for (std::size_t n = 0; n < n_experts; ++n) {
          auto src = psi.row(n * b_count + b);
          std::copy(src.begin(), src.end(), rep.psi.row(n).begin());
        }
        rep.present.assign(batch.present.begin() + static_cast<std::ptrdiff_t>(b * n_experts),
                           batch.present.begin() + static_cast<std::ptrdiff_t>((b + 1) * n_experts));
        out[lo + b] = std::move(rep);
      }
    }
  });
  return out;
}

std::vector<CaptionRepresentation> Model::represent_captions(
    std::span<const data::CaptionRecord* const> captions) const {
  std::vector<CaptionRepresentation> out(captions.size());
  const std::size_t n_experts = cfg_.experts.size();
  const std::size_t d = cfg_.model_dim;
  const std::size_t chunks = (captions.size() + kInferenceChunk - 1) / kInferenceChunk;
  num::parallel_for(chunks, [&](std::size_t begin, std::size_t end) {
    num::NoGradGuard guard;
    for (std::size_t c = begin; c < end; ++c) {
      const std::size_t lo = c * kInferenceChunk, hi = std::min(captions.size(), lo + kInferenceChunk);
      const CaptionBatchOutput batch = caption_.encode_batch(captions.subspan(lo, hi - lo));
      const std::size_t b_count = hi - lo;
      for (std::size_t b = 0; b < b_count; ++b) {
        CaptionRepresentation rep;
        auto h = batch.h.value().row(b);
        rep.h = Tensor(num::Shape{h.size()}, std::vector<double>(h.begin(), h.end()));
        rep.phi = Tensor(num::Shape{n_experts, d});
        for (std::size_t n = 0; n < n_experts; ++n) {
          auto src = batch.phi.value().row(n * b_count + b);
          std::copy(src.begin(), src.end(), rep.phi.row(n).begin());
        }
        auto w = batch.weights.value().row(b);
        rep.weights.assign(w.begin(), w.end());
        out[lo + b] = std::move(rep);
      }
    }
  });
  return out;
}

}  // namespace mmt
