// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmt/data/manifest.hpp"
#include "mmt/numerics/attention.hpp"
#include "mmt/numerics/autograd.hpp"
#include "mmt/numerics/ops.hpp"

namespace mmt {

/// Bucket sentinels. Timed buckets are 1..D with D = ceil(t_max).
inline constexpr std::int64_t kBucketAgg = -1;
inline constexpr std::int64_t kBucketUnk = -2;

/// Number of one-second buckets for t_max.
std::size_t temporal_bucket_count(double t_max);
/// A time in [t, t+1) maps to bucket floor(t) + 1. Outside [0, t_max) throws
/// TimeRangeError unless `clamp`, which pins to the first or last bucket.
std::int64_t temporal_bucket(double t, double t_max, bool clamp = false);
/// Row of the temporal table for a bucket (timed, AGG or UNK).
std::size_t temporal_table_row(std::int64_t bucket, std::size_t bucket_count);

/// Pools K x d rows into one vector; K = 0 gives zeros for every mode.
num::Tensor init_agg(const num::Tensor& features, num::PoolMode mode);

enum class EncoderKind { mmt, none };
/// ordered: true buckets. shuffled: each expert's buckets permuted within the
/// video (fixed per video). unk: every feature token gets T_unk.
enum class TemporalMode { ordered, shuffled, unk };

std::string to_string(EncoderKind kind);
std::string to_string(TemporalMode mode);
std::string to_string(num::PoolMode mode);
EncoderKind parse_encoder_kind(std::string_view s);
TemporalMode parse_temporal_mode(std::string_view s);
num::PoolMode parse_pool_mode(std::string_view s);

struct VideoEncoderConfig {
  std::vector<data::ExpertSpec> experts;
  std::size_t model_dim = 512;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t intermediate_dim = 3072;
  double t_max = 30.0;
  std::size_t max_features_per_expert = 30;
  num::PoolMode agg_init = num::PoolMode::max;
  /// Layers == 0 is treated as the NONE encoder.
  EncoderKind kind = EncoderKind::mmt;
  TemporalMode temporal = TemporalMode::ordered;
  bool clamp_timestamps = false;
  std::uint64_t shuffle_seed = 0;

  EncoderKind effective_kind() const { return layers == 0 ? EncoderKind::none : kind; }
  void validate() const;
};

/// Token origin inside Omega(v).
struct TokenProvenance {
  std::size_t expert = 0;
  std::size_t slot = 0;  // 0 = aggregated token, k + 1 = feature k
  std::int64_t bucket = kBucketAgg;
};

/// Omega(v) = F(v) + E(v) + T(v) for one video, laid out as
/// [agg_1, feats_1..., agg_N, feats_N...] with each expert padded to the cap.
struct VideoInputSequence {
  num::Var tokens;  // [L, model_dim]
  std::vector<std::uint8_t> mask;
  std::vector<TokenProvenance> provenance;
  std::vector<std::uint8_t> present;  // per expert

  std::size_t length() const { return mask.size(); }
  std::size_t num_experts() const { return present.size(); }
};

/// Batched output: psi rows in expert-major order (row n * B + b).
struct VideoBatchOutput {
  num::Var psi;                       // [N * B, model_dim]
  std::vector<std::uint8_t> present;  // [B * N], video-major
  std::size_t batch = 0;
  std::size_t experts = 0;
};

/// Per-expert linear projections, expert and temporal embedding tables, and
/// the transformer.
class VideoEncoder {
 public:
  VideoEncoder() = default;
  VideoEncoder(num::ParameterStore& store, const std::string& prefix, VideoEncoderConfig cfg, num::Rng& rng);

  const VideoEncoderConfig& config() const { return cfg_; }
  std::size_t bucket_count() const { return buckets_; }

  /// Projected features of expert n: [K_n, model_dim].
  num::Var project(std::size_t expert, const data::ExpertFeatureSequence& seq) const;
  /// Buckets a video's features (per expert, per feature) honouring the
  /// temporal mode and the expert's temporal flag.
  std::vector<std::vector<std::int64_t>> feature_buckets(const data::VideoRecord& video) const;

  VideoInputSequence assemble_omega(const data::VideoRecord& video) const;
  /// Psi_agg of one video: [N, model_dim].
  num::Var encode_mmt(const VideoInputSequence& seq, const num::ForwardContext& ctx) const;
  num::Var encode_none(const data::VideoRecord& video) const;
  /// Dispatches on the configured kind; [N, model_dim].
  num::Var encode(const data::VideoRecord& video, const num::ForwardContext& ctx) const;
  /// Shares one transformer pass across the batch.
  VideoBatchOutput encode_batch(std::span<const data::VideoRecord* const> videos,
                                const num::ForwardContext& ctx) const;

 private:
  struct Canonical {
    std::vector<std::int64_t> order;  // source row per canonical position, -1 = padding
    std::vector<std::uint8_t> mask;
  };
  Canonical canonical_order(const VideoInputSequence& seq, std::size_t length) const;

  VideoEncoderConfig cfg_;
  std::size_t buckets_ = 0;
  std::vector<num::LinearParams> projections_;
  num::Var expert_table_;    // [N, d]
  num::Var temporal_table_;  // [D + 2, d]: T_1..T_D, T_agg, T_unk
  num::TransformerEncoder transformer_;
};

}  // namespace mmt
