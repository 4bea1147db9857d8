// SPDX-License-Identifier: Apache-2.0
#include "mmt/video_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmt/errors.hpp"
#include "mmt/numerics/random.hpp"

namespace mmt {
using num::PoolMode;
using num::Shape;
using num::Tensor;
using num::Var;

std::size_t temporal_bucket_count(double t_max) {
  if (!(t_max > 0.0) || !std::isfinite(t_max)) throw ConfigError("t_max must be finite and > 0");
  return static_cast<std::size_t>(std::ceil(t_max));
}

std::int64_t temporal_bucket(double t, double t_max, bool clamp) {
  const auto d = static_cast<std::int64_t>(temporal_bucket_count(t_max));
  if (!std::isfinite(t)) throw TimeRangeError("timestamp is not finite");
  if (t < 0.0) {
    if (clamp) return 1;
    throw TimeRangeError("timestamp " + std::to_string(t) + " is negative");
  }
  if (t >= t_max) {
    if (clamp) return d;
    throw TimeRangeError("timestamp " + std::to_string(t) + " is not below t_max " + std::to_string(t_max));
  }
  return std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(t)) + 1, d);
}

std::size_t temporal_table_row(std::int64_t bucket, std::size_t bucket_count) {
  if (bucket == kBucketAgg) return bucket_count;
  if (bucket == kBucketUnk) return bucket_count + 1;
  if (bucket < 1 || static_cast<std::size_t>(bucket) > bucket_count) {
    throw ContractError("temporal bucket " + std::to_string(bucket) + " outside 1.." + std::to_string(bucket_count));
  }
  return static_cast<std::size_t>(bucket - 1);
}

Tensor init_agg(const Tensor& features, PoolMode mode) {
  const std::size_t d = features.cols();
  Tensor out(Shape{d});
  const std::size_t k = features.rank() == 0 ? 0 : features.rows();
  if (k == 0 || mode == PoolMode::zero) return out;
  if (mode == PoolMode::max) {
    for (std::size_t c = 0; c < d; ++c) out[c] = features.at(0, c);
    for (std::size_t r = 1; r < k; ++r) {
      for (std::size_t c = 0; c < d; ++c) out[c] = std::max(out[c], features.at(r, c));
    }
  } else {
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < d; ++c) out[c] += features.at(r, c);
    }
    for (std::size_t c = 0; c < d; ++c) out[c] /= static_cast<double>(k);
  }
  return out;
}

std::string to_string(EncoderKind kind) { return kind == EncoderKind::mmt ? "mmt" : "none"; }

std::string to_string(TemporalMode mode) {
  switch (mode) {
    case TemporalMode::ordered: return "ordered";
    case TemporalMode::shuffled: return "shuffled";
    case TemporalMode::unk: return "unk";
  }
  return "?";
}

std::string to_string(PoolMode mode) {
  switch (mode) {
    case PoolMode::zero: return "zero";
    case PoolMode::mean: return "mean";
    case PoolMode::max: return "max";
  }
  return "?";
}

EncoderKind parse_encoder_kind(std::string_view s) {
  if (s == "mmt") return EncoderKind::mmt;
  if (s == "none") return EncoderKind::none;
  throw ConfigError("encoder must be mmt or none, got '" + std::string(s) + "'");
}

TemporalMode parse_temporal_mode(std::string_view s) {
  if (s == "ordered") return TemporalMode::ordered;
  if (s == "shuffled") return TemporalMode::shuffled;
  if (s == "unk") return TemporalMode::unk;
  throw ConfigError("temporal mode must be ordered, shuffled or unk, got '" + std::string(s) + "'");
}

PoolMode parse_pool_mode(std::string_view s) {
  if (s == "zero") return PoolMode::zero;
  if (s == "mean") return PoolMode::mean;
  if (s == "max") return PoolMode::max;
  throw ConfigError("agg init must be zero, mean or max, got '" + std::string(s) + "'");
}

void VideoEncoderConfig::validate() const {
  if (experts.empty()) throw ConfigError("video encoder: no experts");
  if (model_dim == 0) throw ConfigError("video encoder: model_dim must be >= 1");
  if (max_features_per_expert == 0) throw ConfigError("video encoder: max_features_per_expert must be >= 1");
  temporal_bucket_count(t_max);
  if (effective_kind() == EncoderKind::mmt) {
    num::AttentionConfig{model_dim, heads}.validate();
    if (intermediate_dim == 0) throw ConfigError("video encoder: intermediate_dim must be >= 1");
  }
}

VideoEncoder::VideoEncoder(num::ParameterStore& store, const std::string& prefix, VideoEncoderConfig cfg,
                           num::Rng& rng)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  buckets_ = temporal_bucket_count(cfg_.t_max);
  for (const auto& e : cfg_.experts) {
    projections_.push_back(num::make_linear(store, prefix + ".projection." + e.name, e.native_dim, cfg_.model_dim, rng));
  }
  if (cfg_.effective_kind() == EncoderKind::none) return;
  auto normal_table = [&](std::size_t rows) {
    Tensor t(Shape{rows, cfg_.model_dim});
    for (auto& x : t.values()) x = rng.normal(0.0, 0.02);
    return t;
  };
  expert_table_ = store.add(prefix + ".expert_embedding", normal_table(cfg_.experts.size()));
  temporal_table_ = store.add(prefix + ".temporal_embedding", normal_table(buckets_ + 2));
  transformer_ = num::TransformerEncoder(store, prefix + ".transformer", {cfg_.model_dim, cfg_.heads}, cfg_.layers,
                                         cfg_.intermediate_dim, rng);
}

Var VideoEncoder::project(std::size_t expert, const data::ExpertFeatureSequence& seq) const {
  const std::size_t k = std::min(seq.count(), cfg_.max_features_per_expert);
  const std::size_t dn = cfg_.experts.at(expert).native_dim;
  if (k > 0 && seq.features.cols() != dn) {
    throw DimensionError("expert " + cfg_.experts[expert].name + ": feature dim " +
                         std::to_string(seq.features.cols()) + " != " + std::to_string(dn));
  }
  Tensor x(Shape{k, dn});
  std::copy_n(seq.features.data(), k * dn, x.data());
  if (k == 0) return Var(Tensor(Shape{0, cfg_.model_dim}));
  return num::apply(projections_[expert], Var(std::move(x)));
}

std::vector<std::vector<std::int64_t>> VideoEncoder::feature_buckets(const data::VideoRecord& video) const {
  const std::size_t n_experts = cfg_.experts.size();
  if (video.experts.size() != n_experts) {
    throw DimensionError("video " + video.video_id + " has " + std::to_string(video.experts.size()) +
                         " expert sequences, encoder expects " + std::to_string(n_experts));
  }
  std::vector<std::vector<std::int64_t>> out(n_experts);
  for (std::size_t n = 0; n < n_experts; ++n) {
    const auto& seq = video.experts[n];
    const std::size_t k = seq.present ? std::min(seq.count(), cfg_.max_features_per_expert) : 0;
    auto& b = out[n];
    const bool timed = cfg_.experts[n].temporal && cfg_.temporal != TemporalMode::unk;
    for (std::size_t i = 0; i < k; ++i) {
      b.push_back(timed ? temporal_bucket(seq.timestamps[i], cfg_.t_max, cfg_.clamp_timestamps) : kBucketUnk);
    }
    if (timed && cfg_.temporal == TemporalMode::shuffled && k > 1) {
      num::Rng rng(num::derive_seed(cfg_.shuffle_seed, num::fnv1a(video.video_id + "/" + cfg_.experts[n].name)));
      rng.shuffle(std::span<std::int64_t>(b));
    }
  }
  return out;
}

VideoInputSequence VideoEncoder::assemble_omega(const data::VideoRecord& video) const {
  if (cfg_.effective_kind() == EncoderKind::none) {
    throw ContractError("assemble_omega needs the transformer encoder's embedding tables");
  }
  const auto buckets = feature_buckets(video);
  const std::size_t n_experts = cfg_.experts.size();
  const std::size_t cap = cfg_.max_features_per_expert;
  const std::size_t d = cfg_.model_dim;

  VideoInputSequence seq;
  std::vector<Var> parts;
  std::vector<std::int64_t> expert_rows, time_rows;
  for (std::size_t n = 0; n < n_experts; ++n) {
    const std::size_t k = buckets[n].size();
    seq.present.push_back(k > 0 ? 1 : 0);
    Var proj = project(n, video.experts[n]);
    const num::Segment all{0, k};
    parts.push_back(num::segment_pool(proj, std::span(&all, 1), cfg_.agg_init));
    if (k > 0) parts.push_back(proj);
    if (k < cap) parts.push_back(Var(Tensor(Shape{cap - k, d})));

    seq.mask.push_back(1);
    seq.provenance.push_back({n, 0, kBucketAgg});
    expert_rows.push_back(static_cast<std::int64_t>(n));
    time_rows.push_back(static_cast<std::int64_t>(buckets_));
    for (std::size_t i = 0; i < cap; ++i) {
      const bool valid = i < k;
      seq.mask.push_back(valid ? 1 : 0);
      seq.provenance.push_back({n, i + 1, valid ? buckets[n][i] : kBucketUnk});
      expert_rows.push_back(valid ? static_cast<std::int64_t>(n) : -1);
      time_rows.push_back(valid ? static_cast<std::int64_t>(temporal_table_row(buckets[n][i], buckets_)) : -1);
    }
  }
  Var features = num::concat_rows(parts);
  seq.tokens = num::add(num::add(features, num::gather_rows(expert_table_, expert_rows)),
                        num::gather_rows(temporal_table_, time_rows));
  return seq;
}

VideoEncoder::Canonical VideoEncoder::canonical_order(const VideoInputSequence& seq, std::size_t length) const {
  // Aggregated tokens first in expert order, then each expert's valid feature
  // tokens sorted by value, then padding. The transformer sees no position
  // signal, so this only fixes the floating-point summation order: any
  // within-expert permutation or extra masked padding yields identical bits.
  const std::size_t n_experts = seq.num_experts();
  const Tensor& tok = seq.tokens.value();
  std::vector<std::int64_t> aggs(n_experts, -1);
  std::vector<std::vector<std::size_t>> feats(n_experts);
  for (std::size_t i = 0; i < seq.length(); ++i) {
    if (!seq.mask[i]) continue;
    const auto& p = seq.provenance[i];
    if (p.expert >= n_experts) throw ContractError("token provenance names an unknown expert");
    if (p.slot == 0) {
      aggs[p.expert] = static_cast<std::int64_t>(i);
    } else {
      feats[p.expert].push_back(i);
    }
  }
  Canonical c;
  for (std::size_t n = 0; n < n_experts; ++n) {
    if (aggs[n] < 0) throw ContractError("expert " + std::to_string(n) + " has no valid aggregated token");
    c.order.push_back(aggs[n]);
  }
  for (std::size_t n = 0; n < n_experts; ++n) {
    auto& f = feats[n];
    std::sort(f.begin(), f.end(), [&](std::size_t a, std::size_t b) {
      auto ra = tok.row(a), rb = tok.row(b);
      return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });
    for (std::size_t i : f) c.order.push_back(static_cast<std::int64_t>(i));
  }
  if (c.order.size() > length) throw ContractError("canonical length exceeds block length");
  c.mask.assign(c.order.size(), 1);
  c.order.resize(length, -1);
  c.mask.resize(length, 0);
  return c;
}

namespace {

std::size_t valid_count(const VideoInputSequence& seq) {
  return static_cast<std::size_t>(std::count(seq.mask.begin(), seq.mask.end(), std::uint8_t{1}));
}

}  // namespace

Var VideoEncoder::encode_mmt(const VideoInputSequence& seq, const num::ForwardContext& ctx) const {
  const std::size_t len = valid_count(seq);
  Canonical c = canonical_order(seq, len);
  Var x = num::gather_rows(seq.tokens, c.order);
  if (const double p = ctx.active_dropout(); p > 0.0) x = num::dropout(x, p, *ctx.rng);
  Var y = transformer_.forward(x, c.mask, len, ctx);
  std::vector<std::int64_t> readout(seq.num_experts());
  std::iota(readout.begin(), readout.end(), 0);
  return num::gather_rows(y, readout);
}

Var VideoEncoder::encode_none(const data::VideoRecord& video) const {
  const auto buckets = feature_buckets(video);
  std::vector<Var> rows;
  for (std::size_t n = 0; n < cfg_.experts.size(); ++n) {
    const num::Segment all{0, buckets[n].size()};
    rows.push_back(num::segment_pool(project(n, video.experts[n]), std::span(&all, 1), cfg_.agg_init));
  }
  return num::concat_rows(rows);
}

Var VideoEncoder::encode(const data::VideoRecord& video, const num::ForwardContext& ctx) const {
  if (cfg_.effective_kind() == EncoderKind::none) return encode_none(video);
  return encode_mmt(assemble_omega(video), ctx);
}

VideoBatchOutput VideoEncoder::encode_batch(std::span<const data::VideoRecord* const> videos,
                                            const num::ForwardContext& ctx) const {
  const std::size_t b_count = videos.size();
  const std::size_t n_experts = cfg_.experts.size();
  if (b_count == 0) throw ContractError("encode_batch of zero videos");
  VideoBatchOutput out;
  out.batch = b_count;
  out.experts = n_experts;
  std::vector<std::int64_t> readout(n_experts * b_count);

  if (cfg_.effective_kind() == EncoderKind::none) {
    std::vector<Var> rows;
    for (std::size_t b = 0; b < b_count; ++b) {
      rows.push_back(encode_none(*videos[b]));
      for (std::size_t n = 0; n < n_experts; ++n) {
        const auto& s = videos[b]->experts[n];
        out.present.push_back(s.present && s.count() > 0 ? 1 : 0);
        readout[n * b_count + b] = static_cast<std::int64_t>(b * n_experts + n);
      }
    }
    out.psi = num::gather_rows(num::concat_rows(rows), readout);
    return out;
  }

  std::vector<VideoInputSequence> seqs;
  std::size_t len = 0;
  for (const auto* v : videos) {
    seqs.push_back(assemble_omega(*v));
    len = std::max(len, valid_count(seqs.back()));
    out.present.insert(out.present.end(), seqs.back().present.begin(), seqs.back().present.end());
  }
  std::vector<Var> blocks;
  std::vector<std::uint8_t> mask;
  for (const auto& s : seqs) {
    Canonical c = canonical_order(s, len);
    blocks.push_back(num::gather_rows(s.tokens, c.order));
    mask.insert(mask.end(), c.mask.begin(), c.mask.end());
  }
  Var x = num::concat_rows(blocks);
  if (const double p = ctx.active_dropout(); p > 0.0) x = num::dropout(x, p, *ctx.rng);
  Var y = transformer_.forward(x, mask, len, ctx);
  for (std::size_t n = 0; n < n_experts; ++n) {
    for (std::size_t b = 0; b < b_count; ++b) readout[n * b_count + b] = static_cast<std::int64_t>(b * len + n);
  }
  out.psi = num::gather_rows(y, readout);
  return out;
}

}  // namespace mmt
