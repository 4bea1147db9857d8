// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "mmt/errors.hpp"
#include "mmt/numerics/ops.hpp"
#include "mmt/video_encoder.hpp"
#include "test_support.hpp"

namespace mmt {
namespace {

using data::ExpertFeatureSequence;
using data::ExpertSpec;
using data::VideoRecord;
using num::Shape;
using num::Tensor;

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// ---- buckets and agg init ----

TEST(TemporalBucket, OneSecondBuckets) {
  EXPECT_EQ(temporal_bucket(7.4, 30.0), 8);
  EXPECT_EQ(temporal_bucket(0.0, 30.0), 1);
  EXPECT_EQ(temporal_bucket(29.999, 30.0), 30);
  EXPECT_EQ(temporal_bucket(3.2, 30.0), temporal_bucket(3.9, 30.0));
  EXPECT_EQ(temporal_bucket(3.2, 30.0), 4);
  EXPECT_EQ(temporal_bucket_count(30.0), 30u);
  EXPECT_EQ(temporal_bucket_count(7.5), 8u);
}

TEST(TemporalBucket, OutOfRange) {
  EXPECT_THROW(temporal_bucket(30.0, 30.0), TimeRangeError);
  EXPECT_THROW(temporal_bucket(-0.1, 30.0), TimeRangeError);
  EXPECT_EQ(temporal_bucket(31.0, 30.0, true), 30);
  EXPECT_EQ(temporal_bucket(-1.0, 30.0, true), 1);
}

TEST(TemporalBucket, TableRows) {
  EXPECT_EQ(temporal_table_row(1, 10), 0u);
  EXPECT_EQ(temporal_table_row(10, 10), 9u);
  EXPECT_EQ(temporal_table_row(kBucketAgg, 10), 10u);
  EXPECT_EQ(temporal_table_row(kBucketUnk, 10), 11u);
  EXPECT_THROW(temporal_table_row(11, 10), ContractError);
}

TEST(InitAgg, Examples) {
  const Tensor f(Shape{2, 2}, {1, -2, 0, 5});
  EXPECT_EQ(vec(init_agg(f, num::PoolMode::max)), (std::vector<double>{1, 5}));
  EXPECT_EQ(vec(init_agg(f, num::PoolMode::mean)), (std::vector<double>{0.5, 1.5}));
  EXPECT_EQ(vec(init_agg(f, num::PoolMode::zero)), (std::vector<double>{0, 0}));
  const Tensor empty(Shape{0, 3});
  for (auto mode : {num::PoolMode::zero, num::PoolMode::mean, num::PoolMode::max}) {
    EXPECT_EQ(vec(init_agg(empty, mode)), (std::vector<double>{0, 0, 0}));
  }
}

TEST(VideoEncoderConfig, ParseNames) {
  EXPECT_EQ(parse_encoder_kind("none"), EncoderKind::none);
  EXPECT_EQ(parse_temporal_mode("shuffled"), TemporalMode::shuffled);
  EXPECT_EQ(parse_pool_mode("mean"), num::PoolMode::mean);
  EXPECT_THROW(parse_temporal_mode("reversed"), ConfigError);
  EXPECT_EQ(to_string(TemporalMode::unk), "unk");
}

// ---- fixtures ----

struct Fixture {
  num::ParameterStore store;
  VideoEncoder encoder;
  Fixture(VideoEncoderConfig cfg, std::uint64_t seed = 1) {
    num::Rng rng(seed);
    encoder = VideoEncoder(store, "video", std::move(cfg), rng);
  }
};

VideoEncoderConfig small_config(std::size_t experts = 2, std::size_t dim = 3) {
  VideoEncoderConfig cfg;
  for (std::size_t n = 0; n < experts; ++n) cfg.experts.push_back({"e" + std::to_string(n), dim, true});
  cfg.model_dim = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.intermediate_dim = 16;
  cfg.t_max = 10.0;
  cfg.max_features_per_expert = 5;
  return cfg;
}

ExpertFeatureSequence sequence(const ExpertSpec& spec, std::vector<double> ts, num::Rng& rng) {
  ExpertFeatureSequence s;
  s.expert = spec;
  s.timestamps = std::move(ts);
  s.features = mmt::testing::random_tensor(Shape{s.timestamps.size(), spec.native_dim}, rng);
  s.present = !s.timestamps.empty();
  return s;
}

VideoRecord random_video(const VideoEncoderConfig& cfg, num::Rng& rng, const std::string& id = "v") {
  VideoRecord v;
  v.video_id = id;
  v.duration = cfg.t_max;
  for (const auto& e : cfg.experts) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(cfg.max_features_per_expert));
    std::vector<double> ts;
    for (std::size_t i = 0; i < std::min(k, cfg.max_features_per_expert); ++i) ts.push_back(rng.uniform() * cfg.t_max);
    std::sort(ts.begin(), ts.end());
    v.experts.push_back(sequence(e, ts, rng));
  }
  return v;
}

Tensor psi(const VideoEncoder& enc, const VideoRecord& v) {
  num::NoGradGuard g;
  return enc.encode(v, {}).value();
}

double l2_diff(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// ---- assemble ----

TEST(AssembleOmega, SevenExpertsThirtyFeatures) {
  auto cfg = small_config(7, 4);
  cfg.max_features_per_expert = 30;
  cfg.t_max = 30.0;
  Fixture f(cfg);
  num::Rng rng(2);
  VideoRecord v;
  for (const auto& e : cfg.experts) {
    std::vector<double> ts;
    for (int i = 0; i < 30; ++i) ts.push_back(i + 0.5);
    v.experts.push_back(sequence(e, ts, rng));
  }
  const auto seq = f.encoder.assemble_omega(v);
  EXPECT_EQ(seq.length(), 217u);
  EXPECT_EQ(seq.tokens.rows(), 217u);
  EXPECT_EQ(seq.tokens.cols(), 8u);
  EXPECT_EQ(std::count(seq.mask.begin(), seq.mask.end(), 1), 217);
  // Layout: [agg_1, feats_1..., agg_2, ...].
  for (std::size_t n = 0; n < 7; ++n) {
    EXPECT_EQ(seq.provenance[n * 31].slot, 0u);
    EXPECT_EQ(seq.provenance[n * 31].expert, n);
    EXPECT_EQ(seq.provenance[n * 31].bucket, kBucketAgg);
    EXPECT_EQ(seq.provenance[n * 31 + 8].bucket, 8);  // feature 7 at 7.5 s
  }
}

TEST(AssembleOmega, TokenIsProjectionPlusEmbeddings) {
  auto cfg = small_config(1, 3);
  Fixture f(cfg);
  num::Rng rng(3);
  VideoRecord v;
  v.experts.push_back(sequence(cfg.experts[0], {3.2, 3.9}, rng));
  const auto seq = f.encoder.assemble_omega(v);
  EXPECT_EQ(seq.provenance[1].bucket, 4);
  EXPECT_EQ(seq.provenance[2].bucket, 4);
  const Tensor proj = f.encoder.project(0, v.experts[0]).value();
  const Tensor& e = f.store.find("video.expert_embedding").value();
  const Tensor& t = f.store.find("video.temporal_embedding").value();
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_DOUBLE_EQ(seq.tokens.value().at(1, c), proj.at(0, c) + e.at(0, c) + t.at(3, c));
    // agg (max init) carries T_agg, the row after the D timed rows.
    EXPECT_DOUBLE_EQ(seq.tokens.value().at(0, c), std::max(proj.at(0, c), proj.at(1, c)) + e.at(0, c) + t.at(10, c));
  }
}

TEST(AssembleOmega, MissingExpertKeepsOneValidToken) {
  auto cfg = small_config(1, 3);
  Fixture f(cfg);
  VideoRecord v;
  ExpertFeatureSequence empty;
  empty.expert = cfg.experts[0];
  empty.features = Tensor(Shape{0, 3});
  v.experts.push_back(empty);
  const auto seq = f.encoder.assemble_omega(v);
  EXPECT_EQ(std::count(seq.mask.begin(), seq.mask.end(), 1), 1);
  EXPECT_EQ(seq.present, (std::vector<std::uint8_t>{0}));
  const Tensor& e = f.store.find("video.expert_embedding").value();
  const Tensor& t = f.store.find("video.temporal_embedding").value();
  for (std::size_t c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(seq.tokens.value().at(0, c), e.at(0, c) + t.at(10, c));
}

TEST(AssembleOmega, NonTemporalExpertUsesUnk) {
  auto cfg = small_config(2, 3);
  cfg.experts[1].temporal = false;
  Fixture f(cfg);
  num::Rng rng(4);
  const auto v = random_video(cfg, rng);
  const auto seq = f.encoder.assemble_omega(v);
  for (std::size_t i = 0; i < seq.length(); ++i) {
    const auto& p = seq.provenance[i];
    if (p.expert == 1 && p.slot > 0 && seq.mask[i]) EXPECT_EQ(p.bucket, kBucketUnk);
    if (p.expert == 0 && p.slot > 0 && seq.mask[i]) EXPECT_GE(p.bucket, 1);
  }
}

TEST(AssembleOmega, TimestampPastTmaxRejectedOrClamped) {
  auto cfg = small_config(1, 3);
  num::Rng rng(5);
  VideoRecord v;
  v.experts.push_back(sequence(cfg.experts[0], {1.0, 12.0}, rng));
  Fixture strict(cfg);
  EXPECT_THROW(strict.encoder.assemble_omega(v), TimeRangeError);
  cfg.clamp_timestamps = true;
  Fixture clamped(cfg);
  EXPECT_EQ(clamped.encoder.assemble_omega(v).provenance[2].bucket, 10);
}

// ---- encode ----

TEST(EncodeMmt, OutputShapeAndFinite) {
  auto cfg = small_config(3, 2);
  Fixture f(cfg);
  num::Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const auto out = psi(f.encoder, random_video(cfg, rng));
    EXPECT_EQ(out.shape(), (Shape{3, 8}));
    for (double x : out.values()) EXPECT_TRUE(std::isfinite(x));
  }
}

TEST(EncodeMmt, WithinExpertPermutationInvariant) {
  auto cfg = small_config(2, 3);
  Fixture f(cfg);
  num::Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = random_video(cfg, rng);
    auto w = v;
    // Permute one expert's features together with their timestamps.
    auto& s = w.experts[trial % 2];
    std::vector<std::size_t> perm(s.count());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    auto orig = s;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      s.timestamps[i] = orig.timestamps[perm[i]];
      for (std::size_t c = 0; c < s.features.cols(); ++c) s.features.at(i, c) = orig.features.at(perm[i], c);
    }
    ASSERT_EQ(psi(f.encoder, v), psi(f.encoder, w)) << "trial " << trial;
  }
}

TEST(EncodeMmt, SwappedBucketsChangeOutput) {
  auto cfg = small_config(1, 3);
  Fixture f(cfg);
  num::Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    VideoRecord v;
    v.experts.push_back(sequence(cfg.experts[0], {1.5, 6.5}, rng));
    auto w = v;
    // Same features, exchanged times.
    for (std::size_t c = 0; c < 3; ++c) std::swap(w.experts[0].features.at(0, c), w.experts[0].features.at(1, c));
    EXPECT_GT(l2_diff(psi(f.encoder, v), psi(f.encoder, w)), 1e-6);
  }
}

TEST(EncodeMmt, PaddingHasNoInfluence) {
  auto cfg = small_config(2, 3);
  Fixture f(cfg);
  num::Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = random_video(cfg, rng);
    auto seq = f.encoder.assemble_omega(v);
    num::NoGradGuard g;
    const Tensor base = f.encoder.encode_mmt(seq, {}).value();
    // Extra masked tokens holding garbage.
    const std::size_t extra = 1 + trial % 7;
    std::vector<num::Var> parts{seq.tokens, num::Var(mmt::testing::random_tensor(Shape{extra, 8}, rng, 100.0))};
    seq.tokens = num::concat_rows(parts);
    for (std::size_t i = 0; i < extra; ++i) {
      seq.mask.push_back(0);
      seq.provenance.push_back({i % 2, 1, 3});
    }
    ASSERT_EQ(f.encoder.encode_mmt(seq, {}).value(), base);
  }
  // A larger cap only adds padding.
  auto wide = cfg;
  wide.max_features_per_expert = 9;
  num::Rng r1(1), r2(1);
  num::ParameterStore s1, s2;
  VideoEncoder a(s1, "video", cfg, r1), b(s2, "video", wide, r2);
  const auto v = random_video(cfg, rng);
  EXPECT_EQ(psi(a, v), psi(b, v));
}

TEST(EncodeMmt, UnkModeIgnoresTimestamps) {
  auto cfg = small_config(2, 3);
  cfg.temporal = TemporalMode::unk;
  Fixture f(cfg);
  num::Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = random_video(cfg, rng);
    auto w = v;
    for (auto& s : w.experts) {
      rng.shuffle(std::span<double>(s.timestamps));
    }
    ASSERT_EQ(psi(f.encoder, v), psi(f.encoder, w));
  }
}

TEST(EncodeMmt, ShuffledModeIsFixedPerVideo) {
  auto cfg = small_config(1, 3);
  cfg.temporal = TemporalMode::shuffled;
  cfg.shuffle_seed = 3;
  Fixture f(cfg);
  num::Rng rng(11);
  VideoRecord v;
  v.video_id = "abc";
  std::vector<double> ts{0.5, 1.5, 2.5, 3.5, 4.5};
  v.experts.push_back(sequence(cfg.experts[0], ts, rng));
  const auto b1 = f.encoder.feature_buckets(v);
  EXPECT_EQ(b1, f.encoder.feature_buckets(v));
  auto sorted = b1[0];
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<std::int64_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(psi(f.encoder, v), psi(f.encoder, v));
}

TEST(EncodeMmt, BatchMatchesSingle) {
  auto cfg = small_config(2, 3);
  Fixture f(cfg);
  num::Rng rng(12);
  std::vector<VideoRecord> vids;
  for (int i = 0; i < 4; ++i) vids.push_back(random_video(cfg, rng, "v" + std::to_string(i)));
  std::vector<const VideoRecord*> ptrs;
  for (const auto& v : vids) ptrs.push_back(&v);
  num::NoGradGuard g;
  const auto batch = f.encoder.encode_batch(ptrs, {});
  EXPECT_EQ(batch.psi.rows(), 8u);
  for (std::size_t b = 0; b < 4; ++b) {
    const Tensor single = f.encoder.encode(vids[b], {}).value();
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t c = 0; c < 8; ++c) {
        EXPECT_NEAR(batch.psi.value().at(n * 4 + b, c), single.at(n, c), 1e-12);
      }
    }
  }
}

TEST(EncodeMmt, GradientsMatchFiniteDifferences) {
  auto cfg = small_config(2, 2);
  cfg.model_dim = 4;
  cfg.layers = 1;
  cfg.intermediate_dim = 6;
  cfg.max_features_per_expert = 2;
  cfg.t_max = 3.0;
  Fixture f(cfg);
  num::Rng rng(13);
  const auto v = random_video(cfg, rng);
  const Tensor probe = mmt::testing::random_tensor(Shape{2, 4}, rng);
  auto report = mmt::testing::check_gradients(f.store, [&] {
    return num::sum_all(num::mul(f.encoder.encode(v, {}), num::Var(probe)));
  });
  EXPECT_TRUE(report.ok()) << report.summary();
  EXPECT_GT(report.checked, 50u);
}

// ---- NONE ----

TEST(EncodeNone, SingleFeatureIsItsProjection) {
  auto cfg = small_config(1, 3);
  cfg.kind = EncoderKind::none;
  Fixture f(cfg);
  num::Rng rng(14);
  VideoRecord v;
  v.experts.push_back(sequence(cfg.experts[0], {2.0}, rng));
  const auto& w = f.store.find("video.projection.e0.weight").value();
  const auto& b = f.store.find("video.projection.e0.bias").value();
  const Tensor out = psi(f.encoder, v);
  for (std::size_t c = 0; c < 8; ++c) {
    double expect = b[c];
    for (std::size_t i = 0; i < 3; ++i) expect += v.experts[0].features.at(0, i) * w.at(i, c);
    EXPECT_NEAR(out.at(0, c), expect, 1e-12);
  }
}

TEST(EncodeNone, ZeroLayersIsNone) {
  auto none_cfg = small_config(2, 3);
  none_cfg.kind = EncoderKind::none;
  auto zero_cfg = small_config(2, 3);
  zero_cfg.layers = 0;
  EXPECT_EQ(zero_cfg.effective_kind(), EncoderKind::none);
  Fixture a(none_cfg, 5), b(zero_cfg, 5);
  num::Rng rng(15);
  for (int i = 0; i < 5; ++i) {
    const auto v = random_video(none_cfg, rng);
    EXPECT_EQ(psi(a.encoder, v), psi(b.encoder, v));
  }
}

TEST(EncodeNone, MissingExpertGivesZeroRow) {
  auto cfg = small_config(2, 3);
  cfg.kind = EncoderKind::none;
  Fixture f(cfg);
  num::Rng rng(16);
  auto v = random_video(cfg, rng);
  v.experts[1].timestamps.clear();
  v.experts[1].features = Tensor(Shape{0, 3});
  v.experts[1].present = false;
  const Tensor out = psi(f.encoder, v);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(out.at(1, c), 0.0);
  std::vector<const VideoRecord*> ptrs{&v};
  num::NoGradGuard g;
  EXPECT_EQ(f.encoder.encode_batch(ptrs, {}).present, (std::vector<std::uint8_t>{1, 0}));
}

TEST(EncodeNone, MaxPoolsProjectedFeatures) {
  auto cfg = small_config(1, 3);
  cfg.kind = EncoderKind::none;
  Fixture f(cfg);
  num::Rng rng(17);
  VideoRecord v;
  v.experts.push_back(sequence(cfg.experts[0], {1.0, 2.0, 3.0}, rng));
  const Tensor proj = f.encoder.project(0, v.experts[0]).value();
  EXPECT_EQ(vec(psi(f.encoder, v)), vec(init_agg(proj, num::PoolMode::max)));
}

}  // namespace
}  // namespace mmt
