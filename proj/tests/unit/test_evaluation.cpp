// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "mmt/errors.hpp"
#include "mmt/evaluation.hpp"
#include "mmt/numerics/ops.hpp"
#include "test_support.hpp"

namespace mmt {
namespace {

using num::Shape;
using num::Tensor;

TEST(Ranks, DiagonalDominantGivesOnes) {
  const Tensor s(Shape{3, 3}, {0.9, 0.1, 0.2, 0.0, 0.8, 0.3, 0.1, 0.2, 0.7});
  EXPECT_EQ(ranks_from_matrix(s, Direction::text_to_video), (RankVector{1, 1, 1}));
  EXPECT_EQ(ranks_from_matrix(s, Direction::video_to_text), (RankVector{1, 1, 1}));
}

TEST(Ranks, AllEqualUsesIndexTieRule) {
  const Tensor s(Shape{4, 4}, std::vector<double>(16, 0.25));
  EXPECT_EQ(ranks_from_matrix(s, Direction::text_to_video), (RankVector{1, 2, 3, 4}));
  EXPECT_EQ(ranks_from_matrix(s, Direction::video_to_text), (RankVector{1, 2, 3, 4}));
}

TEST(Ranks, DirectionsAreTransposes) {
  num::Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor s = mmt::testing::random_tensor(Shape{7, 7}, rng);
    const Tensor t = num::transpose(s);
    EXPECT_EQ(ranks_from_matrix(s, Direction::text_to_video), ranks_from_matrix(t, Direction::video_to_text));
    EXPECT_EQ(ranks_from_matrix(s, Direction::video_to_text), ranks_from_matrix(t, Direction::text_to_video));
  }
}

TEST(Ranks, TextToVideoQueriesColumns) {
  // Caption 0's best video is video 1.
  const Tensor s(Shape{2, 2}, {0.1, 0.5, 0.9, 0.6});
  EXPECT_EQ(ranks_from_matrix(s, Direction::text_to_video), (RankVector{2, 1}));
  EXPECT_EQ(ranks_from_matrix(s, Direction::video_to_text), (RankVector{2, 2}));
}

// Sort-based oracle: stable sort of candidate indices by descending score puts
// equal scores in index order, then the ground truth's position is its rank.
RankVector oracle_ranks(const Tensor& s, Direction d) {
  const std::size_t n = s.rows();
  RankVector out;
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto score = [&](std::size_t c) { return d == Direction::text_to_video ? s.at(c, q) : s.at(q, c); };
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
    out.push_back(static_cast<std::size_t>(std::find(idx.begin(), idx.end(), q) - idx.begin()) + 1);
  }
  return out;
}

Tensor tied_matrix(std::size_t n, num::Rng& rng, int levels) {
  Tensor s(Shape{n, n});
  for (auto& x : s.values()) x = std::floor(rng.uniform() * levels) / levels;
  return s;
}

TEST(Ranks, MatchesSortOracleWithTies) {
  num::Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor s = tied_matrix(50, rng, 2 + trial % 20);
    for (auto d : {Direction::text_to_video, Direction::video_to_text}) {
      ASSERT_EQ(ranks_from_matrix(s, d), oracle_ranks(s, d)) << trial;
    }
  }
}

TEST(Ranks, MonotoneTransformInvariance) {
  num::Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor s = tied_matrix(20, rng, 6);
    Tensor t = s;
    for (auto& x : t.values()) x = std::exp(3.0 * x) - 7.0;
    for (auto d : {Direction::text_to_video, Direction::video_to_text}) {
      EXPECT_EQ(ranks_from_matrix(s, d), ranks_from_matrix(t, d));
    }
  }
}

TEST(Ranks, RejectsNonSquare) { EXPECT_THROW(ranks_from_matrix(Tensor(Shape{2, 3}), Direction::text_to_video), DimensionError); }

TEST(Metrics, Examples) {
  const auto a = metrics_from_ranks({1, 1, 1}, Direction::text_to_video);
  EXPECT_EQ(a.r1, 100.0);
  EXPECT_EQ(a.median_rank, 1.0);
  EXPECT_EQ(a.mean_rank, 1.0);
  const auto b = metrics_from_ranks({1, 2, 3, 4}, Direction::video_to_text);
  EXPECT_EQ(b.r1, 25.0);
  EXPECT_EQ(b.r5, 100.0);
  EXPECT_EQ(b.median_rank, 2.5);
  EXPECT_EQ(b.mean_rank, 2.5);
  EXPECT_EQ(b.queries, 4u);
  EXPECT_EQ(b.direction, Direction::video_to_text);
  const auto c = metrics_from_ranks({3, 1, 2}, Direction::text_to_video);
  EXPECT_EQ(c.median_rank, 2.0);
  EXPECT_THROW(metrics_from_ranks({}, Direction::text_to_video), ContractError);
}

TEST(Metrics, RecallsMonotoneAndRanksBounded) {
  num::Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 60;
    const auto m = metrics_from_ranks(ranks_from_matrix(tied_matrix(n, rng, 5), Direction::text_to_video),
                                      Direction::text_to_video);
    EXPECT_LE(m.r1, m.r5);
    EXPECT_LE(m.r5, m.r10);
    EXPECT_LE(m.r10, m.r50);
    EXPECT_GE(m.median_rank, 1.0);
    EXPECT_LE(m.median_rank, static_cast<double>(n));
    EXPECT_GE(m.mean_rank, 1.0);
    EXPECT_LE(m.mean_rank, static_cast<double>(n));
  }
}

TEST(Metrics, GeometricMean) {
  RetrievalMetrics m;
  m.r1 = 10;
  m.r5 = 20;
  m.r10 = 40;
  EXPECT_NEAR(geometric_mean_recall(m), 20.0, 1e-12);
}

RetrievalMetrics with_r1(double r1, std::string tag = "cfg") {
  RetrievalMetrics m;
  m.r1 = r1;
  m.r5 = r1 + 10;
  m.queries = 8;
  m.config_tag = std::move(tag);
  return m;
}

TEST(Aggregate, MeanAndPopulationStd) {
  const std::vector<RetrievalMetrics> runs{with_r1(50), with_r1(54), with_r1(58)};
  const auto agg = aggregate_seeds(runs);
  EXPECT_EQ(agg.runs, 3u);
  EXPECT_NEAR(agg.r1.mean, 54.0, 1e-12);
  EXPECT_NEAR(agg.r1.std, std::sqrt(32.0 / 3.0), 1e-12);
  EXPECT_NEAR(agg.r1.std, 3.266, 1e-3);
  EXPECT_NEAR(agg.r5.mean, 64.0, 1e-12);
  const std::vector<RetrievalMetrics> same{with_r1(40), with_r1(40)};
  EXPECT_EQ(aggregate_seeds(same).r1.std, 0.0);
}

TEST(Aggregate, Errors) {
  const std::vector<RetrievalMetrics> one{with_r1(50)};
  EXPECT_THROW(aggregate_seeds(one), ConfigError);
  const std::vector<RetrievalMetrics> mixed{with_r1(50, "a"), with_r1(52, "b")};
  EXPECT_THROW(aggregate_seeds(mixed), ConfigError);
  auto other_dir = with_r1(52);
  other_dir.direction = Direction::video_to_text;
  const std::vector<RetrievalMetrics> dirs{with_r1(50), other_dir};
  EXPECT_THROW(aggregate_seeds(dirs), ConfigError);
}

TEST(Report, JsonAndTable) {
  const auto ranks = RankVector{1, 2, 3, 4};
  std::vector<RunReport> runs;
  for (std::uint64_t seed : {0, 1}) {
    runs.push_back({"tiny", seed, metrics_from_ranks(ranks, Direction::text_to_video, "tiny"),
                    metrics_from_ranks(ranks, Direction::video_to_text, "tiny")});
  }
  const auto doc = nlohmann::json::parse(report_to_json(runs));
  ASSERT_EQ(doc["runs"].size(), 2u);
  EXPECT_EQ(doc["runs"][1]["seed"], 1);
  EXPECT_TRUE(doc.contains("aggregate"));
  const std::string table = report_to_table(runs);
  EXPECT_NE(table.find("R@1"), std::string::npos);
  EXPECT_NE(table.find("MdR"), std::string::npos);
  EXPECT_NE(table.find("2.5"), std::string::npos);
  // One run: no aggregate block.
  const auto single = nlohmann::json::parse(report_to_json(std::span(runs.data(), 1)));
  EXPECT_FALSE(single.contains("aggregate"));
}

TEST(Metrics, RandomScoresNearChance) {
  num::Rng rng(5);
  double r5 = 0, mdr = 0, mnr = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    const auto m = metrics_from_ranks(ranks_from_matrix(mmt::testing::random_tensor(Shape{1000, 1000}, rng),
                                                        Direction::text_to_video),
                                      Direction::text_to_video);
    r5 += m.r5 / trials;
    mdr += m.median_rank / trials;
    mnr += m.mean_rank / trials;
  }
  EXPECT_GT(r5, 0.3);
  EXPECT_LT(r5, 0.7);
  EXPECT_GT(mdr, 450);
  EXPECT_LT(mdr, 550);
  EXPECT_GT(mnr, 450);
  EXPECT_LT(mnr, 550);
}

}  // namespace
}  // namespace mmt
