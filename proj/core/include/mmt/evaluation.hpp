// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmt/numerics/tensor.hpp"

namespace mmt {

enum class Direction { text_to_video, video_to_text };
std::string to_string(Direction d);

/// 1-based rank of the ground-truth item per query.
using RankVector = std::vector<std::size_t>;

/// Ranks of the diagonal in a square [videos, captions] matrix. For
/// text_to_video the queries are columns (captions), for video_to_text rows.
/// rank_i = 1 + #{j != i : s_j > s_i} + #{j < i : s_j == s_i}.
RankVector ranks_from_matrix(const num::Tensor& scores, Direction direction);

struct RetrievalMetrics {
  Direction direction = Direction::text_to_video;
  double r1 = 0, r5 = 0, r10 = 0, r50 = 0;  // percent
  double median_rank = 0;
  double mean_rank = 0;
  std::size_t queries = 0;
  /// Free-form tag identifying the run configuration; aggregation refuses
  /// to mix tags.
  std::string config_tag;
};

RetrievalMetrics metrics_from_ranks(const RankVector& ranks, Direction direction, std::string config_tag = {});
/// Geometric mean of R@1, R@5 and R@10.
double geometric_mean_recall(const RetrievalMetrics& m);

struct MetricStat {
  double mean = 0;
  double std = 0;  // population
};

struct SeedAggregate {
  Direction direction = Direction::text_to_video;
  std::string config_tag;
  std::size_t runs = 0;
  MetricStat r1, r5, r10, r50, median_rank, mean_rank;
};

/// Needs >= 2 runs sharing direction, tag and query count (ConfigError otherwise).
SeedAggregate aggregate_seeds(std::span<const RetrievalMetrics> runs);

/// One evaluated run: both directions.
struct RunReport {
  std::string label;
  std::uint64_t seed = 0;
  RetrievalMetrics t2v, v2t;
};

/// Report JSON: per-run metrics and, with >= 2 runs, the per-direction aggregate.
std::string report_to_json(std::span<const RunReport> runs);
/// Aligned table: one row per run plus mean +- std rows.
std::string report_to_table(std::span<const RunReport> runs);

}  // namespace mmt
