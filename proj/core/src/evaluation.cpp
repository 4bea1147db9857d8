// SPDX-License-Identifier: Apache-2.0
#include "mmt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "mmt/errors.hpp"

namespace mmt {
using nlohmann::ordered_json;

std::string to_string(Direction d) { return d == Direction::text_to_video ? "t2v" : "v2t"; }

RankVector ranks_from_matrix(const num::Tensor& s, Direction direction) {
  if (s.rank() != 2 || s.rows() != s.cols()) {
    throw DimensionError("ranks_from_matrix needs a square matrix, got " + num::shape_string(s.shape()));
  }
  const std::size_t n = s.rows();
  RankVector ranks(n);
  const bool by_column = direction == Direction::text_to_video;
  for (std::size_t q = 0; q < n; ++q) {
    auto score = [&](std::size_t cand) { return by_column ? s.at(cand, q) : s.at(q, cand); };
    const double truth = score(q);
    std::size_t rank = 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q) continue;
      const double v = score(j);
      if (v > truth || (v == truth && j < q)) ++rank;
    }
    ranks[q] = rank;
  }
  return ranks;
}

RetrievalMetrics metrics_from_ranks(const RankVector& ranks, Direction direction, std::string config_tag) {
  if (ranks.empty()) throw ContractError("metrics_from_ranks of an empty rank vector");
  RetrievalMetrics m;
  m.direction = direction;
  m.queries = ranks.size();
  m.config_tag = std::move(config_tag);
  const double count = static_cast<double>(ranks.size());
  auto recall = [&](std::size_t k) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
    return 100.0 * static_cast<double>(hits) / count;
  };
  m.r1 = recall(1);
  m.r5 = recall(5);
  m.r10 = recall(10);
  m.r50 = recall(50);
  RankVector sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  m.median_rank = sorted.size() % 2 == 1 ? static_cast<double>(sorted[mid])
                                          : 0.5 * static_cast<double>(sorted[mid - 1] + sorted[mid]);
  double sum = 0.0;
  for (std::size_t r : ranks) sum += static_cast<double>(r);
  m.mean_rank = sum / count;
  return m;
}

double geometric_mean_recall(const RetrievalMetrics& m) { return std::cbrt(m.r1 * m.r5 * m.r10); }

SeedAggregate aggregate_seeds(std::span<const RetrievalMetrics> runs) {
  if (runs.size() < 2) throw ConfigError("seed aggregation needs at least 2 runs, got " + std::to_string(runs.size()));
  for (const auto& r : runs) {
    if (r.direction != runs[0].direction) throw ConfigError("seed aggregation mixes retrieval directions");
    if (r.config_tag != runs[0].config_tag) {
      throw ConfigError("seed aggregation mixes configs '" + runs[0].config_tag + "' and '" + r.config_tag + "'");
    }
    if (r.queries != runs[0].queries) throw ConfigError("seed aggregation mixes query counts");
  }
  auto stat = [&](double RetrievalMetrics::*field) {
    double mean = 0.0;
    for (const auto& r : runs) mean += r.*field;
    mean /= static_cast<double>(runs.size());
    double var = 0.0;
    for (const auto& r : runs) var += (r.*field - mean) * (r.*field - mean);
    var /= static_cast<double>(runs.size());
    return MetricStat{mean, std::sqrt(var)};
  };
  SeedAggregate a;
  a.direction = runs[0].direction;
  a.config_tag = runs[0].config_tag;
  a.runs = runs.size();
  a.r1 = stat(&RetrievalMetrics::r1);
  a.r5 = stat(&RetrievalMetrics::r5);
  a.r10 = stat(&RetrievalMetrics::r10);
  a.r50 = stat(&RetrievalMetrics::r50);
  a.median_rank = stat(&RetrievalMetrics::median_rank);
  a.mean_rank = stat(&RetrievalMetrics::mean_rank);
  return a;
}

namespace {

ordered_json metrics_json(const RetrievalMetrics& m) {
  return {{"R@1", m.r1},          {"R@5", m.r5},         {"R@10", m.r10},     {"R@50", m.r50},
          {"MdR", m.median_rank}, {"MnR", m.mean_rank}, {"queries", m.queries}};
}

ordered_json stat_json(const MetricStat& s) { return {{"mean", s.mean}, {"std", s.std}}; }

ordered_json aggregate_json(const SeedAggregate& a) {
  return {{"runs", a.runs},          {"R@1", stat_json(a.r1)},          {"R@5", stat_json(a.r5)},
          {"R@10", stat_json(a.r10)}, {"R@50", stat_json(a.r50)},        {"MdR", stat_json(a.median_rank)},
          {"MnR", stat_json(a.mean_rank)}};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::string report_to_json(std::span<const RunReport> runs) {
  ordered_json doc;
  doc["runs"] = ordered_json::array();
  for (const auto& r : runs) {
    doc["runs"].push_back({{"label", r.label},
                           {"seed", r.seed},
                           {"t2v", metrics_json(r.t2v)},
                           {"v2t", metrics_json(r.v2t)},
                           {"t2v_geometric_mean", geometric_mean_recall(r.t2v)}});
  }
  if (runs.size() >= 2) {
    std::vector<RetrievalMetrics> t2v, v2t;
    for (const auto& r : runs) {
      t2v.push_back(r.t2v);
      v2t.push_back(r.v2t);
    }
    doc["aggregate"] = {{"t2v", aggregate_json(aggregate_seeds(t2v))}, {"v2t", aggregate_json(aggregate_seeds(v2t))}};
  }
  return doc.dump(2) + "\n";
}

std::string report_to_table(std::span<const RunReport> runs) {
  std::string out;
  char line[256];
  const char* header = "%-22s | %6s %6s %6s %7s %7s | %6s %6s %6s %7s %7s\n";
  std::snprintf(line, sizeof line, header, "run", "R@1", "R@5", "R@10", "MdR", "MnR", "R@1", "R@5", "R@10", "MdR",
                "MnR");
  out += std::string(24, ' ') + "text -> video" + std::string(29, ' ') + "video -> text\n";
  out += line;
  out += std::string(std::string(line).size() - 1, '-') + "\n";
  for (const auto& r : runs) {
    const std::string label = r.label + " (seed " + std::to_string(r.seed) + ")";
    std::snprintf(line, sizeof line, "%-22s | %6.1f %6.1f %6.1f %7.1f %7.1f | %6.1f %6.1f %6.1f %7.1f %7.1f\n",
                  label.c_str(), r.t2v.r1, r.t2v.r5, r.t2v.r10, r.t2v.median_rank, r.t2v.mean_rank, r.v2t.r1,
                  r.v2t.r5, r.v2t.r10, r.v2t.median_rank, r.v2t.mean_rank);
    out += line;
  }
  if (runs.size() >= 2) {
    std::vector<RetrievalMetrics> t2v, v2t;
    for (const auto& r : runs) {
      t2v.push_back(r.t2v);
      v2t.push_back(r.v2t);
    }
    const SeedAggregate a = aggregate_seeds(t2v), b = aggregate_seeds(v2t);
    auto cell = [](const MetricStat& s) { return fmt("%.1f", s.mean) + "+-" + fmt("%.1f", s.std); };
    out += "mean+-std: t2v R@1 " + cell(a.r1) + "  R@5 " + cell(a.r5) + "  R@10 " + cell(a.r10) + "  MdR " +
           cell(a.median_rank) + "  MnR " + cell(a.mean_rank) + "\n";
    out += "           v2t R@1 " + cell(b.r1) + "  R@5 " + cell(b.r5) + "  R@10 " + cell(b.r10) + "  MdR " +
           cell(b.median_rank) + "  MnR " + cell(b.mean_rank) + "\n";
  }
  return out;
}

}  // namespace mmt
