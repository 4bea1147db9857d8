// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmt/errors.hpp"
#include "mmt/matching.hpp"
#include "mmt/numerics/ops.hpp"
#include "test_support.hpp"

namespace mmt {
namespace {

using num::Shape;
using num::Tensor;
using num::Var;

VideoRepresentation random_video(std::size_t n, std::size_t d, num::Rng& rng, double p_missing = 0.0) {
  VideoRepresentation v;
  v.psi = mmt::testing::random_tensor(Shape{n, d}, rng);
  for (std::size_t i = 0; i < n; ++i) {
    const bool present = rng.uniform() >= p_missing;
    v.present.push_back(present ? 1 : 0);
    if (!present) {
      for (auto& x : v.psi.row(i)) x = 0.0;
    }
  }
  return v;
}

CaptionRepresentation random_caption(std::size_t n, std::size_t d, num::Rng& rng) {
  CaptionRepresentation c;
  c.phi = mmt::testing::random_tensor(Shape{n, d}, rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double norm = num::l2_norm(c.phi.row(i));
    for (auto& x : c.phi.row(i)) x /= norm;
  }
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += c.weights.emplace_back(std::exp(rng.normal()));
  for (auto& w : c.weights) w /= sum;
  return c;
}

// Scalar oracle written independently of the library.
double oracle(const VideoRepresentation& v, const CaptionRepresentation& c, bool normalize, bool renorm) {
  const std::size_t n = v.psi.rows(), d = v.psi.cols();
  double wsum = 0;
  for (std::size_t i = 0; i < n; ++i) wsum += (!renorm || v.present[i]) ? c.weights[i] : 0.0;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (renorm && !v.present[i]) continue;
    double norm = 0, dot = 0;
    for (std::size_t k = 0; k < d; ++k) norm += v.psi.at(i, k) * v.psi.at(i, k);
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < d; ++k) {
      const double psi = normalize ? (norm > 0 ? v.psi.at(i, k) / norm : 0.0) : v.psi.at(i, k);
      dot += c.phi.at(i, k) * psi;
    }
    s += (renorm ? c.weights[i] / wsum : c.weights[i]) * dot;
  }
  return s;
}

TEST(Similarity, Examples) {
  VideoRepresentation v{Tensor(Shape{2, 2}, {1, 0, 0, 1}), {1, 1}};
  CaptionRepresentation c{Tensor(Shape{1}), Tensor(Shape{2, 2}, {1, 0, 0, 1}), {0.5, 0.5}};
  EXPECT_DOUBLE_EQ(similarity(v, c), 1.0);

  // dots (0.3, 42) with w = (1, 0), bare inner product.
  VideoRepresentation v2{Tensor(Shape{2, 2}, {0.3, 0, 42, 0}), {1, 1}};
  CaptionRepresentation c2{Tensor(Shape{1}), Tensor(Shape{2, 2}, {1, 0, 1, 0}), {1.0, 0.0}};
  EXPECT_DOUBLE_EQ(similarity(v2, c2, {false, false}), 0.3);
}

TEST(Similarity, MatchesLoopOracle) {
  num::Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = random_video(4, 6, rng, 0.3);
    const auto c = random_caption(4, 6, rng);
    for (bool norm : {true, false}) {
      for (bool renorm : {true, false}) {
        if (renorm && std::none_of(v.present.begin(), v.present.end(), [](auto p) { return p; })) continue;
        EXPECT_NEAR(similarity(v, c, {norm, renorm}), oracle(v, c, norm, renorm), 1e-12);
      }
    }
  }
}

TEST(Similarity, ExpertCountMismatch) {
  num::Rng rng(2);
  EXPECT_THROW(similarity(random_video(3, 4, rng), random_caption(2, 4, rng)), DimensionError);
}

struct Reps {
  std::vector<std::string> vid_ids, cap_ids;
  std::vector<VideoRepresentation> videos;
  std::vector<CaptionRepresentation> captions;
};

Reps random_reps(std::size_t bv, std::size_t bc, std::size_t n, std::size_t d, num::Rng& rng, double p_missing = 0) {
  Reps r;
  for (std::size_t i = 0; i < bv; ++i) {
    r.vid_ids.push_back("v" + std::to_string(i));
    r.videos.push_back(random_video(n, d, rng, p_missing));
  }
  for (std::size_t j = 0; j < bc; ++j) {
    r.cap_ids.push_back("c" + std::to_string(j));
    r.captions.push_back(random_caption(n, d, rng));
  }
  return r;
}

TEST(SimilarityMatrix, OneByOneEqualsSimilarity) {
  num::Rng rng(3);
  const auto r = random_reps(1, 1, 3, 5, rng);
  const auto m = similarity_matrix(r.vid_ids, r.videos, r.cap_ids, r.captions, {});
  EXPECT_EQ(m.values.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(m.values[0], similarity(r.videos[0], r.captions[0]));
}

TEST(SimilarityMatrix, StoreScoringEqualsOnline) {
  num::Rng rng(4);
  for (bool renorm : {false, true}) {
    const auto r = random_reps(16, 16, 3, 7, rng, renorm ? 0.3 : 0.0);
    const SimilarityOptions opt{true, renorm};
    const auto online = similarity_matrix(r.vid_ids, r.videos, r.cap_ids, r.captions, opt);
    const auto offline = similarity_matrix(VideoStore::build(r.vid_ids, r.videos, opt), CaptionStore::build(r.cap_ids, r.captions));
    ASSERT_EQ(offline.values.shape(), online.values.shape());
    for (std::size_t i = 0; i < online.values.size(); ++i) EXPECT_NEAR(offline.values[i], online.values[i], 1e-9);
    EXPECT_EQ(offline.video_ids, r.vid_ids);
    EXPECT_EQ(offline.caption_ids, r.cap_ids);
  }
}

TEST(SimilarityMatrix, StoresRoundTripThroughDisk) {
  num::Rng rng(5);
  const auto r = random_reps(5, 4, 2, 3, rng, 0.2);
  mmt::testing::TempDir dir;
  const auto vs = VideoStore::build(r.vid_ids, r.videos, {});
  const auto cs = CaptionStore::build(r.cap_ids, r.captions);
  vs.save(dir / "v.mmts");
  cs.save(dir / "c.mmts");
  const auto vs2 = VideoStore::load(dir / "v.mmts");
  const auto cs2 = CaptionStore::load(dir / "c.mmts");
  EXPECT_EQ(vs2.ids, vs.ids);
  EXPECT_EQ(vs2.psi, vs.psi);
  EXPECT_EQ(vs2.present, vs.present);
  EXPECT_EQ(cs2.phi, cs.phi);
  EXPECT_EQ(cs2.weights, cs.weights);
  EXPECT_EQ(similarity_matrix(vs2, cs2).values, similarity_matrix(vs, cs).values);
  // Kind confusion and corruption are reported.
  EXPECT_THROW(CaptionStore::load(dir / "v.mmts"), FormatError);
  auto bytes = mmt::testing::read_bytes(dir / "v.mmts");
  bytes.resize(bytes.size() - 5);
  mmt::testing::write_bytes(dir / "bad.mmts", bytes);
  EXPECT_THROW(VideoStore::load(dir / "bad.mmts"), FormatError);
}

TEST(SimilarityScores, BatchedPathMatchesOracle) {
  num::Rng rng(6);
  const std::size_t n = 3, d = 4, bv = 5, bc = 6;
  for (bool renorm : {false, true}) {
    const auto r = random_reps(bv, bc, n, d, rng, renorm ? 0.3 : 0.0);
    Tensor psi(Shape{n * bv, d}), phi(Shape{n * bc, d}), w(Shape{bc, n});
    std::vector<std::uint8_t> present;
    for (std::size_t b = 0; b < bv; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        present.push_back(r.videos[b].present[i]);
        const double norm = num::l2_norm(r.videos[b].psi.row(i));
        for (std::size_t k = 0; k < d; ++k) psi.at(i * bv + b, k) = norm > 0 ? r.videos[b].psi.at(i, k) / norm : 0.0;
      }
    }
    for (std::size_t b = 0; b < bc; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        w.at(b, i) = r.captions[b].weights[i];
        for (std::size_t k = 0; k < d; ++k) phi.at(i * bc + b, k) = r.captions[b].phi.at(i, k);
      }
    }
    const Tensor s = similarity_scores(Var(psi), Var(phi), Var(w), present, n, renorm).value();
    for (std::size_t i = 0; i < bv; ++i) {
      for (std::size_t j = 0; j < bc; ++j) {
        const bool any = std::any_of(r.videos[i].present.begin(), r.videos[i].present.end(), [](auto p) { return p; });
        if (renorm && !any) continue;
        EXPECT_NEAR(s.at(i, j), oracle(r.videos[i], r.captions[j], true, renorm), 1e-12);
      }
    }
  }
}

TEST(SimilarityScores, GradientsMatchFiniteDifferences) {
  num::Rng rng(7);
  num::ParameterStore store;
  Var psi = store.add("psi", mmt::testing::random_tensor(Shape{2 * 3, 4}, rng));
  Var phi = store.add("phi", mmt::testing::random_tensor(Shape{2 * 4, 4}, rng));
  Var w = store.add("w", mmt::testing::random_tensor(Shape{4, 2}, rng));
  const std::vector<std::uint8_t> present{1, 1, 1, 0, 1, 1};
  const Tensor probe = mmt::testing::random_tensor(Shape{3, 4}, rng);
  for (bool renorm : {false, true}) {
    auto report = mmt::testing::check_gradients(store, [&] {
      return num::sum_all(num::mul(similarity_scores(psi, phi, num::softmax_rows(w), present, 2, renorm), Var(probe)));
    });
    EXPECT_TRUE(report.ok()) << report.summary();
  }
}

// ---- ranking loss ----

TEST(RankingLoss, Examples) {
  EXPECT_DOUBLE_EQ(ranking_loss(Tensor(Shape{2, 2}, {1, 0, 0, 1}), 0.05), 0.0);
  EXPECT_NEAR(ranking_loss(Tensor(Shape{2, 2}, {0.5, 0.5, 0.5, 0.5}), 0.05), 0.1, 1e-15);
  EXPECT_NEAR(ranking_loss(Tensor(Shape{2, 2}, {0.5, 0.48, 0.2, 0.9}), 0.05), 0.015, 1e-15);
}

double loss_oracle(const Tensor& s, double m) {
  const std::size_t b = s.rows();
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) continue;
      total += std::max(0.0, s.at(i, j) - s.at(i, i) + m) + std::max(0.0, s.at(j, i) - s.at(i, i) + m);
    }
  }
  return total / static_cast<double>(b);
}

TEST(RankingLoss, NonNegativeAndZeroExactlyWhenSeparated) {
  num::Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 2 + trial % 6;
    Tensor s = mmt::testing::random_tensor(Shape{b, b}, rng, 0.3);
    const double l = ranking_loss(s, 0.05);
    EXPECT_GE(l, 0.0);
    EXPECT_NEAR(l, loss_oracle(s, 0.05), 1e-12);
    EXPECT_DOUBLE_EQ(ranking_loss(Var(s), 0.05).value()[0], l);
    // Raise the diagonal until every hinge is satisfied.
    for (std::size_t i = 0; i < b; ++i) s.at(i, i) = 2.0;
    EXPECT_EQ(ranking_loss(s, 0.05), 0.0);
    s.at(0, b - 1) = 2.0 - 0.05 + 1e-3;
    EXPECT_GT(ranking_loss(s, 0.05), 0.0);
  }
}

TEST(RankingLoss, GradientMatchesFiniteDifferencesAwayFromKinks) {
  num::Rng rng(9);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 3 + trial % 3;
    num::ParameterStore store;
    Var s = store.add("s", mmt::testing::random_tensor(Shape{b, b}, rng, 0.2));
    bool near_kink = false;
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        if (i == j) continue;
        const auto& v = s.value();
        near_kink |= std::abs(v.at(i, j) - v.at(i, i) + 0.05) <= 1e-4 || std::abs(v.at(j, i) - v.at(i, i) + 0.05) <= 1e-4;
      }
    }
    if (near_kink) continue;
    ++checked;
    auto report = mmt::testing::check_gradients(store, [&] { return ranking_loss(s, 0.05); });
    EXPECT_TRUE(report.ok()) << report.summary();
  }
  EXPECT_GT(checked, 10);
}

TEST(RankingLoss, ZeroSubgradientAtExactEquality) {
  num::ParameterStore store;
  // s01 - s00 + m == 0 exactly.
  Var s = store.add("s", Tensor(Shape{2, 2}, {0.5, 0.25, -1.0, 1.0}));
  store.zero_grad();
  num::backward(ranking_loss(s, 0.25));
  for (double g : s.grad().values()) EXPECT_EQ(g, 0.0);
}

TEST(RankingLoss, InvariantToJointRelabeling) {
  num::Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + trial % 7;
    const Tensor s = mmt::testing::random_tensor(Shape{b, b}, rng, 0.3);
    std::vector<std::size_t> p(b);
    std::iota(p.begin(), p.end(), 0);
    rng.shuffle(std::span<std::size_t>(p));
    Tensor q(Shape{b, b});
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) q.at(i, j) = s.at(p[i], p[j]);
    }
    EXPECT_NEAR(ranking_loss(q, 0.05), ranking_loss(s, 0.05), 1e-12);
  }
}

TEST(RankingLoss, Errors) {
  EXPECT_THROW(ranking_loss(Tensor(Shape{2, 3}), 0.05), DimensionError);
  EXPECT_THROW(LossConfig{-0.1}.validate(), ConfigError);
  EXPECT_NO_THROW(LossConfig{0.0}.validate());
}

// ---- retrieval ----

TEST(TopK, DescendingWithIndexTieBreakAndClamp) {
  num::Rng rng(11);
  auto r = random_reps(6, 1, 2, 3, rng);
  r.videos[4] = r.videos[1];  // exact tie
  const auto store = VideoStore::build(r.vid_ids, r.videos, {});
  const auto& cap = r.captions[0];
  const auto all = top_k(store, cap, 100);
  ASSERT_EQ(all.size(), 6u);
  for (std::size_t i = 1; i < all.size(); ++i) {
    EXPECT_GE(all[i - 1].score, all[i].score);
    if (all[i - 1].score == all[i].score) EXPECT_LT(all[i - 1].index, all[i].index);
  }
  for (const auto& item : all) EXPECT_NEAR(item.score, similarity(r.videos[item.index], cap), 1e-9);
  const auto two = top_k(store, cap, 2);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].id, all[0].id);
  EXPECT_EQ(two[1].id, all[1].id);
  EXPECT_THROW(top_k(VideoStore{}, cap, 1), DataError);
}

TEST(SimilarityMatrix, ValidateCatchesNonFinite) {
  SimilarityMatrix m{Tensor(Shape{1, 1}, {std::nan("")}), {"v"}, {"c"}};
  EXPECT_THROW(m.validate(), ValidationError);
  SimilarityMatrix bad{Tensor(Shape{1, 2}), {"v"}, {"c"}};
  EXPECT_THROW(bad.validate(), DimensionError);
}

}  // namespace
}  // namespace mmt
