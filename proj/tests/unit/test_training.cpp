// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mmt/errors.hpp"
#include "mmt/training.hpp"
#include "test_support.hpp"

namespace mmt {
namespace {

using mmt::testing::TempDir;

class TrainingTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("train");
    data::SyntheticSpec spec;
    dataset_ = new data::Dataset(mmt::testing::make_synthetic(spec, 3, dir_->path() / "data"));
  }
  static void TearDownTestSuite() {
    delete dataset_;
    delete dir_;
  }

  static TrainConfig config(std::size_t steps) {
    auto cfg = TrainConfig::tiny();
    cfg.total_steps = steps;
    cfg.batch_size = 8;
    cfg.model_dim = 16;
    cfg.intermediate_dim = 32;
    cfg.caption_dim = 16;
    return cfg;
  }

  static const data::Dataset& ds() { return *dataset_; }
  static TempDir* dir_;
  static data::Dataset* dataset_;
};

TempDir* TrainingTest::dir_ = nullptr;
data::Dataset* TrainingTest::dataset_ = nullptr;

TEST(LearningRate, StepDecay) {
  const auto cfg = TrainConfig::paper_defaults();
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(999, cfg), 5e-5);
  EXPECT_NEAR(lr_at(1000, cfg), 4.75e-5, 1e-18);
  EXPECT_NEAR(lr_at(2500, cfg), 5e-5 * 0.95 * 0.95, 1e-18);
  auto flat = cfg;
  flat.decay_factor = 1.0;
  for (std::size_t s : {0, 1000, 49999}) EXPECT_DOUBLE_EQ(lr_at(s, flat), 5e-5);
}

TEST(TrainConfigTest, PaperDefaults) {
  const auto cfg = TrainConfig::paper_defaults();
  EXPECT_EQ(cfg.batch_size, 32u);
  EXPECT_EQ(cfg.layers, 4u);
  EXPECT_EQ(cfg.heads, 4u);
  EXPECT_EQ(cfg.model_dim, 512u);
  EXPECT_DOUBLE_EQ(cfg.margin, 0.05);
  EXPECT_DOUBLE_EQ(cfg.dropout, 0.1);
  EXPECT_EQ(cfg.max_features_per_expert, 30u);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(TrainConfigTest, RejectsBadFields) {
  auto check = [](auto mutate) {
    auto cfg = TrainConfig::tiny();
    mutate(cfg);
    EXPECT_THROW(cfg.validate(), ConfigError);
  };
  check([](TrainConfig& c) { c.batch_size = 1; });
  check([](TrainConfig& c) { c.decay_factor = 0.0; });
  check([](TrainConfig& c) { c.decay_factor = 1.5; });
  check([](TrainConfig& c) { c.heads = 3; });
  check([](TrainConfig& c) { c.initial_lr = 0.0; });
  check([](TrainConfig& c) { c.margin = -1.0; });
}

TEST_F(TrainingTest, DatasetSmallerThanBatchIsConfigError) {
  auto cfg = config(1);
  cfg.batch_size = 64;
  EXPECT_THROW(Trainer(cfg, ds()), ConfigError);
}

TEST_F(TrainingTest, SameSeedSameTraceAndBytes) {
  auto cfg = config(30);
  cfg.log_every_steps = 1;
  const auto a = train(ds(), cfg);
  const auto b = train(ds(), cfg);
  ASSERT_EQ(a.trace.losses.size(), 30u);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(a.trace.losses[i].loss, b.trace.losses[i].loss);
    EXPECT_EQ(a.trace.losses[i].grad_norm, b.trace.losses[i].grad_norm);
  }
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  cfg.seed = 1;
  const auto c = train(ds(), cfg);
  EXPECT_NE(c.trace.losses[0].loss, a.trace.losses[0].loss);
}

TEST_F(TrainingTest, StepZeroLossNearRandomExpectation) {
  auto cfg = config(1);
  cfg.batch_size = 32;  // the whole train split, so the batch order does not matter
  cfg.dropout = 0.0;
  cfg.log_every_steps = 1;
  Trainer trainer(cfg, ds());
  const auto eval = evaluate_split(trainer.model(), ds(), data::Split::train);
  const num::Tensor& s = eval.scores.values;
  const auto rec = trainer.train_step();
  EXPECT_NEAR(rec.loss, ranking_loss(s, cfg.margin), 1e-9);

  // Monte-Carlo expectation: shuffle the entries so no pair structure remains.
  num::Rng rng(99);
  std::vector<double> entries(s.values().begin(), s.values().end());
  double expected = 0;
  const int draws = 2000;
  for (int t = 0; t < draws; ++t) {
    rng.shuffle(std::span<double>(entries));
    expected += ranking_loss(num::Tensor(s.shape(), entries), cfg.margin);
  }
  expected /= draws;
  EXPECT_LT(std::abs(rec.loss - expected), 0.2 * expected) << rec.loss << " vs " << expected;
}

TEST_F(TrainingTest, GradientsStayFiniteForTwoThousandSteps) {
  auto cfg = config(2000);
  cfg.log_every_steps = 1;
  const auto r = train(ds(), cfg);
  ASSERT_EQ(r.trace.losses.size(), 2000u);
  for (const auto& rec : r.trace.losses) {
    ASSERT_TRUE(std::isfinite(rec.loss)) << rec.step;
    ASSERT_TRUE(std::isfinite(rec.grad_norm)) << rec.step;
  }
  EXPECT_LT(r.trace.losses.back().loss, r.trace.losses.front().loss);
}

TEST_F(TrainingTest, FreezeCaptionLeavesCaptionUntouched) {
  auto cfg = config(3);
  cfg.freeze_caption = true;
  Trainer trainer(cfg, ds());
  std::map<std::string, num::Tensor> before;
  for (const auto& p : trainer.model().params()) before[p.name] = p.value();
  trainer.run();
  bool video_moved = false;
  for (const auto& p : trainer.model().params()) {
    if (p.name.rfind("caption.", 0) == 0) {
      EXPECT_EQ(p.value(), before[p.name]) << p.name;
      for (double g : p.grad().values()) EXPECT_EQ(g, 0.0) << p.name;
    } else if (p.value() != before[p.name]) {
      video_moved = true;
    }
  }
  EXPECT_TRUE(video_moved);
}

TEST_F(TrainingTest, CheckpointRoundTripIsBitExact) {
  auto cfg = config(10);
  Trainer trainer(cfg, ds());
  trainer.run();
  TempDir dir;
  const auto ckpt = trainer.checkpoint();
  save_checkpoint(ckpt, dir / "m.mmtc");
  const auto back = load_checkpoint(dir / "m.mmtc");
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ckpt));
  const Model model = model_from_checkpoint(back);
  std::vector<const data::VideoRecord*> vids;
  std::vector<const data::CaptionRecord*> caps;
  for (const auto& v : ds().videos) vids.push_back(&v);
  for (const auto& c : ds().captions) caps.push_back(&c);
  const auto rv1 = trainer.model().represent_videos(vids), rv2 = model.represent_videos(vids);
  const auto rc1 = trainer.model().represent_captions(caps), rc2 = model.represent_captions(caps);
  for (std::size_t i = 0; i < rv1.size(); ++i) EXPECT_EQ(rv1[i].psi, rv2[i].psi);
  for (std::size_t i = 0; i < rc1.size(); ++i) {
    EXPECT_EQ(rc1[i].phi, rc2[i].phi);
    EXPECT_EQ(rc1[i].weights, rc2[i].weights);
  }
}

TEST_F(TrainingTest, ResumeMatchesUninterruptedRun) {
  auto cfg = config(24);
  cfg.log_every_steps = 1;
  Trainer full(cfg, ds());
  full.run();

  Trainer first(cfg, ds());
  first.run(11);  // stops mid-epoch (32 pairs, B = 8)
  TempDir dir;
  save_checkpoint(first.checkpoint(), dir / "c.mmtc");
  Trainer resumed(cfg, ds());
  resumed.restore(load_checkpoint(dir / "c.mmtc"));
  EXPECT_EQ(resumed.step(), 11u);
  resumed.run();
  ASSERT_EQ(resumed.trace().losses.size(), 13u);
  for (std::size_t i = 0; i < 13; ++i) {
    EXPECT_EQ(resumed.trace().losses[i].step, full.trace().losses[11 + i].step);
    EXPECT_EQ(resumed.trace().losses[i].loss, full.trace().losses[11 + i].loss);
  }
  EXPECT_EQ(encode_checkpoint(resumed.checkpoint()), encode_checkpoint(full.checkpoint()));
}

TEST_F(TrainingTest, CorruptionAndMismatchAreReported) {
  auto cfg = config(2);
  Trainer trainer(cfg, ds());
  trainer.run();
  TempDir dir;
  save_checkpoint(trainer.checkpoint(), dir / "c.mmtc");
  auto bytes = mmt::testing::read_bytes(dir / "c.mmtc");
  bytes[bytes.size() / 2] ^= 0x40;
  mmt::testing::write_bytes(dir / "flip.mmtc", bytes);
  EXPECT_THROW(load_checkpoint(dir / "flip.mmtc"), FormatError);
  bytes.resize(40);
  mmt::testing::write_bytes(dir / "short.mmtc", bytes);
  EXPECT_THROW(load_checkpoint(dir / "short.mmtc"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "none.mmtc"), MissingFileError);

  auto other = cfg;
  other.layers = 2;
  Trainer mismatched(other, ds());
  EXPECT_THROW(mismatched.restore(load_checkpoint(dir / "c.mmtc")), IncompatibleCheckpointError);

  // Dropout is not structural.
  auto dropout = cfg;
  dropout.dropout = 0.3;
  Trainer compatible(dropout, ds());
  EXPECT_NO_THROW(compatible.restore(load_checkpoint(dir / "c.mmtc")));

  auto manifest = ds().manifest;
  manifest.t_max = 99.0;
  EXPECT_THROW(check_compatible(trainer.checkpoint(), manifest), IncompatibleCheckpointError);
  EXPECT_NO_THROW(check_compatible(trainer.checkpoint(), ds().manifest));
}

TEST_F(TrainingTest, ValidationOnSchedule) {
  auto cfg = config(20);
  cfg.eval_every_steps = 10;
  Trainer trainer(cfg, ds());
  trainer.run();
  ASSERT_GE(trainer.trace().validation.size(), 2u);
  for (const auto& v : trainer.trace().validation) {
    EXPECT_EQ(v.step % 10, 0u);
    const double gm = std::cbrt(v.t2v.r1 * v.t2v.r5 * v.t2v.r10);
    EXPECT_NEAR(v.geometric_mean, gm, 1e-9);
  }
}

TEST_F(TrainingTest, SamplerCoversEachEpoch) {
  auto cfg = config(4);
  Trainer trainer(cfg, ds());
  trainer.run();
  auto order = trainer.sampler().order;
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
  // Four batches of 8 exhaust the epoch; the fifth starts a fresh permutation.
  EXPECT_EQ(trainer.sampler().cursor, 32u);
  const auto epoch = trainer.sampler().epoch;
  trainer.train_step();
  EXPECT_EQ(trainer.sampler().cursor, 8u);
  EXPECT_EQ(trainer.sampler().epoch, epoch + 1);
}

TEST_F(TrainingTest, TinyDatasetOverfits) {
  auto cfg = TrainConfig::tiny();
  cfg.dropout = 0.0;
  cfg.total_steps = 600;
  const auto r = train(ds(), cfg);
  const Model model = model_from_checkpoint(r.checkpoint);
  const auto eval = evaluate_split(model, ds(), data::Split::train);
  EXPECT_EQ(eval.t2v.r1, 100.0);
  EXPECT_EQ(eval.v2t.r1, 100.0);
}

}  // namespace
}  // namespace mmt
