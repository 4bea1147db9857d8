// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <filesystem>

#include "mmt/data/synthetic.hpp"
#include "mmt/matching.hpp"
#include "mmt/numerics/attention.hpp"
#include "mmt/training.hpp"

namespace {

using namespace mmt;
using num::Shape;
using num::Tensor;

Tensor random_tensor(Shape shape, num::Rng& rng) {
  Tensor t(shape);
  for (auto& x : t.values()) x = rng.normal();
  return t;
}

// Offline retrieval over precomputed stores: 7 experts, d = 512.
void BM_StoreSimilarity(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t experts = 7, dim = 512;
  num::Rng rng(1);
  std::vector<std::string> vid_ids, cap_ids;
  std::vector<VideoRepresentation> videos;
  std::vector<CaptionRepresentation> captions;
  for (std::size_t i = 0; i < n; ++i) {
    vid_ids.push_back("v" + std::to_string(i));
    cap_ids.push_back("c" + std::to_string(i));
    videos.push_back({random_tensor(Shape{experts, dim}, rng), std::vector<std::uint8_t>(experts, 1)});
    captions.push_back({Tensor(Shape{1}), random_tensor(Shape{experts, dim}, rng),
                        std::vector<double>(experts, 1.0 / experts)});
  }
  const auto vs = VideoStore::build(vid_ids, videos, {});
  const auto cs = CaptionStore::build(cap_ids, captions);
  for (auto _ : state) {
    auto s = similarity_matrix(vs, cs);
    benchmark::DoNotOptimize(s.values.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n));
}
BENCHMARK(BM_StoreSimilarity)->Arg(256)->Arg(1000)->Unit(benchmark::kMillisecond);

// One transformer layer over a batch of 32 videos with 7 experts x 31 tokens.
void BM_EncoderForward(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const std::size_t batch = 32, block = 7 * 31;
  num::ParameterStore store;
  num::Rng rng(2);
  const num::TransformerEncoder enc(store, "enc", {dim, 4}, 1, 4 * dim, rng);
  const num::Var x(random_tensor(Shape{batch * block, dim}, rng));
  const std::vector<std::uint8_t> mask(batch * block, 1);
  num::NoGradGuard guard;
  for (auto _ : state) {
    auto y = enc.forward(x, mask, block, {});
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_EncoderForward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

// Full optimisation step with the tiny preset on the default synthetic set.
void BM_TrainStep(benchmark::State& state) {
  const auto dir = std::filesystem::temp_directory_path() / "mmt_bench_train";
  std::filesystem::remove_all(dir);
  const auto manifest = data::generate_synthetic_dataset(data::SyntheticSpec{}, 0, dir);
  const auto cfg = TrainConfig::tiny();
  const auto ds = data::load_dataset(manifest, cfg.load_options());
  Trainer trainer(cfg, ds);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step().loss);
  std::filesystem::remove_all(dir);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
