#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "hisem/bdam.hpp"
#include "hisem/data.hpp"
#include "hisem/metrics.hpp"
#include "hisem/model.hpp"
#include "hisem/ops.hpp"
#include "hisem/params.hpp"

using namespace hisem;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::vector<Real> v(numel_of(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  Tensor x = random_tensor({7, 7, c}, rng), w = random_tensor({3, 3, c, c}, rng), b = random_tensor({c}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv3x3(x, w, b));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(64);

void BM_BdamForward(benchmark::State& state) {
  Rng rng(3);
  BdamConfig cfg;
  cfg.layers = static_cast<std::size_t>(state.range(0));
  ParamStore store;
  const auto layers = make_bdam(cfg, store, "bdam", rng);
  const BiTemporalFeatures x{random_tensor({49, 64}, rng), random_tensor({49, 64}, rng), 7, 7};
  for (auto _ : state) benchmark::DoNotOptimize(bdam_forward(x, layers));
}
BENCHMARK(BM_BdamForward)->Arg(1)->Arg(3);

// One forward + backward pass of the default model on one synthetic pair.
void BM_TrainStep(benchmark::State& state) {
  SynthConfig sc;
  const auto records = synth_generate(2, sc, 4);
  ModelConfig cfg;
  cfg.input_dim = sc.dim;
  cfg.height = sc.height;
  cfg.width = sc.width;
  cfg.decoder.vocab_size = 40;
  cfg.finalize();
  HiSemModel model(cfg, 5);
  const std::vector<int> ids{Vocabulary::kBos, 4, 5, 6, 7, Vocabulary::kEos};
  const std::vector<int> next{4, 5, 6, 7, Vocabulary::kEos, -1};
  const auto x = records[1].features();
  for (auto _ : state) {
    Tape tape;
    EncodeResult enc = model.encode(x, 1);
    Tensor loss = cross_entropy(model.caption_logits(enc.hasd.visual, ids), next);
    tape.backward(loss);
    model.params().zero_grad();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Metrics(benchmark::State& state) {
  SynthConfig sc;
  sc.dim = 8;
  const auto records = synth_generate(static_cast<std::size_t>(state.range(0)), sc, 6);
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : records) {
    cands.push_back(r.captions[1]);
    refs.push_back(r.captions);
  }
  for (auto _ : state) benchmark::DoNotOptimize(score_corpus(cands, refs, true));
}
BENCHMARK(BM_Metrics)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
