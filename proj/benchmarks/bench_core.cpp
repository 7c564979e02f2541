#include <benchmark/benchmark.h>

#include <random>

#include "ppgfm/autodiff.hpp"
#include "ppgfm/morphology.hpp"
#include "ppgfm/preprocess.hpp"
#include "ppgfm/ssl.hpp"
#include "ppgfm/waveform.hpp"

using namespace ppgfm;

namespace {

Tensor<float> random_tensor(std::vector<int64_t> shape, uint64_t seed) {
  Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

static void Conv1dForward(benchmark::State& state) {
  const int64_t batch = state.range(0);
  auto x = ad::Var<float>::leaf(random_tensor({batch, 32, 1250}, 1));
  auto w = ad::Var<float>::leaf(random_tensor({32, 32, 3}, 2));
  auto b = ad::Var<float>::leaf(Tensor<float>({32}));
  ad::NoGradGuard guard;
  for (auto _ : state) {
    auto y = ad::conv1d(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y.value().data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(Conv1dForward)->Arg(8)->Arg(32);

static void Conv1dBackward(benchmark::State& state) {
  const int64_t batch = state.range(0);
  auto x = ad::Var<float>::leaf(random_tensor({batch, 32, 1250}, 3), true);
  auto w = ad::Var<float>::leaf(random_tensor({32, 32, 3}, 4), true);
  auto b = ad::Var<float>::leaf(Tensor<float>({32}), true);
  for (auto _ : state) {
    auto loss = ad::mean_all(ad::conv1d(x, w, b, 1, 1));
    ad::backward(loss);
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(Conv1dBackward)->Arg(8)->Arg(32);

static void NtxentLoss(benchmark::State& state) {
  const int64_t rows = state.range(0);
  auto z = ad::Var<float>::leaf(random_tensor({rows, 512}, 5));
  ad::NoGradGuard guard;
  for (auto _ : state) {
    auto loss = ntxent(z, 0.5f);
    benchmark::DoNotOptimize(loss.value().item());
  }
}
BENCHMARK(NtxentLoss)->Arg(16)->Arg(128);

static void BandpassFilter(benchmark::State& state) {
  const auto synth = synth_ppg(70.0, 500.0, 60.0, 0.5, 0.05, 6);
  for (auto _ : state) {
    auto y = bandpass_filter(synth.record.samples, 500.0, {});
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * synth.record.samples.size());
}
BENCHMARK(BandpassFilter);

static void ResampleDown4x(benchmark::State& state) {
  const auto synth = synth_ppg(70.0, 500.0, 10.0, 0.5, 0.05, 7);
  for (auto _ : state) {
    auto y = resample(synth.record.samples, 500.0, 125.0);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * synth.record.samples.size());
}
BENCHMARK(ResampleDown4x);

static void BeatDetection(benchmark::State& state) {
  const auto synth = synth_ppg(72.0, 125.0, 10.0, 0.5, 0.05, 8);
  Segment seg;
  seg.values.assign(synth.record.samples.begin(), synth.record.samples.end());
  seg.fs_hz = 125.0;
  for (auto _ : state) {
    auto beats = detect_beats(seg);
    benchmark::DoNotOptimize(beats.size());
  }
}
BENCHMARK(BeatDetection);

static void SegmentMorphology(benchmark::State& state) {
  const auto synth = synth_ppg(72.0, 125.0, 10.0, 0.5, 0.05, 9);
  Segment seg;
  seg.values.assign(synth.record.samples.begin(), synth.record.samples.end());
  seg.fs_hz = 125.0;
  for (auto _ : state) {
    auto labels = segment_morphology(seg);
    benchmark::DoNotOptimize(labels.has_value());
  }
}
BENCHMARK(SegmentMorphology);

BENCHMARK_MAIN();
