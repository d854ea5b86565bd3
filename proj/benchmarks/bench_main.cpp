#include <benchmark/benchmark.h>

#include <random>

#include "stepsteer/backend/protocol.hpp"
#include "stepsteer/backend/toy_model.hpp"
#include "stepsteer/layer_select.hpp"
#include "stepsteer/probe.hpp"
#include "stepsteer/steer.hpp"

using namespace stepsteer;

namespace {

Vector random_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector v(dim);
  for (double& x : v) x = n(rng);
  return v;
}

void BM_ApplySteer(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto h = random_vector(rng, dim), d = random_vector(rng, dim);
  for (auto _ : state) benchmark::DoNotOptimize(apply_steer(h, d, 1.5));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ApplySteer)->Arg(64)->Arg(4096);

void BM_GatedSteerClosed(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto h = random_vector(rng, 4096);
  for (auto _ : state) benchmark::DoNotOptimize(gated_steer(h, h, 1.5, 0.5));
}
BENCHMARK(BM_GatedSteerClosed);

void BM_BuildSteeringVector(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<HiddenState> pos, neg;
  for (std::size_t i = 0; i < n; ++i) {
    pos.push_back({0, static_cast<std::int64_t>(i), random_vector(rng, 1024)});
    neg.push_back({0, static_cast<std::int64_t>(i), random_vector(rng, 1024)});
  }
  for (auto _ : state) benchmark::DoNotOptimize(build_steering_vector(pos, neg, DirectionKind::Strict));
}
BENCHMARK(BM_BuildSteeringVector)->Arg(100)->Arg(1000);

void BM_ProbeForward(benchmark::State& state) {
  const auto w = ProbeWeights::initialize(1024, {256, 256}, 0);
  std::mt19937_64 rng(4);
  const auto x = random_vector(rng, 1024);
  for (auto _ : state) benchmark::DoNotOptimize(probe_forward(x, w));
}
BENCHMARK(BM_ProbeForward);

void BM_Auc(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = static_cast<double>(rng() % 1000);
    labels[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(auc(scores, labels));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);

void BM_ToyGenerate(benchmark::State& state) {
  const ToyModel model;
  const auto prompt = model.tokenize("Check each paragraph of the solution and give the first wrong one.");
  GenerateOptions g;
  g.max_tokens = 64;
  g.tap_layers = {1, 2};
  std::size_t tokens = 0;
  for (auto _ : state) {
    const auto r = model.generate(prompt, g);
    tokens += r.generated_tokens();
  }
  state.counters["tokens/s"] = benchmark::Counter(static_cast<double>(tokens), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_ToyGenerate)->Unit(benchmark::kMillisecond);

void BM_FrameRoundTrip(benchmark::State& state) {
  std::mt19937_64 rng(6);
  const Json msg{{"type", "TOKEN"},
                 {"token_position", 42},
                 {"decoded_text", "\n\n"},
                 {"states", {{"12", vector_to_json(random_vector(rng, 4096))}}}};
  for (auto _ : state) {
    FrameDecoder d;
    d.feed(encode_frame(msg));
    benchmark::DoNotOptimize(d.next());
  }
}
BENCHMARK(BM_FrameRoundTrip)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
