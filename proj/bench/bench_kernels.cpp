// Serial reference loops vs the OpenMP kernels on layer shapes from the SR models.
#include <benchmark/benchmark.h>

#include <vector>

#include "tdsr/core/rng.hpp"
#include "tdsr/kernels/conv.hpp"

using namespace tdsr;
using namespace tdsr::kernels;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Args: in_c, out_c, kernel, side.
ConvShape shape_of(const benchmark::State& st) {
  ConvShape s;
  s.in_c = static_cast<int>(st.range(0));
  s.out_c = static_cast<int>(st.range(1));
  s.kh = s.kw = static_cast<int>(st.range(2));
  s.pad_h = s.pad_w = s.kh / 2;
  return s;
}

template <Policy P>
void BM_ConvForward(benchmark::State& st) {
  const auto s = shape_of(st);
  const int n = static_cast<int>(st.range(3));
  const auto in = filled(static_cast<std::size_t>(s.in_c) * n * n, 1);
  const auto w = filled(s.weight_size(), 2);
  const auto b = filled(s.out_c, 3);
  std::vector<double> out(static_cast<std::size_t>(s.out_c) * s.out_h(n) * s.out_w(n));
  for (auto _ : st) {
    conv2d_forward(s, n, n, in, w, b, out, P);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(out.size()) * s.in_c * s.kh * s.kw);
}

template <Policy P>
void BM_ConvBackwardInput(benchmark::State& st) {
  const auto s = shape_of(st);
  const int n = static_cast<int>(st.range(3));
  const auto w = filled(s.weight_size(), 2);
  const auto go = filled(static_cast<std::size_t>(s.out_c) * s.out_h(n) * s.out_w(n), 4);
  std::vector<double> gi(static_cast<std::size_t>(s.in_c) * n * n);
  for (auto _ : st) {
    conv2d_backward_input(s, n, n, go, w, gi, P);
    benchmark::DoNotOptimize(gi.data());
  }
}

template <Policy P>
void BM_ConvBackwardWeight(benchmark::State& st) {
  const auto s = shape_of(st);
  const int n = static_cast<int>(st.range(3));
  const auto in = filled(static_cast<std::size_t>(s.in_c) * n * n, 1);
  const auto go = filled(static_cast<std::size_t>(s.out_c) * s.out_h(n) * s.out_w(n), 4);
  std::vector<double> gw(s.weight_size()), gb(s.out_c);
  for (auto _ : st) {
    conv2d_backward_weight(s, n, n, in, go, gw, gb, P);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <Policy P>
void BM_DeconvForward(benchmark::State& st) {
  ConvTransposeShape s;
  s.in_c = static_cast<int>(st.range(0));
  s.out_c = 1;
  const int n = static_cast<int>(st.range(1));
  const auto in = filled(static_cast<std::size_t>(s.in_c) * n * n, 1);
  const auto w = filled(s.weight_size(), 2);
  const auto b = filled(1, 3);
  std::vector<double> out(static_cast<std::size_t>(s.out_h(n)) * s.out_w(n));
  for (auto _ : st) {
    conv_transpose2d_forward(s, n, n, in, w, b, out, P);
    benchmark::DoNotOptimize(out.data());
  }
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({1, 16, 9, 64});   // SRCNN feature layer, quarter width
  b->Args({16, 8, 5, 64});   // SRCNN tail
  b->Args({16, 16, 3, 32});  // SRResNet block
  b->Args({64, 64, 3, 32});  // full-width SRResNet block
  b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<Policy::Serial>)->Apply(conv_args);
BENCHMARK(BM_ConvForward<Policy::Parallel>)->Apply(conv_args);
BENCHMARK(BM_ConvBackwardInput<Policy::Serial>)->Apply(conv_args);
BENCHMARK(BM_ConvBackwardInput<Policy::Parallel>)->Apply(conv_args);
BENCHMARK(BM_ConvBackwardWeight<Policy::Serial>)->Apply(conv_args);
BENCHMARK(BM_ConvBackwardWeight<Policy::Parallel>)->Apply(conv_args);
BENCHMARK(BM_DeconvForward<Policy::Serial>)->Args({14, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DeconvForward<Policy::Parallel>)->Args({14, 16})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
