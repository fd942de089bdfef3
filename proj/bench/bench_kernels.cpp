// GEMM and convolution throughput: OpenMP kernels against the serial references.

#include "triage/nn/kernels.hpp"
#include "triage/phantom.hpp"
#include "triage/threshold.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace triage;
using namespace triage::nn;

namespace {

std::vector<float> random_vector(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v)
        x = u(rng);
    return v;
}

template <bool Reference>
void BM_Gemm(benchmark::State& state)
{
    const int n = int(state.range(0));
    const auto a = random_vector(std::size_t(n) * n, 1), b = random_vector(std::size_t(n) * n, 2);
    std::vector<float> c(std::size_t(n) * n);
    for (auto _ : state) {
        if constexpr (Reference)
            reference::gemm_nn(n, n, n, a.data(), n, b.data(), n, c.data(), n);
        else
            gemm_nn(n, n, n, a.data(), n, b.data(), n, c.data(), n);
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["GFLOP"] = benchmark::Counter(2e-9 * n * n * n * double(state.iterations()),
                                                   benchmark::Counter::kIsRate);
}

// (channels, extent): a 2D 3x3 convolution over a channels x extent^2 slice.
template <bool Reference>
void BM_Conv2d(benchmark::State& state)
{
    const int c = int(state.range(0)), s = int(state.range(1));
    Tensor<float> x(1, c, 1, s, s);
    x.data = random_vector(x.size(), 3);
    const Kernel3 k{1, 3, 3};
    const auto w = random_vector(std::size_t(c) * c * 9, 4), b = random_vector(std::size_t(c), 5);
    Tensor<float> y;
    for (auto _ : state) {
        if constexpr (Reference)
            reference::conv_forward<float>(x, w, b, c, k, y);
        else
            conv_forward<float>(x, w, b, c, k, y);
        benchmark::DoNotOptimize(y.data.data());
    }
    state.counters["GFLOP"] = benchmark::Counter(2e-9 * double(c) * c * 9 * s * s * double(state.iterations()),
                                                   benchmark::Counter::kIsRate);
}

template <bool Reference>
void BM_ConvBackward2d(benchmark::State& state)
{
    const int c = int(state.range(0)), s = int(state.range(1));
    Tensor<float> x(1, c, 1, s, s), gy(1, c, 1, s, s), gx(1, c, 1, s, s);
    x.data = random_vector(x.size(), 6);
    gy.data = random_vector(gy.size(), 7);
    const Kernel3 k{1, 3, 3};
    const auto w = random_vector(std::size_t(c) * c * 9, 8);
    std::vector<float> gw(w.size()), gb(static_cast<std::size_t>(c));
    for (auto _ : state) {
        if constexpr (Reference)
            reference::conv_backward<float>(x, w, gy, k, &gx, gw, gb);
        else
            conv_backward<float>(x, w, gy, k, &gx, gw, gb);
        benchmark::DoNotOptimize(gx.data.data());
    }
}

void BM_ThresholdSegment(benchmark::State& state)
{
    const Phantom p = generate_phantom(random_phantom_spec(1, true, {32, 96, 96}));
    for (auto _ : state)
        benchmark::DoNotOptimize(threshold_segment(p.volume, p.lungs).count());
}

} // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/omp")->Arg(128)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<true>)->Name("gemm/reference")->Arg(128)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2d<false>)->Name("conv2d/omp")->Args({16, 128})->Args({64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2d<true>)->Name("conv2d/reference")->Args({16, 128})->Args({64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward2d<false>)->Name("conv2d_backward/omp")->Args({16, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward2d<true>)->Name("conv2d_backward/reference")->Args({16, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ThresholdSegment)->Name("threshold_segment/32x96x96")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
