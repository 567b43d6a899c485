#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fstta/kernels.hpp"

namespace k = fstta::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

// Shapes of the default backbone on a 64-sample batch: block 2 of 16 -> 32 channels on 16 x 16 maps.
k::ConvGeometry conv_shape(benchmark::State& state) {
    return {.batch = static_cast<std::size_t>(state.range(0)), .in_channels = 16, .out_channels = 32,
            .height = 16, .width = 16, .ksize = 3};
}

void BM_ConvForward(benchmark::State& state) {
    const auto g = conv_shape(state);
    const auto x = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2);
    std::vector<double> y(g.output_size()), cols(g.col_size());
    for (auto _ : state) {
        k::conv2d_forward(g, x, w, y, cols);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.batch));
}

void BM_ConvForwardReference(benchmark::State& state) {
    const auto g = conv_shape(state);
    const auto x = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2);
    std::vector<double> y(g.output_size());
    for (auto _ : state) {
        k::reference::conv2d_forward(g, x, w, y);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.batch));
}

void BM_ConvBackward(benchmark::State& state) {
    const auto g = conv_shape(state);
    const auto x = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2);
    const auto dy = random_vec(g.output_size(), 3);
    std::vector<double> y(g.output_size()), cols(g.col_size()), dx(g.input_size()), dw(g.weight_size());
    k::conv2d_forward(g, x, w, y, cols);
    for (auto _ : state) {
        k::conv2d_backward(g, cols, w, dy, dx, dw);
        benchmark::DoNotOptimize(dw.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.batch));
}

void BM_ConvBackwardReference(benchmark::State& state) {
    const auto g = conv_shape(state);
    const auto x = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2);
    const auto dy = random_vec(g.output_size(), 3);
    std::vector<double> dx(g.input_size()), dw(g.weight_size());
    for (auto _ : state) {
        k::reference::conv2d_backward(g, x, w, dy, dx, dw);
        benchmark::DoNotOptimize(dw.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.batch));
}

void BM_InstanceNorm(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0)), c = 32, hw = 256;
    const auto x = random_vec(n * c * hw, 4);
    const std::vector<double> gamma(c, 1.0), beta(c, 0.0);
    std::vector<double> y(x.size()), xhat(x.size()), inv(n * c);
    for (auto _ : state) {
        k::instance_norm_forward(n, c, hw, x, gamma, beta, 1e-5, y, xhat, inv);
        benchmark::DoNotOptimize(y.data());
    }
}

void BM_InstanceNormReference(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0)), c = 32, hw = 256;
    const auto x = random_vec(n * c * hw, 4);
    const std::vector<double> gamma(c, 1.0), beta(c, 0.0);
    std::vector<double> y(x.size());
    for (auto _ : state) {
        k::reference::instance_norm_forward(n, c, hw, x, gamma, beta, 1e-5, y);
        benchmark::DoNotOptimize(y.data());
    }
}

void BM_Gemm(benchmark::State& state) {
    const std::size_t m = static_cast<std::size_t>(state.range(0));
    const auto a = random_vec(m * m, 5), b = random_vec(m * m, 6);
    std::vector<double> c(m * m);
    for (auto _ : state) {
        k::gemm_nn(m, m, m, a, b, c);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * m * m * m));
}

void BM_GemmReference(benchmark::State& state) {
    const std::size_t m = static_cast<std::size_t>(state.range(0));
    const auto a = random_vec(m * m, 5), b = random_vec(m * m, 6);
    std::vector<double> c(m * m);
    for (auto _ : state) {
        k::reference::gemm_nn(m, m, m, a, b, c);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * m * m * m));
}

}  // namespace

BENCHMARK(BM_ConvForward)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardReference)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardReference)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InstanceNorm)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_InstanceNormReference)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Gemm)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
