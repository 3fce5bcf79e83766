#include <benchmark/benchmark.h>

#include "deblurkit/ops.hpp"
#include "deblurkit/rng.hpp"
#include "deblurkit/tensor.hpp"

#include <vector>

namespace {

dbk::Tensor random_tensor(dbk::TensorShape s, dbk::Rng& rng) {
    std::vector<float> v(static_cast<std::size_t>(s.numel()));
    for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return dbk::Tensor::from_data(std::move(v), s);
}

void BM_Conv3x3(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const int hw = static_cast<int>(state.range(1));
    dbk::Rng rng(1);
    dbk::Tensor x = random_tensor({1, c, hw, hw}, rng);
    dbk::Tensor w = random_tensor({c, c, 3, 3}, rng);
    dbk::NoGradGuard inference;
    for (auto _ : state) {
        dbk::Tensor y = dbk::ops::conv2d(x, w, {}, {.stride = 1, .padding = 1});
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() *
                            dbk::ops::conv2d_macs(hw, hw, c, c, 3, 3));
}
BENCHMARK(BM_Conv3x3)->Args({32, 64})->Args({64, 64})->Args({128, 32});

void BM_ConvPointwise(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const int hw = static_cast<int>(state.range(1));
    dbk::Rng rng(2);
    dbk::Tensor x = random_tensor({1, c, hw, hw}, rng);
    dbk::Tensor w = random_tensor({c, c, 1, 1}, rng);
    dbk::NoGradGuard inference;
    for (auto _ : state) {
        dbk::Tensor y = dbk::ops::conv2d(x, w, {}, {});
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() *
                            dbk::ops::conv2d_macs(hw, hw, c, c, 1, 1));
}
BENCHMARK(BM_ConvPointwise)->Args({64, 64})->Args({128, 64});

void BM_ConvDepthwise(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const int hw = static_cast<int>(state.range(1));
    dbk::Rng rng(3);
    dbk::Tensor x = random_tensor({1, c, hw, hw}, rng);
    dbk::Tensor w = random_tensor({c, 1, 3, 3}, rng);
    dbk::NoGradGuard inference;
    for (auto _ : state) {
        dbk::Tensor y =
            dbk::ops::conv2d(x, w, {}, {.stride = 1, .padding = 1, .groups = c});
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() *
                            dbk::ops::conv2d_macs(hw, hw, c, 1, 3, 3));
}
BENCHMARK(BM_ConvDepthwise)->Args({64, 64})->Args({128, 64});

void BM_InstanceNorm(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    dbk::Rng rng(4);
    dbk::Tensor x = random_tensor({1, c, 64, 64}, rng);
    dbk::Tensor gamma = dbk::Tensor::full({1, c, 1, 1}, 1.0f);
    dbk::Tensor beta = dbk::Tensor::zeros({1, c, 1, 1});
    dbk::NoGradGuard inference;
    for (auto _ : state) {
        dbk::Tensor y = dbk::ops::instance_norm(x, gamma, beta);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_InstanceNorm)->Arg(32)->Arg(128);

} // namespace

BENCHMARK_MAIN();
