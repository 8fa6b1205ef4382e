#include <benchmark/benchmark.h>

#include "moerlab/matrix.hpp"
#include "moerlab/moe.hpp"
#include "moerlab/rng.hpp"
#include "moerlab/router.hpp"

namespace {

using namespace moerlab;

RouterParams make_router(RouterKind kind, std::size_t m, std::size_t d) {
    Rng rng(42);
    RouterParams params;
    params.kind = kind;
    params.w = kaiming_init(m, d, rng);
    params.b.assign(m, 0.0);
    rng.fill_normal(params.b, 0.0, 0.1);
    return params;
}

void BM_RouterForward(benchmark::State& state, RouterKind kind) {
    const std::size_t m = static_cast<std::size_t>(state.range(0));
    const std::size_t d = 64;
    const RouterParams params = make_router(kind, m, d);
    Rng rng(7);
    Vector x(d);
    rng.fill_normal(x, 0.0, 1.0);
    for (auto _ : state) {
        GateOutput gate = router_forward(params, x);
        benchmark::DoNotOptimize(gate.dense_gates.data());
    }
}

void BM_Route(benchmark::State& state, RouterKind kind) {
    const std::size_t m = static_cast<std::size_t>(state.range(0));
    const std::size_t d = 64;
    const std::size_t k = m / 8 ? m / 8 : 1;
    const RouterParams params = make_router(kind, m, d);
    Rng rng(7);
    Vector x(d);
    rng.fill_normal(x, 0.0, 1.0);
    for (auto _ : state) {
        GateOutput gate = route(params, x, k);
        benchmark::DoNotOptimize(gate.sparse_gates.data());
    }
}

void BM_MoeForward(benchmark::State& state) {
    const std::size_t m = static_cast<std::size_t>(state.range(0));
    Rng rng(42);
    const MoeLayer layer = make_moe_layer(RouterKind::Kern, m, m / 8 ? m / 8 : 1, 64, 128,
                                          Activation::Gelu, 1e-8, 1.0, rng);
    Vector x(64);
    rng.fill_normal(x, 0.0, 1.0);
    for (auto _ : state) {
        Vector out = moe_forward(layer, x);
        benchmark::DoNotOptimize(out.data());
    }
}

void BM_Matmul(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(42);
    const Matrix a = kaiming_init(n, n, rng);
    const Matrix b = kaiming_init(n, n, rng);
    for (auto _ : state) {
        Matrix c = matmul(a, b);
        benchmark::DoNotOptimize(c.flat().data());
    }
}

BENCHMARK_CAPTURE(BM_RouterForward, softmax, RouterKind::Softmax)->Arg(16)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_RouterForward, sigmoid, RouterKind::Sigmoid)->Arg(16)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_RouterForward, kern, RouterKind::Kern)->Arg(16)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_Route, softmax, RouterKind::Softmax)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_Route, kern, RouterKind::Kern)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_Route, kern_after_topk, RouterKind::KernAfterTopK)->Arg(64)->Arg(256);
BENCHMARK(BM_MoeForward)->Arg(8)->Arg(64);
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
