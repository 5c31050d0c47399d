#include <benchmark/benchmark.h>

#include "burstforge/alignment.hpp"
#include "burstforge/attention.hpp"
#include "burstforge/ops.hpp"
#include "burstforge/rng.hpp"
#include "burstforge/state_space.hpp"

using namespace burstforge;

namespace {

Tensor rnd(Splitmix64& rng, std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

}  // namespace

static void BM_Conv2d(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    Splitmix64 rng(1);
    Tensor in = rnd(rng, {1, c, 64, 64});
    Tensor w = rnd(rng, {c, c, 3, 3});
    Tensor b = rnd(rng, {c});
    for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(in, w, b, 1, 1));
    state.SetItemsProcessed(state.iterations() * in.numel());
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32);

static void BM_WindowAttention(benchmark::State& state) {
    const int hw = static_cast<int>(state.range(0)), c = 24;
    Splitmix64 rng(2);
    attn::WindowSpec spec{8, 0.5f, 4};
    const int side = attn::relpos_table_side(spec.window, spec.kv_window());
    attn::CwaParams p;
    p.q_w = rnd(rng, {c, c, 1, 1});
    p.q_b = rnd(rng, {c});
    p.k_w = rnd(rng, {c, c, 1, 1});
    p.k_b = rnd(rng, {c});
    p.v_w = rnd(rng, {c, c, 1, 1});
    p.v_b = rnd(rng, {c});
    p.proj_w = rnd(rng, {c, c});
    p.proj_b = rnd(rng, {c});
    p.bias.table = rnd(rng, {spec.heads, side * side});
    Tensor f = rnd(rng, {1, c, hw, hw});
    for (auto _ : state) benchmark::DoNotOptimize(attn::cwa_block(f, p, spec));
    state.SetItemsProcessed(state.iterations() * f.numel());
}
BENCHMARK(BM_WindowAttention)->Arg(16)->Arg(32)->Arg(48);

static void BM_SelectiveScan(benchmark::State& state) {
    const int l = static_cast<int>(state.range(0)), d = 32, s = 16;
    Splitmix64 rng(3);
    ssm::SsmParams p;
    p.a_log = rnd(rng, {d, s});
    p.skip_d = rnd(rng, {d});
    p.delta_w = rnd(rng, {d, d});
    p.delta_bias = rnd(rng, {d});
    p.b_w = rnd(rng, {s, d});
    p.b_bias = rnd(rng, {s});
    p.c_w = rnd(rng, {s, d});
    p.c_bias = rnd(rng, {s});
    Tensor x = rnd(rng, {l, d});
    for (auto _ : state) benchmark::DoNotOptimize(ssm::selective_scan_1d(x, p));
    state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_SelectiveScan)->Arg(1024)->Arg(4096)->Arg(9216);

static void BM_DeformConv(benchmark::State& state) {
    const int hw = static_cast<int>(state.range(0)), c = 32, g = 4;
    Splitmix64 rng(4);
    Tensor f = rnd(rng, {c, hw, hw});
    Tensor off = rnd(rng, {2 * 9 * g, hw, hw});
    Tensor w = rnd(rng, {c, c, 3, 3});
    Tensor b = rnd(rng, {c});
    for (auto _ : state) benchmark::DoNotOptimize(align::deform_conv(f, off, w, b, g));
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(hw) * hw * c);
}
BENCHMARK(BM_DeformConv)->Arg(16)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
