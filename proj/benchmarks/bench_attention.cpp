#include <benchmark/benchmark.h>

#include "pbev/rng.hpp"
#include "pbev/window_attention.hpp"

namespace {

using namespace pbev;

SparseTemporalSet clustered_set(size_t n, int dim, int t_max) {
    Rng rng(777);
    SparseTemporalSet set;
    set.dim = dim;
    std::set<std::tuple<int, int, int>> used;
    while (set.entries.size() < n) {
        // clusters mimic thresholded vehicle blobs
        const int cluster = static_cast<int>(rng.next_below(12));
        const int cx = (cluster % 4) * 50 + 10;
        const int cy = (cluster / 4) * 60 + 15;
        const int t = set.entries.size() < n / 8 ? 0 : static_cast<int>(rng.next_below(t_max + 1));
        const int ix = cx + static_cast<int>(rng.next_below(12));
        const int iy = cy + static_cast<int>(rng.next_below(12));
        if (!used.insert({t, ix, iy}).second) continue;
        set.entries.push_back({t, ix, iy});
        for (int d = 0; d < dim; ++d) set.features.push_back(rng.next_normal());
    }
    return set;
}

void BM_SubmanifoldAttention(benchmark::State& state) {
    const SparseTemporalSet set = clustered_set(4000, 32, 8);
    const AttentionParams params = AttentionParams::random(32, 4);
    const WindowSpec window{8, 4, 4, false};
    for (auto _ : state) {
        benchmark::DoNotOptimize(submanifold_attention(set, window, params));
    }
    const auto lists = build_neighbor_index(set, window);
    uint64_t pairs = 0;
    for (const auto& l : lists) pairs += l.size();
    state.counters["pairs"] = static_cast<double>(pairs);
}
BENCHMARK(BM_SubmanifoldAttention);

void BM_DenseAttentionOracle(benchmark::State& state) {
    const SparseTemporalSet set = clustered_set(1000, 32, 8);
    const AttentionParams params = AttentionParams::random(32, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(dense_attention_oracle(set, params));
    }
}
BENCHMARK(BM_DenseAttentionOracle);

void BM_NeighborIndex(benchmark::State& state) {
    const SparseTemporalSet set = clustered_set(4000, 8, 8);
    const WindowSpec window{8, 4, 4, false};
    for (auto _ : state) {
        benchmark::DoNotOptimize(build_neighbor_index(set, window));
    }
}
BENCHMARK(BM_NeighborIndex);

} // namespace
