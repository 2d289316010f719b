#include <benchmark/benchmark.h>

#include "pbev/rng.hpp"
#include "pbev/sparse_pulling.hpp"

namespace {

using namespace pbev;

struct PullingSetup {
    BevGrid grid;
    PillarSpec pillar;
    CameraRig rig = CameraRig::synthetic();
    std::vector<FeatureVolume> vols;
    PointBatch batch;
    VisibilityTable table;
    std::vector<double> grad;

    PullingSetup(int grid_n, int n_z, int channels)
        : grid(100.0, 100.0, 100.0 / grid_n), pillar(-1.0, 3.0, n_z) {
        Rng rng(12345);
        for (const auto& cam : rig.cameras()) {
            FeatureVolume vol(cam.camera_id(), channels, cam.feat_height(), cam.feat_width());
            for (double& v : vol.data) v = rng.next_normal();
            vols.push_back(std::move(vol));
        }
        const auto zs = pillar.z_samples();
        for (int iy = 0; iy < grid.ny(); ++iy) {
            for (int ix = 0; ix < grid.nx(); ++ix) {
                const auto [x, y] = grid.cell_to_world(ix, iy);
                for (int iz = 0; iz < n_z; ++iz) batch.push({x, y, zs[iz]}, 0, {ix, iy, iz});
            }
        }
        table = build_visibility_table(rig, batch);
        grad.assign(batch.size() * channels, 1.0);
    }
};

const PullingSetup& desk_setup() {
    static const PullingSetup setup(50, 8, 16);
    return setup;
}

void BM_SparsePullForward(benchmark::State& state) {
    const auto& s = desk_setup();
    for (auto _ : state) {
        benchmark::DoNotOptimize(sparse_pull(s.vols, s.table));
    }
    state.counters["interp_ops"] = static_cast<double>(s.table.total_entries());
}
BENCHMARK(BM_SparsePullForward);

void BM_NaivePullForward(benchmark::State& state) {
    const auto& s = desk_setup();
    for (auto _ : state) {
        benchmark::DoNotOptimize(naive_pull_oracle(s.vols, s.rig, s.batch));
    }
    state.counters["interp_ops"] =
        static_cast<double>(s.batch.size()) * s.rig.n_cam();
}
BENCHMARK(BM_NaivePullForward);

void BM_SparsePullBackward(benchmark::State& state) {
    const auto& s = desk_setup();
    for (auto _ : state) {
        benchmark::DoNotOptimize(sparse_pull_backward(s.vols, s.table, s.grad));
    }
}
BENCHMARK(BM_SparsePullBackward);

void BM_BuildVisibilityTable(benchmark::State& state) {
    const auto& s = desk_setup();
    for (auto _ : state) {
        benchmark::DoNotOptimize(build_visibility_table(s.rig, s.batch));
    }
}
BENCHMARK(BM_BuildVisibilityTable);

} // namespace
