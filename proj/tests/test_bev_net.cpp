#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pbev/bev_net.hpp"
#include "pbev/rng.hpp"
#include "pbev/synthetic.hpp"

using namespace pbev;

namespace {

struct SmallWorld {
    BevGrid grid{20.0, 20.0, 1.0};
    PillarSpec pillar{-0.5, 1.5, 2};
    CameraRig rig = CameraRig::synthetic(16, 12, 80.0, 1.2);
    std::vector<FeatureVolume> vols;

    explicit SmallWorld(uint64_t seed = 5) {
        Rng rng(seed);
        for (const auto& cam : rig.cameras()) {
            FeatureVolume vol(cam.camera_id(), 3, cam.feat_height(), cam.feat_width());
            for (double& v : vol.data) v = rng.next_normal();
            vols.push_back(std::move(vol));
        }
    }
};

} // namespace

TEST_CASE("flatten_pillar concatenates in z order") {
    PulledFeatures pulled;
    pulled.channels = 3;
    pulled.data = {1, 2, 3, 4, 5, 6};  // one cell, n_z=2
    pulled.mask = {1, 1};
    const auto flat = flatten_pillar(pulled, 2);
    CHECK(flat == std::vector<double>{1, 2, 3, 4, 5, 6});

    PulledFeatures masked;
    masked.channels = 2;
    masked.data = {0, 0, 0, 0};
    masked.mask = {0, 0};
    CHECK(flatten_pillar(masked, 2) == std::vector<double>{0, 0, 0, 0});

    PulledFeatures odd;
    odd.channels = 1;
    odd.data = {1.0, 2.0, 3.0};
    odd.mask = {1, 1, 1};
    CHECK_THROWS_AS(flatten_pillar(odd, 2), std::invalid_argument);
}

TEST_CASE("forward_cells") {
    const SmallWorld w;

    SUBCASE("zero parameters leave only the output bias") {
        HeadParams params = HeadParams::zeros(w.pillar.n_z * 3, 4);
        params.b_out[0] = -1.25;
        SampleSet cells;
        cells.cells = {{10, 10}, {3, 17}, {0, 0}};
        const PassResult pass = forward_cells(w.vols, w.rig, w.grid, w.pillar, cells, params);
        REQUIRE(pass.size() == 3);
        for (double l : pass.logits) CHECK(l == -1.25);
    }

    SUBCASE("single cell equals the hand-composed chain") {
        const HeadParams params = HeadParams::random(w.pillar.n_z * 3, 4, 900);
        SampleSet cells;
        cells.cells = {{12, 9}};
        const PassResult pass = forward_cells(w.vols, w.rig, w.grid, w.pillar, cells, params);

        // compose the ops by hand
        PointBatch batch;
        const auto zs = w.pillar.z_samples();
        const auto [x, y] = w.grid.cell_to_world(12, 9);
        for (int iz = 0; iz < w.pillar.n_z; ++iz) batch.push({x, y, zs[iz]}, 0, {12, 9, iz});
        const auto pulled = sparse_pull(w.vols, build_visibility_table(w.rig, batch));
        const auto flat = flatten_pillar(pulled, w.pillar.n_z);

        std::vector<double> h0(4), h1(4);
        for (int r = 0; r < 4; ++r) {
            double acc = 0.0;
            for (int c = 0; c < params.in_dim; ++c) acc += params.w_flat[r * params.in_dim + c] * flat[c];
            h0[r] = std::max(acc, 0.0);
        }
        for (int r = 0; r < 4; ++r) {
            double acc = params.b_hidden[r];
            for (int c = 0; c < 4; ++c) acc += params.w_hidden[r * 4 + c] * h0[c];
            h1[r] = std::max(acc, 0.0);
        }
        double logit = params.b_out[0];
        for (int r = 0; r < 4; ++r) logit += params.w_out[r] * h1[r];
        CHECK(pass.logits[0] == logit);
    }
}

TEST_CASE("bce loss") {
    SUBCASE("zero logits on balanced labels give ln 2") {
        PassResult pass;
        std::vector<uint8_t> labels;
        for (int i = 0; i < 10; ++i) {
            pass.cells.cells.push_back({i, 0});
            pass.logits.push_back(0.0);
            labels.push_back(i % 2);
        }
        const BceResult res = bce_on_points(pass, labels);
        CHECK(res.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    SUBCASE("confident correct predictions vanish") {
        PassResult pass;
        std::vector<uint8_t> labels;
        for (int i = 0; i < 6; ++i) {
            pass.cells.cells.push_back({i, 0});
            pass.logits.push_back(i % 2 ? 20.0 : -20.0);
            labels.push_back(i % 2);
        }
        CHECK(bce_on_points(pass, labels).loss < 1e-6);
    }

    SUBCASE("empty set is an argument error") {
        PassResult pass;
        CHECK_THROWS_AS(bce_on_points(pass, {}), std::invalid_argument);
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradient and zero decay leave parameters fixed") {
        std::vector<double> theta{1.0, -2.0, 3.0};
        AdamConfig cfg;
        cfg.weight_decay = 0.0;
        const std::vector<size_t> sizes{3};
        AdamState st = AdamState::init(cfg, sizes);
        std::vector<double*> params{theta.data()};
        const std::vector<std::vector<double>> grads{{0.0, 0.0, 0.0}};
        adam_step(params, grads, st);
        CHECK(theta == std::vector<double>{1.0, -2.0, 3.0});
    }

    SUBCASE("first step moves by lr in the sign direction") {
        std::vector<double> theta{0.5, -0.5};
        AdamConfig cfg;
        cfg.weight_decay = 0.0;
        cfg.lr = 1e-3;
        const std::vector<size_t> sizes{2};
        AdamState st = AdamState::init(cfg, sizes);
        std::vector<double*> params{theta.data()};
        const std::vector<std::vector<double>> grads{{0.3, -4.0}};
        adam_step(params, grads, st);
        CHECK(theta[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-6));
        CHECK(theta[1] == doctest::Approx(-0.5 + 1e-3).epsilon(1e-6));
    }

    SUBCASE("three-step trace matches a scalar recomputation") {
        // loss = 0.5*(a^2 + 2 b^2), grad = (a, 2b)
        std::vector<double> theta{1.0, -1.0};
        AdamConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.0;
        const std::vector<size_t> sizes{2};
        AdamState st = AdamState::init(cfg, sizes);
        std::vector<double*> params{theta.data()};

        double ref[2] = {1.0, -1.0};
        double m[2] = {0, 0}, v[2] = {0, 0};
        for (int step = 1; step <= 3; ++step) {
            const std::vector<std::vector<double>> grads{{ref[0], 2.0 * ref[1]}};
            adam_step(params, grads, st);
            for (int i = 0; i < 2; ++i) {
                const double g = grads[0][i];
                m[i] = 0.9 * m[i] + 0.1 * g;
                v[i] = 0.999 * v[i] + 0.001 * g * g;
                const double mh = m[i] / (1.0 - std::pow(0.9, step));
                const double vh = v[i] / (1.0 - std::pow(0.999, step));
                ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
            }
            CHECK(theta[0] == doctest::Approx(ref[0]).epsilon(1e-12));
            CHECK(theta[1] == doctest::Approx(ref[1]).epsilon(1e-12));
        }
    }
}

TEST_CASE("iou") {
    const BevGrid grid(10.0, 10.0, 1.0);
    DenseBevMap map;
    map.nx = map.ny = 10;
    map.prob.assign(100, 0.0);
    map.sampled.assign(100, 1);
    std::vector<uint8_t> gt(100, 0);

    SUBCASE("perfect match") {
        map.prob[5] = 0.9;
        gt[5] = 1;
        CHECK(iou(map, gt) == 1.0);
    }

    SUBCASE("disjoint non-empty") {
        map.prob[5] = 0.9;
        gt[6] = 1;
        CHECK(iou(map, gt) == 0.0);
    }

    SUBCASE("both empty count as 1") { CHECK(iou(map, gt) == 1.0); }

    SUBCASE("random pair equals brute-force counting") {
        Rng rng(31);
        for (size_t i = 0; i < 100; ++i) {
            map.prob[i] = rng.next_real();
            gt[i] = rng.next_real() < 0.3;
        }
        size_t inter = 0, uni = 0;
        for (size_t i = 0; i < 100; ++i) {
            const bool p = map.prob[i] > 0.5;
            inter += p && gt[i];
            uni += p || gt[i];
        }
        CHECK(iou(map, gt) == doctest::Approx(double(inter) / double(uni)));
    }
}

TEST_CASE("sparse and dense passes agree at sampled cells") {
    const SmallWorld w;
    const HeadParams params = HeadParams::random(w.pillar.n_z * 3, 8, 77);

    const DenseBevMap dense = dense_inference(w.vols, w.rig, w.grid, w.pillar, params);
    CHECK(dense.n_sampled() == w.grid.n_cells());

    SparseInferenceStats stats;
    const DenseBevMap sparse =
        sparse_inference(w.vols, w.rig, w.grid, w.pillar, params,
                         CoarseStrategy{RegularGrid{3}, 0}, 0.4, 3, &stats);
    CHECK(stats.n_coarse == 49);
    for (size_t i = 0; i < sparse.prob.size(); ++i) {
        if (sparse.sampled[i]) {
            CHECK(sparse.prob[i] == dense.prob[i]);  // bit-identical shared weights
        } else {
            CHECK(sparse.prob[i] == 0.0);  // dense completion
        }
    }
}

TEST_CASE("regular stride-1 coarse recovers dense inference") {
    const SmallWorld w;
    const HeadParams params = HeadParams::random(w.pillar.n_z * 3, 8, 78);
    const DenseBevMap dense = dense_inference(w.vols, w.rig, w.grid, w.pillar, params);
    const DenseBevMap sparse = sparse_inference(w.vols, w.rig, w.grid, w.pillar, params,
                                                CoarseStrategy{RegularGrid{1}, 0}, 0.35, 3);
    for (size_t i = 0; i < dense.prob.size(); ++i) CHECK(sparse.prob[i] == dense.prob[i]);
}

TEST_CASE("checkpoint round-trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "pbev_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "head.pbev").string();

    const HeadParams params = HeadParams::random(6, 4, 123);
    save_tensors(params.to_tensors(), path);
    const HeadParams back = HeadParams::from_tensors(load_tensors(path));
    CHECK(back.in_dim == 6);
    CHECK(back.hidden == 4);
    CHECK(back.w_flat == params.w_flat);
    CHECK(back.w_hidden == params.w_hidden);
    CHECK(back.b_hidden == params.b_hidden);
    CHECK(back.w_out == params.w_out);
    CHECK(back.b_out == params.b_out);

    // corrupt magic
    const std::string bad = (dir / "bad.pbev").string();
    {
        std::ofstream f(bad, std::ios::binary);
        f << "JUNKDATA";
    }
    CHECK_THROWS_AS(load_tensors(bad), std::runtime_error);
}

TEST_CASE("training lowers the loss and is deterministic") {
    const BevGrid grid = BevGrid::standard();
    const PillarSpec pillar(-1.0, 3.0, 4);
    const CameraRig rig = CameraRig::synthetic(30, 14, 70.0, 1.5);
    const BenchmarkScenes set = make_benchmark_scenes(42);

    std::vector<TrainScene> scenes;
    for (int i = 0; i < 4; ++i) {
        TrainScene ts;
        ts.vols = render_features(set.train[i], rig, 0, 4, 0.2, set.train[i].seed);
        ts.gt = rasterize_gt(set.train[i], grid, 0);
        scenes.push_back(std::move(ts));
    }

    TrainConfig cfg;
    cfg.n_coarse = 400;
    cfg.n_fine = 400;
    cfg.n_anchor = 40;
    cfg.k_fine = 5;
    cfg.seed = 42;

    auto run = [&]() {
        HeadParams params = HeadParams::random(pillar.n_z * 4, 16, 42);
        AdamState adam = AdamState::init(AdamConfig{}, head_param_sizes(params));
        std::vector<double> losses;
        uint64_t step = 0;
        for (int epoch = 0; epoch < 8; ++epoch) {
            const EpochMetrics m =
                train_epoch(scenes, rig, grid, pillar, params, adam, cfg, step);
            losses.insert(losses.end(), m.losses.begin(), m.losses.end());
        }
        return losses;
    };

    const auto a = run();
    const auto b = run();
    CHECK(a == b);  // bit-identical trace in serial mode

    const double first = a.front();
    double tail = 0.0;
    for (size_t i = a.size() - 4; i < a.size(); ++i) tail += a[i];
    tail /= 4.0;
    CHECK(tail < first);
}

TEST_CASE("coarse-only training is the N_fine=0 degeneracy") {
    const BevGrid grid(40.0, 40.0, 1.0);
    const PillarSpec pillar(-0.5, 1.5, 2);
    const CameraRig rig = CameraRig::synthetic(16, 10, 75.0, 1.3);
    const BenchmarkScenes set = make_benchmark_scenes(7);

    TrainScene ts;
    ts.vols = render_features(set.train[0], rig, 0, 3, 0.1, 3);
    ts.gt = rasterize_gt(set.train[0], grid, 0);
    const std::vector<TrainScene> scenes{ts};

    TrainConfig cfg;
    cfg.n_coarse = 200;
    cfg.n_fine = 0;
    cfg.seed = 11;
    HeadParams params = HeadParams::random(pillar.n_z * 3, 8, 2);
    AdamState adam = AdamState::init(AdamConfig{}, head_param_sizes(params));
    uint64_t step = 0;
    const EpochMetrics m = train_epoch(scenes, rig, grid, pillar, params, adam, cfg, step);
    CHECK(m.steps == 1);
    CHECK(m.points_forwarded == 200);  // exactly the coarse pass
}
