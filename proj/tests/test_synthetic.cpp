#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "pbev/rng.hpp"
#include "pbev/sampling.hpp"
#include "pbev/synthetic.hpp"

using namespace pbev;

namespace {

SceneSpec single_frame(std::vector<BoxSpec> boxes, uint64_t seed = 0) {
    SceneSpec spec;
    spec.boxes = std::move(boxes);
    spec.ego_poses = {{0.0, 0.0, 0.0}};
    spec.seed = seed;
    return spec;
}

} // namespace

TEST_CASE("ground-truth rasterization") {
    const BevGrid grid = BevGrid::standard();

    SUBCASE("empty scene is all false") {
        const auto mask = rasterize_gt(single_frame({}), grid, 0);
        for (uint8_t m : mask) CHECK(m == 0);
    }

    SUBCASE("axis-aligned 2x2 m box covers a 4x4 block") {
        const auto mask = rasterize_gt(
            single_frame({BoxSpec{0.0, 0.0, 1.0, 1.0, 0.0, 1.8, 0.0, 0.0}}), grid, 0);
        size_t on = 0;
        for (int iy = 0; iy < grid.ny(); ++iy) {
            for (int ix = 0; ix < grid.nx(); ++ix) {
                if (mask[grid.flat_index(ix, iy)]) {
                    ++on;
                    CHECK(ix >= 98);
                    CHECK(ix <= 101);
                    CHECK(iy >= 98);
                    CHECK(iy <= 101);
                }
            }
        }
        CHECK(on == 16);
    }

    SUBCASE("rotating a square box by 90 degrees leaves the mask unchanged") {
        const auto a = rasterize_gt(
            single_frame({BoxSpec{5.25, -3.75, 1.5, 1.5, 0.0, 1.8, 0.0, 0.0}}), grid, 0);
        const auto b = rasterize_gt(
            single_frame({BoxSpec{5.25, -3.75, 1.5, 1.5, 1.5707963267948966, 1.8, 0.0, 0.0}}),
            grid, 0);
        CHECK(a == b);
    }
}

TEST_CASE("feature rendering") {
    const CameraRig rig = CameraRig::synthetic();

    SUBCASE("no boxes leaves channel 0 dark") {
        const auto vols = render_features(single_frame({}), rig, 0, 4, 0.1, 3);
        for (const auto& vol : vols) {
            for (int y = 0; y < vol.height; ++y) {
                for (int x = 0; x < vol.width; ++x) {
                    CHECK(vol.at(0, 0, y, x) == 0.0);
                    CHECK(vol.at(0, 1, y, x) == 0.0);
                }
            }
        }
    }

    SUBCASE("a wall ahead saturates the forward camera") {
        // a wide tall box right in front, near face at x=2 so even the
        // bottom rays strike it before dipping under z=0
        const auto vols = render_features(
            single_frame({BoxSpec{6.0, 0.0, 4.0, 30.0, 0.0, 25.0, 0.0, 0.0}}), rig, 0, 2, 0.0, 3);
        const auto& front = vols[0];
        size_t hits = 0;
        for (int y = 0; y < front.height; ++y) {
            for (int x = 0; x < front.width; ++x) hits += front.at(0, 0, y, x) > 0.5;
        }
        CHECK(hits == static_cast<size_t>(front.height) * front.width);
    }

    SUBCASE("deterministic per seed") {
        const SceneSpec spec = single_frame({BoxSpec{8.0, 2.0, 2.0, 1.0, 0.4, 1.9, 0.0, 0.0}}, 9);
        const auto a = render_features(spec, rig, 0, 6, 0.3, 42);
        const auto b = render_features(spec, rig, 0, 6, 0.3, 42);
        const auto c = render_features(spec, rig, 0, 6, 0.3, 43);
        for (size_t cam = 0; cam < a.size(); ++cam) CHECK(a[cam].data == b[cam].data);
        bool any_diff = false;
        for (size_t cam = 0; cam < a.size(); ++cam) any_diff |= (a[cam].data != c[cam].data);
        CHECK(any_diff);
    }

    SUBCASE("ray hits agree with a slab oracle along the lidar plane") {
        // cast horizontal rays and compare against surface distances
        const BoxSpec box{10.0, 0.0, 2.0, 1.0, 0.3, 2.0, 0.0, 0.0};
        const SceneSpec spec = single_frame({box});
        const auto sweep = simulate_lidar(spec, 0, 1000, 4);
        CHECK(!sweep.empty());
        for (const Vec3& hit : sweep) {
            // every return must lie on the box surface: in the box frame,
            // at least one coordinate sits on a face within 1e-9
            const double c = std::cos(box.yaw), s = std::sin(box.yaw);
            const double lx = c * (hit.x - box.cx) + s * (hit.y - box.cy);
            const double ly = -s * (hit.x - box.cx) + c * (hit.y - box.cy);
            const bool on_x_face = std::abs(std::abs(lx) - box.hx) < 1e-9 &&
                                   std::abs(ly) <= box.hy + 1e-9;
            const bool on_y_face = std::abs(std::abs(ly) - box.hy) < 1e-9 &&
                                   std::abs(lx) <= box.hx + 1e-9;
            CHECK((on_x_face || on_y_face));
            CHECK(hit.z == 1.0);
        }
    }
}

TEST_CASE("lidar sweep") {
    SUBCASE("empty scene returns nothing") {
        CHECK(simulate_lidar(single_frame({}), 0, 720, 1).empty());
    }

    SUBCASE("doubling the beam count keeps previous azimuths") {
        const SceneSpec spec =
            single_frame({BoxSpec{12.0, 3.0, 2.0, 1.0, 0.1, 2.0, 0.0, 0.0}}, 5);
        const auto coarse = simulate_lidar(spec, 0, 360, 5);
        const auto fine = simulate_lidar(spec, 0, 720, 5);
        // every coarse return appears among the fine returns
        for (const Vec3& c : coarse) {
            bool found = false;
            for (const Vec3& f : fine) {
                if (std::abs(c.x - f.x) < 1e-9 && std::abs(c.y - f.y) < 1e-9) found = true;
            }
            CHECK(found);
        }
        CHECK(fine.size() >= coarse.size());
    }

    SUBCASE("returns land in cells on the dilated box boundary") {
        const BevGrid grid = BevGrid::standard();
        const BoxSpec box{15.0, -6.0, 2.2, 1.0, 0.7, 2.0, 0.0, 0.0};
        const SceneSpec spec = single_frame({box});
        const auto mask = lidar_to_mask(simulate_lidar(spec, 0, 720, 2), grid);
        const auto gt = rasterize_gt(spec, grid, 0);
        // every lidar cell is within one cell of a gt cell
        for (int iy = 0; iy < grid.ny(); ++iy) {
            for (int ix = 0; ix < grid.nx(); ++ix) {
                if (!mask[grid.flat_index(ix, iy)]) continue;
                bool near_gt = false;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (grid.contains(ix + dx, iy + dy) &&
                            gt[grid.flat_index(ix + dx, iy + dy)]) {
                            near_gt = true;
                        }
                    }
                }
                CHECK(near_gt);
            }
        }
    }
}

TEST_CASE("scene persistence") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "pbev_scene_test";
    fs::create_directories(dir);

    SUBCASE("round-trip is bit exact") {
        Rng rng(77);
        SceneSpec spec;
        spec.seed = 123456789;
        spec.dt = 0.25;
        for (int i = 0; i < 5; ++i) {
            spec.boxes.push_back({40.0 * (rng.next_real() - 0.5), 40.0 * (rng.next_real() - 0.5),
                                  1.0 + rng.next_real(), 0.5 + rng.next_real(),
                                  6.28 * rng.next_real(), 1.5 + rng.next_real(),
                                  rng.next_normal(), rng.next_normal()});
        }
        for (int t = 0; t < 9; ++t) {
            spec.ego_poses.push_back({-2.0 * t + 0.1 * rng.next_normal(),
                                      0.3 * rng.next_normal(), 0.05 * rng.next_normal()});
        }
        const std::string path = (dir / "scene.json").string();
        save_scene(spec, path);
        const SceneSpec back = load_scene(path);
        REQUIRE(back.boxes.size() == spec.boxes.size());
        for (size_t i = 0; i < spec.boxes.size(); ++i) {
            CHECK(back.boxes[i].cx == spec.boxes[i].cx);
            CHECK(back.boxes[i].cy == spec.boxes[i].cy);
            CHECK(back.boxes[i].hx == spec.boxes[i].hx);
            CHECK(back.boxes[i].hy == spec.boxes[i].hy);
            CHECK(back.boxes[i].yaw == spec.boxes[i].yaw);
            CHECK(back.boxes[i].height == spec.boxes[i].height);
            CHECK(back.boxes[i].vx == spec.boxes[i].vx);
            CHECK(back.boxes[i].vy == spec.boxes[i].vy);
        }
        REQUIRE(back.ego_poses.size() == spec.ego_poses.size());
        for (size_t t = 0; t < spec.ego_poses.size(); ++t) {
            CHECK(back.ego_poses[t].x == spec.ego_poses[t].x);
            CHECK(back.ego_poses[t].y == spec.ego_poses[t].y);
            CHECK(back.ego_poses[t].yaw == spec.ego_poses[t].yaw);
        }
        CHECK(back.seed == spec.seed);
        CHECK(back.dt == spec.dt);
    }

    SUBCASE("missing fields are schema errors") {
        const std::string path = (dir / "broken.json").string();
        {
            std::FILE* f = std::fopen(path.c_str(), "w");
            REQUIRE(f);
            std::fputs("{\"schema\":\"pbev-scene/1\",\"dt\":0.25,\"seed\":1,\"boxes\":[]}", f);
            std::fclose(f);
        }
        CHECK_THROWS_AS(load_scene(path), std::runtime_error);
    }

    SUBCASE("golden benchmark fixture parses to the generator output") {
        const std::string golden = std::string(PBEV_SOURCE_DIR) + "/data/benchmark_scenes.json";
        if (fs::exists(golden)) {
            const BenchmarkScenes disk = load_scene_set(golden);
            const BenchmarkScenes gen = make_benchmark_scenes(42);
            REQUIRE(disk.train.size() == gen.train.size());
            REQUIRE(disk.eval.size() == gen.eval.size());
            for (size_t i = 0; i < disk.train.size(); ++i) {
                REQUIRE(disk.train[i].boxes.size() == gen.train[i].boxes.size());
                for (size_t b = 0; b < disk.train[i].boxes.size(); ++b) {
                    CHECK(disk.train[i].boxes[b].cx == gen.train[i].boxes[b].cx);
                    CHECK(disk.train[i].boxes[b].yaw == gen.train[i].boxes[b].yaw);
                }
            }
        }
    }
}

TEST_CASE("benchmark scene set") {
    const BenchmarkScenes set = make_benchmark_scenes(42);
    CHECK(set.train.size() == 64);
    CHECK(set.eval.size() == 16);
    for (const auto& s : set.train) {
        CHECK(s.boxes.size() >= 2);
        CHECK(s.boxes.size() <= 8);
        CHECK(s.frames() == 9);
    }

    // generation is a pure function of the master seed
    const BenchmarkScenes again = make_benchmark_scenes(42);
    CHECK(again.train[0].boxes[0].cx == set.train[0].boxes[0].cx);
    CHECK(again.eval[7].ego_poses[3].x == set.eval[7].ego_poses[3].x);
    const BenchmarkScenes other = make_benchmark_scenes(43);
    CHECK(other.train[0].boxes[0].cx != set.train[0].boxes[0].cx);
}

TEST_CASE("rendered features separate occupied from empty cells") {
    const BevGrid grid = BevGrid::standard();
    const PillarSpec pillar = PillarSpec::standard();
    const CameraRig rig = CameraRig::synthetic();
    const BenchmarkScenes set = make_benchmark_scenes(42);

    double occ_sum = 0.0, emp_sum = 0.0;
    size_t occ_n = 0, emp_n = 0;
    for (int scene_i = 0; scene_i < 4; ++scene_i) {
        const SceneSpec& scene = set.train[scene_i];
        const auto vols = render_features(scene, rig, 0, 4, 0.2, scene.seed);
        const auto gt = rasterize_gt(scene, grid, 0);
        Rng rng(scene_i);
        for (int trial = 0; trial < 400; ++trial) {
            const int ix = static_cast<int>(rng.next_below(grid.nx()));
            const int iy = static_cast<int>(rng.next_below(grid.ny()));
            PointBatch batch;
            const auto zs = pillar.z_samples();
            const auto [x, y] = grid.cell_to_world(ix, iy);
            for (int iz = 0; iz < pillar.n_z; ++iz) batch.push({x, y, zs[iz]}, 0, {ix, iy, iz});
            const auto pulled = sparse_pull(vols, build_visibility_table(rig, batch));
            double ch0 = 0.0;
            for (size_t p = 0; p < pulled.n_points(); ++p) ch0 += pulled.data[p * 4];
            if (gt[grid.flat_index(ix, iy)]) {
                occ_sum += ch0;
                ++occ_n;
            } else {
                emp_sum += ch0;
                ++emp_n;
            }
        }
    }
    REQUIRE(occ_n > 0);
    REQUIRE(emp_n > 0);
    CHECK(occ_sum / occ_n > emp_sum / emp_n);
}
