#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>
#include <variant>

#include "csv.hpp"
#include "pbev/checkpoint.hpp"
#include "pbev/rng.hpp"
#include "svg_plot.hpp"

namespace pbev::cli {

namespace fs = std::filesystem;

void RunConfig::apply_env() {
    if (const char* env = std::getenv("PBEV_SEED")) {
        seed = std::stoull(env);
    }
}

Workbench load_workbench(const RunConfig& cfg) {
    Workbench wb{cfg.config_path.empty() ? WorldConfig::standard()
                                         : load_world_config(cfg.config_path),
                 {}, {}, {}};
    wb.scenes = cfg.scenes_path.empty() ? make_benchmark_scenes(cfg.seed)
                                        : load_scene_set(cfg.scenes_path);
    for (const auto& s : wb.scenes.train) {
        wb.train.push_back(bake_scene(s, wb.world, cfg.channels, cfg.noise_sigma));
    }
    for (const auto& s : wb.scenes.eval) {
        wb.eval.push_back(bake_scene(s, wb.world, cfg.channels, cfg.noise_sigma));
    }
    return wb;
}

TrainScene bake_scene(const SceneSpec& scene, const WorldConfig& world, int channels,
                      double noise_sigma) {
    TrainScene out;
    out.vols = render_features(scene, world.rig, 0, channels, noise_sigma, scene.seed);
    out.gt = rasterize_gt(scene, world.grid, 0);
    out.lidar_mask = lidar_to_mask(simulate_lidar(scene, 0, 720, scene.seed), world.grid);
    return out;
}

double mean_dense_iou(const std::vector<TrainScene>& scenes, const WorldConfig& world,
                      const HeadParams& params, int threads) {
    std::vector<double> per_scene(scenes.size(), 0.0);
    auto work = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            const DenseBevMap map =
                dense_inference(scenes[i].vols, world.rig, world.grid, world.pillar, params);
            per_scene[i] = iou(map, scenes[i].gt);
        }
    };
    if (threads <= 1 || scenes.size() < 2) {
        work(0, scenes.size());
    } else {
        const size_t n_threads = std::min<size_t>(threads, scenes.size());
        std::vector<std::thread> pool;
        const size_t chunk = (scenes.size() + n_threads - 1) / n_threads;
        for (size_t t = 0; t < n_threads; ++t) {
            const size_t begin = t * chunk;
            const size_t end = std::min(scenes.size(), begin + chunk);
            if (begin < end) pool.emplace_back(work, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    double sum = 0.0;
    for (double v : per_scene) sum += v;  // fixed order regardless of threads
    return scenes.empty() ? 0.0 : sum / static_cast<double>(scenes.size());
}

namespace {

uint64_t now_ns() {
    return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                     std::chrono::steady_clock::now().time_since_epoch())
                                     .count());
}

PointBatch full_grid_batch(const BevGrid& grid, const PillarSpec& pillar) {
    PointBatch batch;
    const auto zs = pillar.z_samples();
    for (int iy = 0; iy < grid.ny(); ++iy) {
        for (int ix = 0; ix < grid.nx(); ++ix) {
            const auto [x, y] = grid.cell_to_world(ix, iy);
            for (int iz = 0; iz < pillar.n_z; ++iz) {
                batch.push({x, y, zs[iz]}, 0, {ix, iy, iz});
            }
        }
    }
    return batch;
}

std::vector<FeatureVolume> random_volumes(const CameraRig& rig, int channels, uint64_t seed) {
    std::vector<FeatureVolume> vols;
    for (const auto& cam : rig.cameras()) {
        FeatureVolume vol(cam.camera_id(), channels, cam.feat_height(), cam.feat_width());
        Rng rng(hash_mix(seed, cam.camera_id()));
        for (double& v : vol.data) v = rng.next_normal();
        vols.push_back(std::move(vol));
    }
    return vols;
}

struct BenchShape {
    std::string label;
    int grid_n;     // grid_n x grid_n cells
    int n_z;
    int channels;
};

void bench_one_shape(CsvWriter& csv, const BenchShape& shape, const RunConfig& cfg) {
    const BevGrid grid(100.0, 100.0, 100.0 / shape.grid_n);
    const PillarSpec pillar(-1.0, 3.0, shape.n_z);
    const CameraRig rig = CameraRig::synthetic();
    const auto vols = random_volumes(rig, shape.channels, cfg.seed);
    const PointBatch batch = full_grid_batch(grid, pillar);

    const std::vector<double> grad(batch.size() * static_cast<size_t>(shape.channels), 1.0);

    uint64_t sparse_ops = 0, sparse_fwd = 0, sparse_bwd = 0, sparse_bytes = 0;
    {
        const VisibilityTable table = build_visibility_table(rig, batch);
        const uint64_t t0 = now_ns();
        const PulledFeatures sparse = sparse_pull(vols, table);
        const uint64_t t1 = now_ns();
        sparse_pull_backward(vols, table, grad);
        const uint64_t t2 = now_ns();
        sparse_ops = sparse.interp_ops;
        sparse_fwd = cfg.no_timing ? 0 : t1 - t0;
        sparse_bwd = cfg.no_timing ? 0 : t2 - t1;
        sparse_bytes = sparse_pull_workspace_bytes(table, shape.channels);
    }

    uint64_t naive_ops = 0, naive_fwd = 0, naive_bwd = 0;
    {
        const uint64_t t0 = now_ns();
        const PulledFeatures naive = naive_pull_oracle(vols, rig, batch);
        const uint64_t t1 = now_ns();
        naive_ops = naive.interp_ops;
        naive_fwd = cfg.no_timing ? 0 : t1 - t0;
    }
    {
        // the naive backward scatters every pair; emulate with a full table
        VisibilityTable dense_table;
        dense_table.per_camera.resize(rig.n_cam());
        dense_table.seen_count.assign(batch.size(), rig.n_cam());
        dense_table.batch_index = batch.batch_index;
        for (int cam = 0; cam < rig.n_cam(); ++cam) {
            auto& entries = dense_table.per_camera[cam];
            entries.reserve(batch.size());
            const auto& vol = vols[cam];
            for (uint32_t slot = 0; slot < batch.size(); ++slot) {
                const Projection proj = project_point(rig.camera(cam), batch.points[slot]);
                entries.push_back({slot, std::clamp(proj.u, 0.0, double(vol.width - 1)),
                                   std::clamp(proj.v, 0.0, double(vol.height - 1))});
            }
        }
        const uint64_t t2 = now_ns();
        sparse_pull_backward(vols, dense_table, grad);
        const uint64_t t3 = now_ns();
        naive_bwd = cfg.no_timing ? 0 : t3 - t2;
    }

    const auto& cam0 = rig.camera(0);
    csv.row(std::string("sparse"), batch.size(), rig.n_cam(), shape.channels,
            cam0.feat_height(), cam0.feat_width(), sparse_ops, sparse_fwd, sparse_bwd,
            sparse_bytes);
    csv.row(std::string("naive"), batch.size(), rig.n_cam(), shape.channels, cam0.feat_height(),
            cam0.feat_width(), naive_ops, naive_fwd, naive_bwd,
            naive_pull_workspace_bytes(batch.size(), rig.n_cam(), shape.channels));
}

} // namespace

int cmd_bench_pulling(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    CsvWriter csv({"mode", "n_points", "n_cam", "C", "H", "W", "interp_ops", "wall_ns_forward",
                   "wall_ns_backward", "peak_bytes_estimate"});
    if (cfg.bench_points < 0) {
        // canonical shape: 200x200x8 points, 6 cameras, C=128, 28x60 volumes
        bench_one_shape(csv, {"canonical", 200, 8, 128}, cfg);
        bench_one_shape(csv, {"desk-small", 50, 4, 16}, cfg);
        bench_one_shape(csv, {"desk-tiny", 20, 2, 8}, cfg);
    } else if (cfg.bench_points > 0) {
        const int grid_n =
            std::max(1, static_cast<int>(std::lround(std::sqrt(cfg.bench_points / 8.0))));
        bench_one_shape(csv, {"custom", grid_n, 8, cfg.channels}, cfg);
    }
    // --points 0 leaves the header-only CSV
    const std::string path = (fs::path(cfg.out_dir) / "bench_pulling.csv").string();
    csv.write(path);
    std::cout << "wrote " << path << " (" << csv.n_rows() << " rows)\n";
    return kOk;
}

int cmd_train(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    const Workbench wb = load_workbench(cfg);
    const int in_dim = wb.world.pillar.n_z * cfg.channels;

    if (cfg.temporal) {
        // temporal layer on top of a frozen static checkpoint
        if (cfg.ckpt_path.empty()) {
            std::cerr << "train --temporal needs --ckpt with the static model\n";
            return kConfigError;
        }
        const HeadParams head = HeadParams::from_tensors(load_tensors(cfg.ckpt_path));

        TemporalTrainConfig tcfg;
        tcfg.thr.tau_temp = cfg.tau_temp;
        tcfg.sampling.coarse = parse_coarse_flag(cfg.coarse_flag);
        tcfg.sampling.tau = cfg.tau;
        tcfg.sampling.k_fine = cfg.k_fine;
        tcfg.max_steps = cfg.steps;
        tcfg.seed = cfg.seed;

        std::vector<TemporalInstance> instances;
        for (const auto& scene : wb.scenes.train) {
            const RenderedSequence seq = render_sequence(scene, wb.world.rig, wb.world.grid,
                                                         scene.frames(), cfg.channels,
                                                         cfg.noise_sigma);
            instances.push_back(build_temporal_instance(seq, scene, wb.world.rig, wb.world.grid,
                                                        wb.world.pillar, head, tcfg.sampling,
                                                        tcfg.thr));
            if (instances.size() * 4 >= cfg.steps && instances.size() >= 8) break;
        }

        AttentionParams attn = AttentionParams::random(cfg.hidden, hash_mix(cfg.seed, 0xA77));
        const std::vector<size_t> sizes{attn.wq.size(), attn.wk.size(), attn.wv.size()};
        AdamState adam = AdamState::init(AdamConfig{}, sizes);

        CsvWriter csv({"step", "loss", "iou", "n_points", "interp_ops"});
        size_t step = 0;
        double last_loss = 0.0;
        while (step < cfg.steps) {
            TemporalTrainConfig one = tcfg;
            one.max_steps = std::min(instances.size(), cfg.steps - step);
            const auto metrics = train_temporal_epoch(instances, attn, head, adam, one);
            for (double l : metrics.losses) {
                ++step;
                csv.row(step, l, std::string(""), size_t{0}, uint64_t{0});
                last_loss = l;
            }
            if (metrics.steps == 0) break;
        }
        std::cout << "temporal training done, last loss " << last_loss << "\n";

        auto tensors = head.to_tensors();
        tensors.push_back({"temporal.wq", {static_cast<uint32_t>(cfg.hidden),
                                           static_cast<uint32_t>(cfg.hidden)}, attn.wq});
        tensors.push_back({"temporal.wk", {static_cast<uint32_t>(cfg.hidden),
                                           static_cast<uint32_t>(cfg.hidden)}, attn.wk});
        tensors.push_back({"temporal.wv", {static_cast<uint32_t>(cfg.hidden),
                                           static_cast<uint32_t>(cfg.hidden)}, attn.wv});
        save_tensors(tensors, (fs::path(cfg.out_dir) / "checkpoint.pbev").string());
        csv.write((fs::path(cfg.out_dir) / "train_metrics.csv").string());
        return kOk;
    }

    HeadParams params = HeadParams::random(in_dim, cfg.hidden, cfg.seed);
    AdamState adam = AdamState::init(AdamConfig{}, head_param_sizes(params));

    TrainConfig tc;
    tc.n_coarse = cfg.n_coarse;
    tc.n_fine = cfg.n_fine;
    tc.n_anchor = cfg.n_anchor;
    tc.k_fine = cfg.k_fine;
    tc.seed = cfg.seed;

    CsvWriter csv({"step", "loss", "iou", "n_points", "interp_ops"});
    uint64_t global_step = 0;
    while (global_step < cfg.steps) {
        tc.max_steps = std::min<size_t>(wb.train.size(), cfg.steps - global_step);
        const uint64_t step_before = global_step;
        const EpochMetrics metrics = train_epoch(wb.train, wb.world.rig, wb.world.grid,
                                                 wb.world.pillar, params, adam, tc, global_step);
        for (size_t i = 0; i < metrics.losses.size(); ++i) {
            const uint64_t step = step_before + i + 1;
            std::string iou_cell;
            if (step % 50 == 0 || step == cfg.steps) {
                iou_cell = fmt(mean_dense_iou(wb.eval, wb.world, params, cfg.threads));
            }
            csv.row(step, metrics.losses[i], iou_cell,
                    metrics.points_forwarded / metrics.steps, metrics.interp_ops / metrics.steps);
        }
        if (metrics.steps == 0) break;
    }

    const double final_iou = mean_dense_iou(wb.eval, wb.world, params, cfg.threads);
    std::cout << "training done: " << global_step << " steps, eval IoU " << final_iou << "\n";

    save_tensors(params.to_tensors(), (fs::path(cfg.out_dir) / "checkpoint.pbev").string());
    csv.write((fs::path(cfg.out_dir) / "train_metrics.csv").string());
    return kOk;
}

int cmd_eval(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    if (cfg.ckpt_path.empty()) {
        std::cerr << "eval needs --ckpt\n";
        return kConfigError;
    }
    const Workbench wb = load_workbench(cfg);
    const HeadParams params = HeadParams::from_tensors(load_tensors(cfg.ckpt_path));

    const AnchorRule rule = parse_anchor_flag(cfg.anchors_flag);
    const double tau = std::holds_alternative<Threshold>(rule.kind)
                           ? std::get<Threshold>(rule.kind).tau
                           : cfg.tau;

    CsvWriter csv({"scene", "mode", "iou", "n_sampled", "interp_ops"});
    double dense_sum = 0.0, sparse_sum = 0.0;
    for (size_t i = 0; i < wb.eval.size(); ++i) {
        const auto& scene = wb.eval[i];
        const DenseBevMap dense =
            dense_inference(scene.vols, wb.world.rig, wb.world.grid, wb.world.pillar, params);
        const double dense_iou = iou(dense, scene.gt);
        dense_sum += dense_iou;
        csv.row(i, std::string("dense"), dense_iou, dense.n_sampled(), uint64_t{0});

        CoarseStrategy strategy = parse_coarse_flag(cfg.coarse_flag);
        if (auto* mp = std::get_if<MaskPrior>(&strategy.kind); mp && mp->mask.empty()) {
            mp->mask = scene.lidar_mask;
            if (mp->n == 0) mp->n = wb.world.grid.n_cells();
        }
        SparseInferenceStats stats;
        const DenseBevMap sparse =
            sparse_inference(scene.vols, wb.world.rig, wb.world.grid, wb.world.pillar, params,
                             strategy, tau, cfg.k_fine, &stats);
        const double sparse_iou = iou(sparse, scene.gt);
        sparse_sum += sparse_iou;
        csv.row(i, std::string("sparse"), sparse_iou, stats.n_sampled, stats.interp_ops);
    }
    const std::string path = (fs::path(cfg.out_dir) / "eval_metrics.csv").string();
    csv.write(path);
    std::cout << "dense mean IoU " << dense_sum / wb.eval.size() << ", sparse mean IoU "
              << sparse_sum / wb.eval.size() << " -> " << path << "\n";
    return kOk;
}

int cmd_plot(const RunConfig& cfg) {
    if (cfg.csv_path.empty()) {
        std::cerr << "plot needs --csv\n";
        return kConfigError;
    }
    std::ifstream in(cfg.csv_path);
    if (!in) {
        std::cerr << "plot: cannot open " << cfg.csv_path << "\n";
        return kIoError;
    }
    std::string header;
    std::getline(in, header);
    std::vector<std::string> cols;
    {
        size_t start = 0;
        while (true) {
            const size_t pos = header.find(',', start);
            cols.push_back(header.substr(start, pos == std::string::npos ? pos : pos - start));
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
    }
    if (cols.size() < 2) {
        std::cerr << "plot: need at least two columns\n";
        return kConfigError;
    }
    std::vector<Series> series(cols.size() - 1);
    for (size_t c = 1; c < cols.size(); ++c) series[c - 1].label = cols[c];
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        size_t start = 0;
        while (true) {
            const size_t pos = line.find(',', start);
            cells.push_back(line.substr(start, pos == std::string::npos ? pos : pos - start));
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        if (cells.size() != cols.size()) continue;
        char* end = nullptr;
        const double x = std::strtod(cells[0].c_str(), &end);
        if (end == cells[0].c_str()) continue;
        for (size_t c = 1; c < cells.size(); ++c) {
            end = nullptr;
            const double y = std::strtod(cells[c].c_str(), &end);
            if (end == cells[c].c_str() || *end != '\0') continue;
            series[c - 1].x.push_back(x);
            series[c - 1].y.push_back(y);
        }
    }
    series.erase(std::remove_if(series.begin(), series.end(),
                                [](const Series& s) { return s.x.empty(); }),
                 series.end());

    fs::create_directories(cfg.out_dir);
    const std::string out =
        (fs::path(cfg.out_dir) / (fs::path(cfg.csv_path).stem().string() + ".svg")).string();
    write_svg(out, render_line_plot(fs::path(cfg.csv_path).stem().string(), cols[0], "value",
                                    series));
    std::cout << "wrote " << out << "\n";
    return kOk;
}

} // namespace pbev::cli
