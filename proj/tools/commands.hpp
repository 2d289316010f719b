#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pbev/bev_net.hpp"
#include "pbev/config.hpp"
#include "pbev/synthetic.hpp"
#include "pbev/temporal.hpp"

namespace pbev::cli {

// exit codes shared by every subcommand
constexpr int kOk = 0;
constexpr int kTestFailure = 1;
constexpr int kConfigError = 2;
constexpr int kIoError = 3;

struct RunConfig {
    std::string config_path;           // world JSON; empty = built-in synthetic
    std::string scenes_path;           // scene-set JSON; empty = generator
    std::string out_dir = "out";
    std::string ckpt_path;
    std::string coarse_flag = "regular:4";
    std::string anchors_flag = "thresh:0.1";
    int k_fine = 9;
    size_t n_coarse = 2500;
    size_t n_fine = 2500;
    size_t n_anchor = 100;
    double tau = 0.1;
    double tau_temp = 0.0066928509242848554;  // sigmoid(-5)
    std::vector<int> s_k = {1, 2, 4, 8, 16, 32, 64};
    uint64_t seed = 42;
    size_t steps = 200;
    int threads = 1;
    bool emit_svg = false;
    bool no_timing = false;
    bool temporal = false;
    int channels = 8;
    double noise_sigma = 0.25;
    int hidden = 32;
    int64_t bench_points = -1;  // unset = canonical shapes, 0 = header only
    std::string sweep_kind;
    std::string csv_path;

    // PBEV_SEED env var wins over the flag.
    void apply_env();
};

// Assembled inputs shared by train/eval/sweep.
struct Workbench {
    WorldConfig world;
    BenchmarkScenes scenes;
    std::vector<TrainScene> train;  // frame 0 of every train scene
    std::vector<TrainScene> eval;
};

Workbench load_workbench(const RunConfig& cfg);
TrainScene bake_scene(const SceneSpec& scene, const WorldConfig& world, int channels,
                      double noise_sigma);

// Mean dense-pass IoU over scenes, scene-parallel when threads > 1.
double mean_dense_iou(const std::vector<TrainScene>& scenes, const WorldConfig& world,
                      const HeadParams& params, int threads);

int cmd_selftest();
int cmd_bench_pulling(const RunConfig& cfg);
int cmd_sweep(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_plot(const RunConfig& cfg);

} // namespace pbev::cli
