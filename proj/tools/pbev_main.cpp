#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "pbev/config.hpp"

using pbev::cli::RunConfig;

namespace {

void add_world_options(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--config", cfg.config_path, "world JSON (grid/pillar/cameras)");
    cmd->add_option("--scenes", cfg.scenes_path, "scene-set JSON (default: built-in benchmark)");
    cmd->add_option("--out-dir", cfg.out_dir, "output directory");
    cmd->add_option("--seed", cfg.seed, "master seed (PBEV_SEED env overrides)");
    cmd->add_option("--threads", cfg.threads, "scene-level worker threads (1 = deterministic reference)");
    cmd->add_option("--channels", cfg.channels, "synthetic feature channels");
    cmd->add_option("--noise-sigma", cfg.noise_sigma, "noise level of synthetic features");
    cmd->add_option("--hidden", cfg.hidden, "head hidden width");
}

void add_sampling_options(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--coarse", cfg.coarse_flag,
                    "coarse strategy: random:<n>[:seed=<s>] | regular:<k> | "
                    "gauss:<sigma>:<n> | mask:lidar[:<n>]");
    cmd->add_option("--anchors", cfg.anchors_flag, "anchor rule: topk:<n> | thresh:<tau>");
    cmd->add_option("--kfine", cfg.k_fine, "densification window (odd)");
    cmd->add_option("--nfine", cfg.n_fine, "fine-pass budget");
    cmd->add_option("--ncoarse", cfg.n_coarse, "coarse-pass budget");
    cmd->add_option("--nanchor", cfg.n_anchor, "training anchor count");
    cmd->add_option("--tau", cfg.tau, "inference anchor threshold");
    cmd->add_option("--tau-temp", cfg.tau_temp, "temporal retention threshold");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse BeV perception engine: pulling kernels, coarse/fine "
                 "sampling, windowed temporal attention, synthetic training"};
    app.require_subcommand(1);

    RunConfig cfg;

    app.add_subcommand("selftest", "run oracle-equivalence and gradient-check suites");

    auto* bench = app.add_subcommand("bench-pulling", "sparse vs naive pulling benchmark CSV");
    add_world_options(bench, cfg);
    bench->add_option("--points", cfg.bench_points,
                      "pillar point budget (0 = header-only CSV; default canonical shapes)");
    bench->add_flag("--no-timing", cfg.no_timing, "zero the wall-clock columns (reproducible output)");

    auto* sweep = app.add_subcommand("sweep", "parameter sweeps over the trained toy model");
    add_world_options(sweep, cfg);
    add_sampling_options(sweep, cfg);
    sweep->add_option("--kind", cfg.sweep_kind, "kfine | tau | subsample | temporal_tau")
        ->required();
    sweep->add_option("--ckpt", cfg.ckpt_path, "checkpoint from `pbev train`")->required();
    sweep->add_option("--sk", cfg.s_k, "subsample factors for --kind subsample");
    sweep->add_flag("--emit-svg", cfg.emit_svg, "also render SVG line plots");

    auto* train = app.add_subcommand("train", "train the toy head on the synthetic benchmark");
    add_world_options(train, cfg);
    add_sampling_options(train, cfg);
    train->add_option("--steps", cfg.steps, "optimizer steps");
    train->add_flag("--temporal", cfg.temporal, "train the temporal attention layer (needs --ckpt)");
    train->add_option("--ckpt", cfg.ckpt_path, "static checkpoint for --temporal");

    auto* eval = app.add_subcommand("eval", "dense + sparse evaluation of a checkpoint");
    add_world_options(eval, cfg);
    add_sampling_options(eval, cfg);
    eval->add_option("--ckpt", cfg.ckpt_path, "checkpoint to evaluate")->required();

    auto* plot = app.add_subcommand("plot", "render a sweep/metrics CSV as SVG");
    plot->add_option("--csv", cfg.csv_path, "input CSV")->required();
    plot->add_option("--out-dir", cfg.out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : pbev::cli::kConfigError;
    }

    try {
        cfg.apply_env();
        if (app.got_subcommand("selftest")) return pbev::cli::cmd_selftest();
        if (app.got_subcommand("bench-pulling")) return pbev::cli::cmd_bench_pulling(cfg);
        if (app.got_subcommand("sweep")) return pbev::cli::cmd_sweep(cfg);
        if (app.got_subcommand("train")) return pbev::cli::cmd_train(cfg);
        if (app.got_subcommand("eval")) return pbev::cli::cmd_eval(cfg);
        if (app.got_subcommand("plot")) return pbev::cli::cmd_plot(cfg);
    } catch (const pbev::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return pbev::cli::kConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return pbev::cli::kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return pbev::cli::kIoError;
    }
    return pbev::cli::kConfigError;
}
