#include <filesystem>
#include <iostream>
#include <map>

#include "commands.hpp"
#include "csv.hpp"
#include "pbev/checkpoint.hpp"
#include "svg_plot.hpp"

namespace pbev::cli {

namespace fs = std::filesystem;

namespace {

struct SweepRow {
    double param;
    double n_coarse;
    double n_fine;
    double interp_ops;
    double iou;
};

void emit(const RunConfig& cfg, const std::string& kind, const std::vector<SweepRow>& rows) {
    CsvWriter csv({"param", "n_coarse", "n_fine", "interp_ops", "iou"});
    for (const auto& r : rows) csv.row(r.param, r.n_coarse, r.n_fine, r.interp_ops, r.iou);
    const std::string path = (fs::path(cfg.out_dir) / ("sweep_" + kind + ".csv")).string();
    csv.write(path);
    std::cout << "wrote " << path << " (" << rows.size() << " rows)\n";

    if (cfg.emit_svg) {
        Series iou_s{"iou", {}, {}}, ops_s{"interp_ops", {}, {}};
        for (const auto& r : rows) {
            iou_s.x.push_back(r.param);
            iou_s.y.push_back(r.iou);
            ops_s.x.push_back(r.param);
            ops_s.y.push_back(r.interp_ops);
        }
        write_svg((fs::path(cfg.out_dir) / ("sweep_" + kind + "_iou.svg")).string(),
                  render_line_plot("sweep " + kind, "param", "IoU", {iou_s}));
        write_svg((fs::path(cfg.out_dir) / ("sweep_" + kind + "_ops.svg")).string(),
                  render_line_plot("sweep " + kind, "param", "interp ops", {ops_s}));
    }
}

// Mean sparse-inference statistics over the eval scenes for one setting.
SweepRow eval_sparse_setting(const Workbench& wb, const HeadParams& params,
                             const CoarseStrategy& coarse, double tau, int k_fine,
                             double param) {
    SweepRow row{param, 0, 0, 0, 0};
    for (const auto& scene : wb.eval) {
        CoarseStrategy strategy = coarse;
        if (auto* mp = std::get_if<MaskPrior>(&strategy.kind); mp && mp->mask.empty()) {
            mp->mask = scene.lidar_mask;
            if (mp->n == 0) mp->n = wb.world.grid.n_cells();
        }
        SparseInferenceStats stats;
        const DenseBevMap map =
            sparse_inference(scene.vols, wb.world.rig, wb.world.grid, wb.world.pillar, params,
                             strategy, tau, k_fine, &stats);
        row.n_coarse += static_cast<double>(stats.n_coarse);
        row.n_fine += static_cast<double>(stats.n_fine);
        row.interp_ops += static_cast<double>(stats.interp_ops);
        row.iou += iou(map, scene.gt);
    }
    const double n = static_cast<double>(wb.eval.size());
    row.n_coarse /= n;
    row.n_fine /= n;
    row.interp_ops /= n;
    row.iou /= n;
    return row;
}

// S_k = 1: the dense grid in a single pass (tau=1 admits no anchors).
SweepRow eval_dense_setting(const Workbench& wb, const HeadParams& params, int k_fine) {
    return eval_sparse_setting(wb, params, CoarseStrategy{RegularGrid{1}, 0}, 1.0, k_fine, 1.0);
}

int sweep_temporal_tau(const RunConfig& cfg, const Workbench& wb,
                       const std::vector<NamedTensor>& tensors, const HeadParams& head) {
    AttentionParams attn;
    attn.dim = head.hidden;
    const size_t d2 = static_cast<size_t>(head.hidden) * head.hidden;
    attn.wq = find_tensor(tensors, "temporal.wq", d2).data;
    attn.wk = find_tensor(tensors, "temporal.wk", d2).data;
    attn.wv = find_tensor(tensors, "temporal.wv", d2).data;

    TemporalSamplingConfig sampling;
    sampling.coarse = parse_coarse_flag(cfg.coarse_flag);
    sampling.tau = cfg.tau;
    sampling.k_fine = cfg.k_fine;
    const WindowSpec window{8, 4, 4, false};

    // Appendix-style threshold grid expressed through the logit argument.
    const double logit_grid[] = {0.0, -3.0, -5.0, -6.0, -7.0, -8.0, -9.0};

    std::vector<SweepRow> rows;
    std::vector<RenderedSequence> sequences;
    for (const auto& scene : wb.scenes.eval) {
        sequences.push_back(render_sequence(scene, wb.world.rig, wb.world.grid, scene.frames(),
                                            cfg.channels, cfg.noise_sigma));
    }
    for (const double lg : logit_grid) {
        const TemporalThreshold thr{sigmoid(lg)};
        SweepRow row{thr.tau_temp, 0, 0, 0, 0};
        for (size_t i = 0; i < wb.scenes.eval.size(); ++i) {
            const TemporalInstance inst =
                build_temporal_instance(sequences[i], wb.scenes.eval[i], wb.world.rig,
                                        wb.world.grid, wb.world.pillar, head, sampling, thr);
            const TemporalForward fwd = temporal_forward(inst, window, attn, head);
            const DenseBevMap map = temporal_map(inst, fwd, wb.world.grid);
            size_t retained_past = 0;
            for (size_t t = 1; t < inst.retained_per_frame.size(); ++t) {
                retained_past += inst.retained_per_frame[t];
            }
            row.n_coarse += static_cast<double>(inst.present_entries.size());
            row.n_fine += static_cast<double>(retained_past);
            row.interp_ops += static_cast<double>(fwd.attention.pair_count());
            row.iou += iou(map, sequences[i].gt_present);
        }
        const double n = static_cast<double>(wb.scenes.eval.size());
        row.n_coarse /= n;
        row.n_fine /= n;
        row.interp_ops /= n;
        row.iou /= n;
        rows.push_back(row);
    }
    emit(cfg, "temporal_tau", rows);
    return kOk;
}

} // namespace

int cmd_sweep(const RunConfig& cfg) {
    if (cfg.ckpt_path.empty()) {
        std::cerr << "sweep needs --ckpt from a prior train run\n";
        return kConfigError;
    }
    fs::create_directories(cfg.out_dir);
    const Workbench wb = load_workbench(cfg);
    const auto tensors = load_tensors(cfg.ckpt_path);
    const HeadParams params = HeadParams::from_tensors(tensors);

    if (cfg.sweep_kind == "kfine") {
        std::vector<SweepRow> rows;
        for (int k : {1, 3, 5, 7, 9, 11, 13}) {
            rows.push_back(eval_sparse_setting(wb, params, CoarseStrategy{RegularGrid{4}, 0},
                                               cfg.tau, k, static_cast<double>(k)));
        }
        emit(cfg, "kfine", rows);
        return kOk;
    }
    if (cfg.sweep_kind == "tau") {
        std::vector<SweepRow> rows;
        for (double tau : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}) {
            rows.push_back(eval_sparse_setting(wb, params, CoarseStrategy{RegularGrid{4}, 0},
                                               tau, cfg.k_fine, tau));
        }
        emit(cfg, "tau", rows);
        return kOk;
    }
    if (cfg.sweep_kind == "subsample") {
        // Appendix pairing of subsample factor to densification window.
        const std::map<int, int> pairing{{2, 3}, {4, 5}, {8, 7}, {16, 9}, {32, 13}, {64, 17}};
        std::vector<SweepRow> rows;
        for (int s_k : cfg.s_k) {
            if (s_k == 1) {
                rows.push_back(eval_dense_setting(wb, params, cfg.k_fine));
                continue;
            }
            const auto it = pairing.find(s_k);
            if (it == pairing.end()) {
                std::cerr << "subsample sweep: unsupported S_k " << s_k << "\n";
                return kConfigError;
            }
            rows.push_back(eval_sparse_setting(
                wb, params, coarse_from_subsample_factor(wb.world.grid, s_k), cfg.tau,
                it->second, static_cast<double>(s_k)));
        }
        emit(cfg, "subsample", rows);
        return kOk;
    }
    if (cfg.sweep_kind == "temporal_tau") {
        return sweep_temporal_tau(cfg, wb, tensors, params);
    }
    std::cerr << "unknown sweep kind '" << cfg.sweep_kind
              << "' (expected kfine|tau|subsample|temporal_tau)\n";
    return kConfigError;
}

} // namespace pbev::cli
