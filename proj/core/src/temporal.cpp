#include "pbev/temporal.hpp"

#include <cmath>
#include <stdexcept>

namespace pbev {

RenderedSequence render_sequence(const SceneSpec& scene, const CameraRig& rig,
                                 const BevGrid& grid, int t_frames, int channels,
                                 double noise_sigma) {
    if (t_frames < 1 || t_frames > scene.frames()) {
        throw std::invalid_argument("render_sequence: frame count outside the scene's range");
    }
    RenderedSequence seq;
    for (int t = 0; t < t_frames; ++t) {
        seq.frames.push_back(render_features(scene, rig, t, channels, noise_sigma, scene.seed));
    }
    seq.gt_present = rasterize_gt(scene, grid, 0);
    seq.lidar_mask = lidar_to_mask(simulate_lidar(scene, 0, 720, scene.seed), grid);
    return seq;
}

namespace {

// Present-frame cell coordinates expressed in the ego frame of `t`.
PointBatch pillar_batch_in_past(const BevGrid& grid, const PillarSpec& pillar,
                                const SampleSet& cells, const SceneSpec& scene, int t) {
    PointBatch batch;
    const auto zs = pillar.z_samples();
    const EgoPose& present = scene.ego_poses[0];
    const EgoPose& past = scene.ego_poses[t];
    for (const Cell& c : cells.cells) {
        const auto [x, y] = grid.cell_to_world(c.ix, c.iy);
        const Vec3 world = ego_to_world(present, {x, y, 0.0});
        const Vec3 ego_t = world_to_ego(past, world);
        for (int iz = 0; iz < pillar.n_z; ++iz) {
            batch.push({ego_t.x, ego_t.y, zs[iz]}, 0, {c.ix, c.iy, iz});
        }
    }
    return batch;
}

// Head forward on an already-built point batch; logits + hidden h1.
std::pair<std::vector<double>, std::vector<double>> head_on_batch(
    std::span<const FeatureVolume> vols, const CameraRig& rig, const PillarSpec& pillar,
    const PointBatch& batch, const HeadParams& params) {
    const VisibilityTable table = build_visibility_table(rig, batch);
    const PulledFeatures pulled = sparse_pull(vols, table);
    const std::vector<double> flat = flatten_pillar(pulled, pillar.n_z);

    const size_t n_cells = batch.size() / pillar.n_z;
    const int in_dim = params.in_dim;
    const int H = params.hidden;
    std::vector<double> logits(n_cells, 0.0);
    std::vector<double> h1(n_cells * H, 0.0);
    std::vector<double> h0(H);
    for (size_t i = 0; i < n_cells; ++i) {
        const double* x = flat.data() + i * in_dim;
        for (int r = 0; r < H; ++r) {
            const double* row = params.w_flat.data() + static_cast<size_t>(r) * in_dim;
            double acc = 0.0;
            for (int c = 0; c < in_dim; ++c) acc += row[c] * x[c];
            h0[r] = acc > 0.0 ? acc : 0.0;
        }
        double* h1row = h1.data() + i * H;
        for (int r = 0; r < H; ++r) {
            const double* row = params.w_hidden.data() + static_cast<size_t>(r) * H;
            double acc = params.b_hidden[r];
            for (int c = 0; c < H; ++c) acc += row[c] * h0[c];
            h1row[r] = acc > 0.0 ? acc : 0.0;
        }
        double logit = params.b_out[0];
        for (int r = 0; r < H; ++r) logit += params.w_out[r] * h1row[r];
        logits[i] = logit;
    }
    return {std::move(logits), std::move(h1)};
}

} // namespace

TemporalInstance build_temporal_instance(const RenderedSequence& seq, const SceneSpec& scene,
                                         const CameraRig& rig, const BevGrid& grid,
                                         const PillarSpec& pillar, const HeadParams& head,
                                         const TemporalSamplingConfig& sampling,
                                         const TemporalThreshold& thr) {
    const int T = static_cast<int>(seq.frames.size());
    if (T > scene.frames()) {
        throw std::invalid_argument("build_temporal_instance: sequence longer than scene");
    }

    // Present sample set via the sparse inference pattern.
    const SampleSet coarse_cells = sample_coarse(sampling.coarse, grid);
    const CellsForward coarse_fwd =
        forward_cells_cached(seq.frames[0], rig, grid, pillar, coarse_cells, head);
    const SampleSet anchors =
        select_anchors(coarse_fwd.result, AnchorRule{Threshold{sampling.tau}});
    const SampleSet fine_cells = densify(anchors, sampling.k_fine, grid);

    SampleSet present = coarse_cells;
    {
        std::vector<uint8_t> seen(grid.n_cells(), 0);
        for (const Cell& c : present.cells) seen[grid.flat_index(c.ix, c.iy)] = 1;
        for (const Cell& c : fine_cells.cells) {
            uint8_t& flag = seen[grid.flat_index(c.ix, c.iy)];
            if (!flag) {
                flag = 1;
                present.cells.push_back(c);
            }
        }
    }

    const int D = head.hidden;
    std::vector<TaggedFrame> frames;
    frames.reserve(T);
    {
        // frame 0 from the cached pass where possible, then the fine cells
        PointBatch batch = pillar_batch_in_past(grid, pillar, present, scene, 0);
        auto [logits, h1] = head_on_batch(seq.frames[0], rig, pillar, batch, head);
        TaggedFrame f;
        f.t = 0;
        f.pass.cells = present;
        f.pass.logits = std::move(logits);
        f.features = std::move(h1);
        frames.push_back(std::move(f));
    }
    for (int t = 1; t < T; ++t) {
        PointBatch batch = pillar_batch_in_past(grid, pillar, present, scene, t);
        auto [logits, h1] = head_on_batch(seq.frames[t], rig, pillar, batch, head);
        TaggedFrame f;
        f.t = t;
        f.pass.cells = present;
        f.pass.logits = std::move(logits);
        f.features = std::move(h1);
        frames.push_back(std::move(f));
    }

    TemporalInstance inst;
    inst.past_candidates = static_cast<size_t>(T - 1) * present.size();
    inst.set = temporal_filter(frames, thr, D);
    inst.retained_per_frame.assign(T, 0);
    for (const auto& e : inst.set.entries) ++inst.retained_per_frame[e.t];

    inst.present_entries.reserve(present.size());
    for (uint32_t i = 0; i < inst.set.size(); ++i) {
        if (inst.set.entries[i].t == 0) inst.present_entries.push_back(i);
    }
    inst.present_labels.reserve(present.size());
    for (const Cell& c : present.cells) {
        inst.present_labels.push_back(seq.gt_present[grid.flat_index(c.ix, c.iy)]);
    }
    inst.present_static_logit = frames[0].pass.logits;
    return inst;
}

TemporalForward temporal_forward(const TemporalInstance& inst, const WindowSpec& window,
                                 const AttentionParams& attn, const HeadParams& head) {
    TemporalForward fwd;
    fwd.attention = submanifold_attention(inst.set, window, attn);
    const int D = head.hidden;
    const size_t n_q = fwd.attention.n_queries();
    fwd.fused_logits.assign(n_q, 0.0);
    for (size_t q = 0; q < n_q; ++q) {
        const uint32_t e = fwd.attention.query_entry[q];
        const double* h = inst.set.features.data() + static_cast<size_t>(e) * D;
        const double* o = fwd.attention.output.data() + q * D;
        double logit = head.b_out[0];
        for (int d = 0; d < D; ++d) logit += head.w_out[d] * (h[d] + o[d]);
        fwd.fused_logits[q] = logit;
    }
    return fwd;
}

AttentionGrads temporal_backward(const TemporalInstance& inst, const AttentionParams& attn,
                                 const HeadParams& head, const TemporalForward& fwd,
                                 std::span<const double> dlogits) {
    const int D = head.hidden;
    const size_t n_q = fwd.attention.n_queries();
    if (dlogits.size() != n_q) {
        throw std::invalid_argument("temporal_backward: dlogits length mismatch");
    }
    std::vector<double> d_out(n_q * D, 0.0);
    for (size_t q = 0; q < n_q; ++q) {
        for (int d = 0; d < D; ++d) d_out[q * D + d] = dlogits[q] * head.w_out[d];
    }
    return submanifold_attention_backward(inst.set, attn, fwd.attention, d_out);
}

TemporalEpochMetrics train_temporal_epoch(std::span<const TemporalInstance> instances,
                                          AttentionParams& attn, const HeadParams& head,
                                          AdamState& adam, const TemporalTrainConfig& cfg) {
    TemporalEpochMetrics metrics;
    for (const TemporalInstance& inst : instances) {
        if (cfg.max_steps > 0 && metrics.steps >= cfg.max_steps) break;
        const TemporalForward fwd = temporal_forward(inst, cfg.window, attn, head);

        PassResult as_pass;
        as_pass.cells.cells.resize(fwd.fused_logits.size());
        as_pass.logits = fwd.fused_logits;
        const BceResult bce = bce_on_points(as_pass, inst.present_labels);

        const AttentionGrads grads = temporal_backward(inst, attn, head, fwd, bce.dlogits);
        std::vector<double*> params{attn.wq.data(), attn.wk.data(), attn.wv.data()};
        std::vector<std::vector<double>> glist{grads.d_wq, grads.d_wk, grads.d_wv};
        adam_step(params, glist, adam);

        metrics.losses.push_back(bce.loss);
        ++metrics.steps;
    }
    for (double l : metrics.losses) metrics.mean_loss += l;
    if (!metrics.losses.empty()) metrics.mean_loss /= static_cast<double>(metrics.losses.size());
    return metrics;
}

DenseBevMap temporal_map(const TemporalInstance& inst, const TemporalForward& fwd,
                         const BevGrid& grid) {
    DenseBevMap map;
    map.nx = grid.nx();
    map.ny = grid.ny();
    map.prob.assign(grid.n_cells(), 0.0);
    map.sampled.assign(grid.n_cells(), 0);
    for (size_t q = 0; q < fwd.fused_logits.size(); ++q) {
        const auto& e = inst.set.entries[fwd.attention.query_entry[q]];
        const size_t at = grid.flat_index(e.ix, e.iy);
        map.prob[at] = sigmoid(fwd.fused_logits[q]);
        map.sampled[at] = 1;
    }
    return map;
}

} // namespace pbev
