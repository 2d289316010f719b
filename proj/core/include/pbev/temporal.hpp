#pragma once

#include "pbev/bev_net.hpp"
#include "pbev/synthetic.hpp"
#include "pbev/window_attention.hpp"

namespace pbev {

/// Per-frame rendered inputs for one temporal sequence (index = frame
/// offset, 0 = present).
struct RenderedSequence {
    std::vector<std::vector<FeatureVolume>> frames;
    std::vector<uint8_t> gt_present;       // ny*nx at frame 0
    std::vector<uint8_t> lidar_mask;       // frame 0
};

RenderedSequence render_sequence(const SceneSpec& scene, const CameraRig& rig,
                                 const BevGrid& grid, int t_frames, int channels,
                                 double noise_sigma);

struct TemporalSamplingConfig {
    CoarseStrategy coarse{RegularGrid{4}, 0};
    double tau = 0.1;
    int k_fine = 9;
};

/// Present-frame sample set evaluated against every frame: the present
/// entries are the queries; past entries survive the temporal threshold.
struct TemporalInstance {
    SparseTemporalSet set;
    std::vector<uint32_t> present_entries;   // entry index per present point
    std::vector<uint8_t> present_labels;     // gt at the present cells
    std::vector<double> present_static_logit;
    std::vector<size_t> retained_per_frame;  // index = frame offset
    size_t past_candidates = 0;
};

// Samples the present frame (coarse -> threshold -> densify -> merge),
// re-evaluates the same BeV coordinates against each past frame through
// the shared head (ego-motion compensated), and thresholds the past
// points at tau_temp.
TemporalInstance build_temporal_instance(const RenderedSequence& seq, const SceneSpec& scene,
                                         const CameraRig& rig, const BevGrid& grid,
                                         const PillarSpec& pillar, const HeadParams& head,
                                         const TemporalSamplingConfig& sampling,
                                         const TemporalThreshold& thr);

struct TemporalForward {
    AttentionForward attention;
    std::vector<double> fused_logits;  // per present point
};

// Fused prediction: logit_q = w_out . (h_q + O_q) + b_out, with O the
// windowed attention output over the retained spatio-temporal set.
TemporalForward temporal_forward(const TemporalInstance& inst, const WindowSpec& window,
                                 const AttentionParams& attn, const HeadParams& head);

// Gradients w.r.t. the attention projections only (the static head stays
// frozen, matching the training protocol).
AttentionGrads temporal_backward(const TemporalInstance& inst, const AttentionParams& attn,
                                 const HeadParams& head, const TemporalForward& fwd,
                                 std::span<const double> dlogits);

struct TemporalTrainConfig {
    WindowSpec window{8, 4, 4, false};
    TemporalThreshold thr{};
    TemporalSamplingConfig sampling{};
    AdamConfig adam{};
    size_t max_steps = 0;
    uint64_t seed = 42;
};

struct TemporalEpochMetrics {
    std::vector<double> losses;
    double mean_loss = 0.0;
    size_t steps = 0;
};

TemporalEpochMetrics train_temporal_epoch(std::span<const TemporalInstance> instances,
                                          AttentionParams& attn, const HeadParams& head,
                                          AdamState& adam, const TemporalTrainConfig& cfg);

// Dense-completed present map from the fused logits.
DenseBevMap temporal_map(const TemporalInstance& inst, const TemporalForward& fwd,
                         const BevGrid& grid);

} // namespace pbev
