#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pbev/checkpoint.hpp"
#include "pbev/sampling.hpp"
#include "pbev/sparse_pulling.hpp"

namespace pbev {

/// Pointwise head: flatten projection, one ReLU hidden layer, scalar
/// logit. Stands in for the heavier spatial decoders of full systems so
/// the rest of the pipeline stays testable at desk scale.
struct HeadParams {
    int in_dim = 0;   // n_z * C
    int hidden = 0;   // D
    std::vector<double> w_flat;    // hidden x in_dim
    std::vector<double> w_hidden;  // hidden x hidden
    std::vector<double> b_hidden;  // hidden
    std::vector<double> w_out;     // hidden
    std::vector<double> b_out;     // 1

    static HeadParams zeros(int in_dim, int hidden);
    static HeadParams random(int in_dim, int hidden, uint64_t seed);

    std::vector<NamedTensor> to_tensors() const;
    static HeadParams from_tensors(const std::vector<NamedTensor>& tensors);
};

struct HeadGrads {
    std::vector<double> w_flat, w_hidden, b_hidden, w_out, b_out;

    static HeadGrads zeros_like(const HeadParams& p);
    void add(const HeadGrads& other);
};

/// Adam with bias correction; weight decay enters as an additive w*theta
/// term on the gradient.
struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-7;
};

struct AdamState {
    AdamConfig cfg;
    uint64_t step = 0;
    std::vector<std::vector<double>> m, v;

    static AdamState init(const AdamConfig& cfg, std::span<const size_t> tensor_sizes);
};

// One optimizer step over a parallel list of parameter/gradient tensors.
// Shapes must match the state; throws std::invalid_argument otherwise.
void adam_step(std::span<double* const> params, std::span<const std::vector<double>> grads,
               AdamState& state);

// Concatenates each cell's n_z pulled feature rows in ascending z into
// one (n_z*C)-vector per cell. Point count must be a multiple of n_z.
std::vector<double> flatten_pillar(const PulledFeatures& pulled, int n_z);

/// Forward pass artifacts kept around for the backward pass.
struct CellsForward {
    PassResult result;
    PointBatch batch;
    VisibilityTable table;
    PulledFeatures pulled;
    std::vector<double> flat;          // n_cells x in_dim
    std::vector<double> z0, h0, z1, h1;  // n_cells x hidden
};

// The pillar -> visibility -> pulling -> flatten -> MLP chain for one
// set of cells. Deterministic.
PassResult forward_cells(std::span<const FeatureVolume> vols, const CameraRig& rig,
                         const BevGrid& grid, const PillarSpec& pillar, const SampleSet& cells,
                         const HeadParams& params);
CellsForward forward_cells_cached(std::span<const FeatureVolume> vols, const CameraRig& rig,
                                  const BevGrid& grid, const PillarSpec& pillar,
                                  const SampleSet& cells, const HeadParams& params);

// Hidden features (h1) of a cached forward, n_cells x hidden.
std::vector<double> hidden_features(const CellsForward& fwd);

struct BceResult {
    double loss = 0.0;
    std::vector<double> dlogits;
};

// Mean binary cross-entropy over the sampled cells only; gradient is
// (sigmoid(logit)-label)/n. Empty input is an error.
BceResult bce_on_points(const PassResult& result, const std::vector<uint8_t>& labels);

struct HeadBackward {
    HeadGrads grads;
    std::vector<double> d_flat;    // n_cells x in_dim
    std::vector<double> d_pulled;  // n_points x C
};

// Backprop from per-cell dlogits through the MLP and the pillar
// flattening. Volume gradients follow via sparse_pull_backward on
// d_pulled.
HeadBackward head_backward(const CellsForward& fwd, const HeadParams& params,
                           std::span<const double> dlogits);

struct LossAndGrads {
    double loss = 0.0;
    HeadGrads head;
    std::vector<FeatureVolume> vol_grads;
};

// Full loss + gradients for a single pass over `cells`; the reference
// chain the finite-difference suite checks end to end.
LossAndGrads loss_and_grads(std::span<const FeatureVolume> vols, const CameraRig& rig,
                            const BevGrid& grid, const PillarSpec& pillar,
                            const SampleSet& cells, const std::vector<uint8_t>& labels,
                            const HeadParams& params);

/// Dense probability map with sampling provenance; never-sampled cells
/// hold probability exactly zero.
struct DenseBevMap {
    int nx = 0, ny = 0;
    std::vector<double> prob;
    std::vector<uint8_t> sampled;

    size_t n_sampled() const;
};

// |pred AND gt| / |pred OR gt| after binarizing pred at 0.5; empty/empty
// counts as 1.
double iou(const DenseBevMap& pred, const std::vector<uint8_t>& gt, double threshold = 0.5);

DenseBevMap dense_inference(std::span<const FeatureVolume> vols, const CameraRig& rig,
                            const BevGrid& grid, const PillarSpec& pillar,
                            const HeadParams& params);

struct SparseInferenceStats {
    size_t n_coarse = 0;
    size_t n_anchors = 0;
    size_t n_fine = 0;
    size_t n_sampled = 0;
    uint64_t interp_ops = 0;
};

// Coarse pass, threshold anchors, densify, fine pass, merge, and dense
// completion with zeros.
DenseBevMap sparse_inference(std::span<const FeatureVolume> vols, const CameraRig& rig,
                             const BevGrid& grid, const PillarSpec& pillar,
                             const HeadParams& params, const CoarseStrategy& coarse,
                             double tau, int k_fine, SparseInferenceStats* stats = nullptr);

/// Pre-rendered scene the trainer consumes.
struct TrainScene {
    std::vector<FeatureVolume> vols;
    std::vector<uint8_t> gt;
    std::vector<uint8_t> lidar_mask;
};

struct TrainConfig {
    size_t n_coarse = 2500;
    size_t n_fine = 2500;
    size_t n_anchor = 100;
    int k_fine = 9;
    uint64_t seed = 42;
    size_t max_steps = 0;  // 0 = every scene once
};

struct EpochMetrics {
    std::vector<double> losses;
    double mean_loss = 0.0;
    size_t steps = 0;
    uint64_t interp_ops = 0;
    size_t points_forwarded = 0;
};

// One sweep over the scene stream: coarse pass, top-K anchors,
// densify, cap, fine pass, merge, BCE, backward, Adam. `global_step`
// advances per scene and seeds the samplers.
EpochMetrics train_epoch(std::span<const TrainScene> scenes, const CameraRig& rig,
                         const BevGrid& grid, const PillarSpec& pillar, HeadParams& params,
                         AdamState& adam, const TrainConfig& cfg, uint64_t& global_step);

std::vector<double*> head_param_ptrs(HeadParams& p);
std::vector<size_t> head_param_sizes(const HeadParams& p);
std::vector<std::vector<double>> head_grad_list(const HeadGrads& g);

} // namespace pbev
