#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "pbev/geometry.hpp"

namespace pbev {

/// Deduplicated set of 2D BeV cells. `unique` asserts no duplicates.
struct SampleSet {
    std::vector<Cell> cells;
    bool unique = true;

    size_t size() const { return cells.size(); }
};

/// Per-cell logits for one forward pass over a sample set.
struct PassResult {
    SampleSet cells;
    std::vector<double> logits;

    size_t size() const { return logits.size(); }
    // Throws std::invalid_argument when cells/logits disagree.
    void validate() const;
};

struct RandomUniform {
    size_t n;
};
struct RegularGrid {
    int spacing;  // cells (a*spacing, b*spacing); spacing=1 is the dense grid
};
struct GaussianEgo {
    double sigma;  // meters
    size_t n;
};
struct MaskPrior {
    std::vector<uint8_t> mask;  // ny*nx, row-major (iy major)
    size_t n;
};

struct CoarseStrategy {
    std::variant<RandomUniform, RegularGrid, GaussianEgo, MaskPrior> kind;
    uint64_t seed = 0;
};

struct TopK {
    size_t n_anchor;
};
struct Threshold {
    double tau;  // on sigmoid(logit), strict >
};

struct AnchorRule {
    std::variant<TopK, Threshold> kind;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Draws the coarse cell set for the given strategy; pure function of
// (strategy, seed, grid). Throws std::invalid_argument when the request
// cannot be satisfied (n too large, empty mask prior, spacing < 1).
SampleSet sample_coarse(const CoarseStrategy& strategy, const BevGrid& grid);

// TopK: the n_anchor highest-logit cells, ties broken by ascending
// (ix,iy); all cells when fewer. Threshold: cells with sigmoid(logit)
// strictly above tau.
SampleSet select_anchors(const PassResult& result, const AnchorRule& rule);

// Union of k_fine x k_fine windows centered on each anchor, clipped to
// the grid, deduplicated. k_fine must be odd (centering).
SampleSet densify(const SampleSet& anchors, int k_fine, const BevGrid& grid);

// Uniform random subset of size n_fine when over budget, else unchanged.
SampleSet cap_budget(const SampleSet& cells, size_t n_fine, uint64_t seed);

// Cell union; on duplicates the fine-pass logit wins.
PassResult merge_passes(const PassResult& coarse, const PassResult& fine);

// ny*nx row-major mask, true exactly at cells holding >= 1 return
// (z ignored); out-of-grid returns are dropped.
std::vector<uint8_t> lidar_to_mask(const std::vector<Vec3>& lidar_points, const BevGrid& grid);

// Evenly spaced exploration pattern at an area subsample factor S_k
// (roughly n_cells/S_k cells). Square factors s*s use a stride-s grid;
// factors 2*s*s use the stride-s checkerboard lattice. Other values are
// rejected.
std::vector<uint8_t> subsample_pattern_mask(const BevGrid& grid, int s_k);
CoarseStrategy coarse_from_subsample_factor(const BevGrid& grid, int s_k);

// CLI flag syntax: "random:<n>[:seed=<s>]", "regular:<k>",
// "gauss:<sigma>:<n>[:seed=<s>]", "mask:lidar[:<n>]".
// A "mask:lidar" strategy comes back with an empty mask; the caller fills
// it in from the scene's LiDAR sweep.
CoarseStrategy parse_coarse_flag(const std::string& text);
// "topk:<n>" or "thresh:<tau>".
AnchorRule parse_anchor_flag(const std::string& text);

} // namespace pbev
