#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pbev/sampling.hpp"

namespace pbev {

/// Sparse spatio-temporal point set. Frame offset t=0 is the present
/// (the queries); t=1..T-1 reach into the past. No duplicate (t,ix,iy).
struct SparseTemporalSet {
    struct Entry {
        int t = 0;
        int ix = 0;
        int iy = 0;
    };

    int dim = 0;
    std::vector<Entry> entries;
    std::vector<double> features;  // n x dim, row-major

    size_t size() const { return entries.size(); }
    std::span<const double> feature(size_t i) const {
        return {features.data() + i * dim, static_cast<size_t>(dim)};
    }
    // Throws std::invalid_argument on duplicates or length mismatch.
    void validate() const;
};

/// Half-extents of the attention neighborhood, inclusive. (0,0,0) leaves
/// each query attending to itself alone; infinite recovers standard
/// attention over all entries.
struct WindowSpec {
    int w_t = 0;
    int w_x = 0;
    int w_y = 0;
    bool infinite = false;

    static WindowSpec inf() { return {0, 0, 0, true}; }
};

/// Single-head projection matrices, D x D row-major; d_k = D.
struct AttentionParams {
    int dim = 0;
    std::vector<double> wq, wk, wv;

    static AttentionParams zeros(int dim);
    static AttentionParams random(int dim, uint64_t seed, double scale = 0.3);
};

struct TemporalThreshold {
    double tau_temp = 0.0066928509242848554;  // sigmoid(-5)
};

/// One frame's sparse evaluation, input to temporal_filter.
struct TaggedFrame {
    int t = 0;
    PassResult pass;
    std::vector<double> features;  // |pass| x dim
};

// Keeps every present point and the past points whose sigmoid(logit)
// strictly exceeds tau_temp.
SparseTemporalSet temporal_filter(const std::vector<TaggedFrame>& frames,
                                  const TemporalThreshold& thr, int dim);

// Entry indices inside the window of each present-frame point, ascending;
// the query itself is always included. Spatial-hash buckets inside,
// contractually identical to the O(N^2) scan.
std::vector<std::vector<uint32_t>> build_neighbor_index(const SparseTemporalSet& set,
                                                        const WindowSpec& window);

struct AttentionForward {
    int dim = 0;
    std::vector<uint32_t> query_entry;            // entry index per query
    std::vector<std::vector<uint32_t>> neighbors; // per query
    std::vector<double> output;                   // n_q x dim
    // saved for backward
    std::vector<double> q;                        // n_q x dim
    std::vector<double> k, v;                     // n x dim
    std::vector<std::vector<double>> weights;     // softmax per query

    size_t n_queries() const { return query_entry.size(); }
    uint64_t pair_count() const;
};

struct AttentionGrads {
    std::vector<double> d_features;  // n x dim
    std::vector<double> d_wq, d_wk, d_wv;
};

// Windowed softmax attention with a variable key/value count per query.
AttentionForward submanifold_attention(const SparseTemporalSet& set, const WindowSpec& window,
                                       const AttentionParams& params);

// Exact analytic gradients through softmax, projections and the gather
// structure; deterministic accumulation in entry order.
AttentionGrads submanifold_attention_backward(const SparseTemporalSet& set,
                                              const AttentionParams& params,
                                              const AttentionForward& fwd,
                                              std::span<const double> grad_out);

// Standard dense attention of every present point over all entries,
// written as its own direct loop; the equivalence target for the
// infinite window.
std::vector<double> dense_attention_oracle(const SparseTemporalSet& set,
                                           const AttentionParams& params);

inline uint64_t dense_pair_count(size_t n_queries, size_t n_entries) {
    return static_cast<uint64_t>(n_queries) * n_entries;
}

} // namespace pbev
