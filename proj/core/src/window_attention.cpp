#include "pbev/window_attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "pbev/rng.hpp"

namespace pbev {

void SparseTemporalSet::validate() const {
    if (features.size() != entries.size() * static_cast<size_t>(dim)) {
        throw std::invalid_argument("SparseTemporalSet: feature buffer size mismatch");
    }
    std::unordered_set<uint64_t> seen;
    seen.reserve(entries.size());
    for (const auto& e : entries) {
        const uint64_t key = (static_cast<uint64_t>(static_cast<uint16_t>(e.t)) << 48) |
                             (static_cast<uint64_t>(static_cast<uint32_t>(e.ix) & 0xFFFFFF) << 24) |
                             (static_cast<uint32_t>(e.iy) & 0xFFFFFF);
        if (!seen.insert(key).second) {
            throw std::invalid_argument("SparseTemporalSet: duplicate (t,ix,iy) entry");
        }
    }
    for (double f : features) {
        if (!std::isfinite(f)) throw std::invalid_argument("SparseTemporalSet: non-finite feature");
    }
}

AttentionParams AttentionParams::zeros(int dim) {
    AttentionParams p;
    p.dim = dim;
    p.wq.assign(static_cast<size_t>(dim) * dim, 0.0);
    p.wk.assign(static_cast<size_t>(dim) * dim, 0.0);
    p.wv.assign(static_cast<size_t>(dim) * dim, 0.0);
    return p;
}

AttentionParams AttentionParams::random(int dim, uint64_t seed, double scale) {
    AttentionParams p = zeros(dim);
    Rng rng(seed);
    const double s = scale / std::sqrt(static_cast<double>(dim));
    for (auto* w : {&p.wq, &p.wk, &p.wv}) {
        for (double& x : *w) x = s * rng.next_normal();
    }
    return p;
}

SparseTemporalSet temporal_filter(const std::vector<TaggedFrame>& frames,
                                  const TemporalThreshold& thr, int dim) {
    SparseTemporalSet out;
    out.dim = dim;
    for (const TaggedFrame& frame : frames) {
        frame.pass.validate();
        if (frame.features.size() != frame.pass.size() * static_cast<size_t>(dim)) {
            throw std::invalid_argument("temporal_filter: frame feature size mismatch");
        }
        if (frame.t < 0) throw std::invalid_argument("temporal_filter: negative frame tag");
        for (size_t i = 0; i < frame.pass.size(); ++i) {
            const bool keep =
                frame.t == 0 || sigmoid(frame.pass.logits[i]) > thr.tau_temp;
            if (!keep) continue;
            const Cell c = frame.pass.cells.cells[i];
            out.entries.push_back({frame.t, c.ix, c.iy});
            const double* f = frame.features.data() + i * dim;
            out.features.insert(out.features.end(), f, f + dim);
        }
    }
    out.validate();
    return out;
}

std::vector<std::vector<uint32_t>> build_neighbor_index(const SparseTemporalSet& set,
                                                        const WindowSpec& window) {
    std::vector<uint32_t> queries;
    for (uint32_t i = 0; i < set.size(); ++i) {
        if (set.entries[i].t == 0) queries.push_back(i);
    }

    std::vector<std::vector<uint32_t>> lists(queries.size());
    if (window.infinite) {
        std::vector<uint32_t> all(set.size());
        for (uint32_t i = 0; i < set.size(); ++i) all[i] = i;
        for (auto& l : lists) l = all;
        return lists;
    }
    if (window.w_t < 0 || window.w_x < 0 || window.w_y < 0) {
        throw std::invalid_argument("build_neighbor_index: negative window extent");
    }

    // Bucket edge = window extent + 1, so a query's window is fully
    // contained in the 3x3 bucket neighborhood.
    const int bx = window.w_x + 1;
    const int by = window.w_y + 1;
    auto bucket_of = [&](int ix, int iy) {
        const int64_t qx = static_cast<int64_t>(std::floor(static_cast<double>(ix) / bx));
        const int64_t qy = static_cast<int64_t>(std::floor(static_cast<double>(iy) / by));
        return (static_cast<uint64_t>(qx) << 32) ^ static_cast<uint32_t>(qy);
    };
    std::unordered_map<uint64_t, std::vector<uint32_t>> buckets;
    for (uint32_t i = 0; i < set.size(); ++i) {
        if (set.entries[i].t > window.w_t) continue;  // never a key
        buckets[bucket_of(set.entries[i].ix, set.entries[i].iy)].push_back(i);
    }

    for (size_t qi = 0; qi < queries.size(); ++qi) {
        const auto& q = set.entries[queries[qi]];
        auto& list = lists[qi];
        for (int dby = -1; dby <= 1; ++dby) {
            for (int dbx = -1; dbx <= 1; ++dbx) {
                const auto it = buckets.find(bucket_of(q.ix + dbx * bx, q.iy + dby * by));
                if (it == buckets.end()) continue;
                for (uint32_t cand : it->second) {
                    const auto& e = set.entries[cand];
                    if (std::abs(e.ix - q.ix) <= window.w_x &&
                        std::abs(e.iy - q.iy) <= window.w_y) {
                        list.push_back(cand);
                    }
                }
            }
        }
        std::sort(list.begin(), list.end());
    }
    return lists;
}

uint64_t AttentionForward::pair_count() const {
    uint64_t n = 0;
    for (const auto& l : neighbors) n += l.size();
    return n;
}

namespace {

// y = W x, W row-major dim x dim
inline void matvec(const double* w, const double* x, double* y, int dim) {
    for (int r = 0; r < dim; ++r) {
        double acc = 0.0;
        const double* row = w + static_cast<size_t>(r) * dim;
        for (int c = 0; c < dim; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

// y += W^T x
inline void matvec_t_add(const double* w, const double* x, double* y, int dim) {
    for (int r = 0; r < dim; ++r) {
        const double xr = x[r];
        const double* row = w + static_cast<size_t>(r) * dim;
        for (int c = 0; c < dim; ++c) y[c] += row[c] * xr;
    }
}

// W += a b^T
inline void outer_add(double* w, const double* a, const double* b, int dim) {
    for (int r = 0; r < dim; ++r) {
        const double ar = a[r];
        double* row = w + static_cast<size_t>(r) * dim;
        for (int c = 0; c < dim; ++c) row[c] += ar * b[c];
    }
}

inline double dot(const double* a, const double* b, int dim) {
    double acc = 0.0;
    for (int i = 0; i < dim; ++i) acc += a[i] * b[i];
    return acc;
}

} // namespace

AttentionForward submanifold_attention(const SparseTemporalSet& set, const WindowSpec& window,
                                       const AttentionParams& params) {
    if (params.dim != set.dim) {
        throw std::invalid_argument("submanifold_attention: feature/param dim mismatch");
    }
    const int D = set.dim;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(D));

    AttentionForward fwd;
    fwd.dim = D;
    fwd.neighbors = build_neighbor_index(set, window);
    for (uint32_t i = 0; i < set.size(); ++i) {
        if (set.entries[i].t == 0) fwd.query_entry.push_back(i);
    }

    const size_t n = set.size();
    fwd.k.assign(n * D, 0.0);
    fwd.v.assign(n * D, 0.0);
    for (size_t i = 0; i < n; ++i) {
        matvec(params.wk.data(), set.features.data() + i * D, fwd.k.data() + i * D, D);
        matvec(params.wv.data(), set.features.data() + i * D, fwd.v.data() + i * D, D);
    }

    const size_t n_q = fwd.query_entry.size();
    fwd.q.assign(n_q * D, 0.0);
    fwd.output.assign(n_q * D, 0.0);
    fwd.weights.resize(n_q);

    for (size_t qi = 0; qi < n_q; ++qi) {
        const uint32_t qe = fwd.query_entry[qi];
        double* qvec = fwd.q.data() + qi * D;
        matvec(params.wq.data(), set.features.data() + qe * D, qvec, D);

        const auto& nbrs = fwd.neighbors[qi];
        auto& w = fwd.weights[qi];
        w.resize(nbrs.size());
        if (nbrs.empty()) continue;  // zero output for caller-filtered lists

        double max_logit = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < nbrs.size(); ++j) {
            w[j] = dot(qvec, fwd.k.data() + static_cast<size_t>(nbrs[j]) * D, D) * inv_sqrt_dk;
            max_logit = std::max(max_logit, w[j]);
        }
        double denom = 0.0;
        for (double& x : w) {
            x = std::exp(x - max_logit);
            denom += x;
        }
        const double inv = 1.0 / denom;
        double* out = fwd.output.data() + qi * D;
        for (size_t j = 0; j < nbrs.size(); ++j) {
            w[j] *= inv;
            const double* vv = fwd.v.data() + static_cast<size_t>(nbrs[j]) * D;
            for (int d = 0; d < D; ++d) out[d] += w[j] * vv[d];
        }
    }
    return fwd;
}

AttentionGrads submanifold_attention_backward(const SparseTemporalSet& set,
                                              const AttentionParams& params,
                                              const AttentionForward& fwd,
                                              std::span<const double> grad_out) {
    const int D = set.dim;
    const size_t n = set.size();
    const size_t n_q = fwd.n_queries();
    if (grad_out.size() != n_q * static_cast<size_t>(D)) {
        throw std::invalid_argument("attention backward: grad_out size mismatch");
    }
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(D));

    AttentionGrads g;
    g.d_features.assign(n * D, 0.0);
    g.d_wq.assign(static_cast<size_t>(D) * D, 0.0);
    g.d_wk.assign(static_cast<size_t>(D) * D, 0.0);
    g.d_wv.assign(static_cast<size_t>(D) * D, 0.0);

    std::vector<double> d_k(n * D, 0.0);
    std::vector<double> d_v(n * D, 0.0);
    std::vector<double> d_q(D);
    std::vector<double> d_s;

    for (size_t qi = 0; qi < n_q; ++qi) {
        const auto& nbrs = fwd.neighbors[qi];
        if (nbrs.empty()) continue;
        const auto& a = fwd.weights[qi];
        const double* go = grad_out.data() + qi * D;
        const double* qvec = fwd.q.data() + qi * D;

        // dV and the softmax Jacobian
        d_s.assign(nbrs.size(), 0.0);
        double weighted = 0.0;
        for (size_t j = 0; j < nbrs.size(); ++j) {
            const double* vv = fwd.v.data() + static_cast<size_t>(nbrs[j]) * D;
            double* dv = d_v.data() + static_cast<size_t>(nbrs[j]) * D;
            const double da = dot(go, vv, D);
            for (int d = 0; d < D; ++d) dv[d] += a[j] * go[d];
            d_s[j] = da;
            weighted += a[j] * da;
        }
        std::fill(d_q.begin(), d_q.end(), 0.0);
        for (size_t j = 0; j < nbrs.size(); ++j) {
            const double ds = a[j] * (d_s[j] - weighted) * inv_sqrt_dk;
            const double* kk = fwd.k.data() + static_cast<size_t>(nbrs[j]) * D;
            double* dk = d_k.data() + static_cast<size_t>(nbrs[j]) * D;
            for (int d = 0; d < D; ++d) {
                d_q[d] += ds * kk[d];
                dk[d] += ds * qvec[d];
            }
        }
        const uint32_t qe = fwd.query_entry[qi];
        const double* fq = set.features.data() + static_cast<size_t>(qe) * D;
        outer_add(g.d_wq.data(), d_q.data(), fq, D);
        matvec_t_add(params.wq.data(), d_q.data(), g.d_features.data() + static_cast<size_t>(qe) * D, D);
    }

    for (size_t i = 0; i < n; ++i) {
        const double* f = set.features.data() + i * D;
        double* df = g.d_features.data() + i * D;
        outer_add(g.d_wk.data(), d_k.data() + i * D, f, D);
        outer_add(g.d_wv.data(), d_v.data() + i * D, f, D);
        matvec_t_add(params.wk.data(), d_k.data() + i * D, df, D);
        matvec_t_add(params.wv.data(), d_v.data() + i * D, df, D);
    }
    return g;
}

std::vector<double> dense_attention_oracle(const SparseTemporalSet& set,
                                           const AttentionParams& params) {
    const int D = set.dim;
    const size_t n = set.size();
    std::vector<double> out;
    for (size_t q = 0; q < n; ++q) {
        if (set.entries[q].t != 0) continue;
        // projections recomputed from scratch per query on purpose
        std::vector<double> qv(D, 0.0);
        for (int r = 0; r < D; ++r)
            for (int c = 0; c < D; ++c)
                qv[r] += params.wq[static_cast<size_t>(r) * D + c] * set.features[q * D + c];
        std::vector<double> scores(n, 0.0);
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t e = 0; e < n; ++e) {
            double s = 0.0;
            for (int r = 0; r < D; ++r) {
                double kr = 0.0;
                for (int c = 0; c < D; ++c)
                    kr += params.wk[static_cast<size_t>(r) * D + c] * set.features[e * D + c];
                s += qv[r] * kr;
            }
            scores[e] = s / std::sqrt(static_cast<double>(D));
            mx = std::max(mx, scores[e]);
        }
        double denom = 0.0;
        for (double& s : scores) {
            s = std::exp(s - mx);
            denom += s;
        }
        std::vector<double> o(D, 0.0);
        for (size_t e = 0; e < n; ++e) {
            const double w = scores[e] / denom;
            for (int r = 0; r < D; ++r) {
                double vr = 0.0;
                for (int c = 0; c < D; ++c)
                    vr += params.wv[static_cast<size_t>(r) * D + c] * set.features[e * D + c];
                o[r] += w * vr;
            }
        }
        out.insert(out.end(), o.begin(), o.end());
    }
    return out;
}

} // namespace pbev
