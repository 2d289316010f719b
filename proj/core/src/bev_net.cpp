#include "pbev/bev_net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "pbev/rng.hpp"

namespace pbev {

HeadParams HeadParams::zeros(int in_dim, int hidden) {
    if (in_dim < 1 || hidden < 1) throw std::invalid_argument("HeadParams: dims must be >= 1");
    HeadParams p;
    p.in_dim = in_dim;
    p.hidden = hidden;
    p.w_flat.assign(static_cast<size_t>(hidden) * in_dim, 0.0);
    p.w_hidden.assign(static_cast<size_t>(hidden) * hidden, 0.0);
    p.b_hidden.assign(hidden, 0.0);
    p.w_out.assign(hidden, 0.0);
    p.b_out.assign(1, 0.0);
    return p;
}

HeadParams HeadParams::random(int in_dim, int hidden, uint64_t seed) {
    HeadParams p = zeros(in_dim, hidden);
    Rng rng(seed);
    const double s_flat = std::sqrt(2.0 / in_dim);
    const double s_hidden = std::sqrt(2.0 / hidden);
    for (double& w : p.w_flat) w = s_flat * rng.next_normal();
    for (double& w : p.w_hidden) w = s_hidden * rng.next_normal();
    for (double& w : p.w_out) w = s_hidden * rng.next_normal();
    return p;
}

std::vector<NamedTensor> HeadParams::to_tensors() const {
    const auto h = static_cast<uint32_t>(hidden);
    const auto in = static_cast<uint32_t>(in_dim);
    return {{"head.w_flat", {h, in}, w_flat},
            {"head.w_hidden", {h, h}, w_hidden},
            {"head.b_hidden", {h}, b_hidden},
            {"head.w_out", {h}, w_out},
            {"head.b_out", {1}, b_out}};
}

HeadParams HeadParams::from_tensors(const std::vector<NamedTensor>& tensors) {
    const NamedTensor* flat = nullptr;
    for (const auto& t : tensors) {
        if (t.name == "head.w_flat") flat = &t;
    }
    if (!flat || flat->dims.size() != 2) {
        throw std::runtime_error("checkpoint: head.w_flat missing or malformed");
    }
    const int hidden = static_cast<int>(flat->dims[0]);
    const int in_dim = static_cast<int>(flat->dims[1]);
    HeadParams p = zeros(in_dim, hidden);
    p.w_flat = flat->data;
    p.w_hidden = find_tensor(tensors, "head.w_hidden", p.w_hidden.size()).data;
    p.b_hidden = find_tensor(tensors, "head.b_hidden", p.b_hidden.size()).data;
    p.w_out = find_tensor(tensors, "head.w_out", p.w_out.size()).data;
    p.b_out = find_tensor(tensors, "head.b_out", 1).data;
    return p;
}

HeadGrads HeadGrads::zeros_like(const HeadParams& p) {
    HeadGrads g;
    g.w_flat.assign(p.w_flat.size(), 0.0);
    g.w_hidden.assign(p.w_hidden.size(), 0.0);
    g.b_hidden.assign(p.b_hidden.size(), 0.0);
    g.w_out.assign(p.w_out.size(), 0.0);
    g.b_out.assign(1, 0.0);
    return g;
}

void HeadGrads::add(const HeadGrads& other) {
    auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
        for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    acc(w_flat, other.w_flat);
    acc(w_hidden, other.w_hidden);
    acc(b_hidden, other.b_hidden);
    acc(w_out, other.w_out);
    acc(b_out, other.b_out);
}

AdamState AdamState::init(const AdamConfig& cfg, std::span<const size_t> tensor_sizes) {
    AdamState st;
    st.cfg = cfg;
    for (size_t n : tensor_sizes) {
        st.m.emplace_back(n, 0.0);
        st.v.emplace_back(n, 0.0);
    }
    return st;
}

void adam_step(std::span<double* const> params, std::span<const std::vector<double>> grads,
               AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw std::invalid_argument("adam_step: tensor list shape mismatch");
    }
    ++state.step;
    const auto& c = state.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (size_t t = 0; t < params.size(); ++t) {
        auto& m = state.m[t];
        auto& v = state.v[t];
        const auto& g = grads[t];
        if (g.size() != m.size()) throw std::invalid_argument("adam_step: gradient size mismatch");
        double* p = params[t];
        for (size_t i = 0; i < g.size(); ++i) {
            const double gi = g[i] + c.weight_decay * p[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

std::vector<double> flatten_pillar(const PulledFeatures& pulled, int n_z) {
    if (n_z < 1 || pulled.n_points() % static_cast<size_t>(n_z) != 0) {
        throw std::invalid_argument("flatten_pillar: point count is not a multiple of n_z");
    }
    // Points are stored cell-major with ascending z, so each cell's
    // (n_z * C)-vector is already contiguous.
    return pulled.data;
}

namespace {

PointBatch pillar_batch(const BevGrid& grid, const PillarSpec& pillar, const SampleSet& cells) {
    PointBatch batch;
    const auto zs = pillar.z_samples();
    batch.points.reserve(cells.size() * zs.size());
    for (const Cell& c : cells.cells) {
        const auto [x, y] = grid.cell_to_world(c.ix, c.iy);
        for (int iz = 0; iz < pillar.n_z; ++iz) {
            batch.push({x, y, zs[iz]}, 0, {c.ix, c.iy, iz});
        }
    }
    return batch;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

} // namespace

CellsForward forward_cells_cached(std::span<const FeatureVolume> vols, const CameraRig& rig,
                                  const BevGrid& grid, const PillarSpec& pillar,
                                  const SampleSet& cells, const HeadParams& params) {
    CellsForward fwd;
    fwd.batch = pillar_batch(grid, pillar, cells);
    fwd.table = build_visibility_table(rig, fwd.batch);
    fwd.pulled = sparse_pull(vols, fwd.table);
    fwd.flat = flatten_pillar(fwd.pulled, pillar.n_z);

    const size_t n_cells = cells.size();
    const int in_dim = pillar.n_z * fwd.pulled.channels;
    if (in_dim != params.in_dim) {
        throw std::invalid_argument("forward_cells: head in_dim does not match n_z*C");
    }
    const int H = params.hidden;

    fwd.z0.assign(n_cells * H, 0.0);
    fwd.h0.assign(n_cells * H, 0.0);
    fwd.z1.assign(n_cells * H, 0.0);
    fwd.h1.assign(n_cells * H, 0.0);
    fwd.result.cells = cells;
    fwd.result.logits.assign(n_cells, 0.0);

    for (size_t i = 0; i < n_cells; ++i) {
        const double* x = fwd.flat.data() + i * in_dim;
        double* z0 = fwd.z0.data() + i * H;
        double* h0 = fwd.h0.data() + i * H;
        double* z1 = fwd.z1.data() + i * H;
        double* h1 = fwd.h1.data() + i * H;
        for (int r = 0; r < H; ++r) {
            const double* row = params.w_flat.data() + static_cast<size_t>(r) * in_dim;
            double acc = 0.0;
            for (int c = 0; c < in_dim; ++c) acc += row[c] * x[c];
            z0[r] = acc;
            h0[r] = relu(acc);
        }
        for (int r = 0; r < H; ++r) {
            const double* row = params.w_hidden.data() + static_cast<size_t>(r) * H;
            double acc = params.b_hidden[r];
            for (int c = 0; c < H; ++c) acc += row[c] * h0[c];
            z1[r] = acc;
            h1[r] = relu(acc);
        }
        double logit = params.b_out[0];
        for (int r = 0; r < H; ++r) logit += params.w_out[r] * h1[r];
        fwd.result.logits[i] = logit;
    }
    return fwd;
}

PassResult forward_cells(std::span<const FeatureVolume> vols, const CameraRig& rig,
                         const BevGrid& grid, const PillarSpec& pillar, const SampleSet& cells,
                         const HeadParams& params) {
    return forward_cells_cached(vols, rig, grid, pillar, cells, params).result;
}

std::vector<double> hidden_features(const CellsForward& fwd) { return fwd.h1; }

BceResult bce_on_points(const PassResult& result, const std::vector<uint8_t>& labels) {
    result.validate();
    if (result.size() == 0) throw std::invalid_argument("bce_on_points: empty point set");
    if (labels.size() != result.size()) {
        throw std::invalid_argument("bce_on_points: labels length mismatch");
    }
    BceResult out;
    out.dlogits.assign(result.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(result.size());
    for (size_t i = 0; i < result.size(); ++i) {
        const double l = result.logits[i];
        const double y = labels[i] ? 1.0 : 0.0;
        // stable: max(l,0) - l*y + log(1+exp(-|l|))
        out.loss += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
        out.dlogits[i] = (sigmoid(l) - y) * inv_n;
    }
    out.loss *= inv_n;
    return out;
}

HeadBackward head_backward(const CellsForward& fwd, const HeadParams& params,
                           std::span<const double> dlogits) {
    const size_t n_cells = fwd.result.size();
    if (dlogits.size() != n_cells) {
        throw std::invalid_argument("head_backward: dlogits length mismatch");
    }
    const int H = params.hidden;
    const int in_dim = params.in_dim;

    HeadBackward back;
    back.grads = HeadGrads::zeros_like(params);
    back.d_flat.assign(n_cells * in_dim, 0.0);

    std::vector<double> dz1(H), dz0(H);
    for (size_t i = 0; i < n_cells; ++i) {
        const double dl = dlogits[i];
        const double* h1 = fwd.h1.data() + i * H;
        const double* h0 = fwd.h0.data() + i * H;
        const double* z1 = fwd.z1.data() + i * H;
        const double* z0 = fwd.z0.data() + i * H;
        const double* x = fwd.flat.data() + i * in_dim;

        back.grads.b_out[0] += dl;
        for (int r = 0; r < H; ++r) {
            back.grads.w_out[r] += dl * h1[r];
            dz1[r] = z1[r] > 0.0 ? dl * params.w_out[r] : 0.0;
        }
        for (int r = 0; r < H; ++r) {
            back.grads.b_hidden[r] += dz1[r];
            double* row = back.grads.w_hidden.data() + static_cast<size_t>(r) * H;
            for (int c = 0; c < H; ++c) row[c] += dz1[r] * h0[c];
        }
        std::fill(dz0.begin(), dz0.end(), 0.0);
        for (int r = 0; r < H; ++r) {
            const double* row = params.w_hidden.data() + static_cast<size_t>(r) * H;
            for (int c = 0; c < H; ++c) dz0[c] += dz1[r] * row[c];
        }
        for (int c = 0; c < H; ++c) {
            if (z0[c] <= 0.0) dz0[c] = 0.0;
        }
        double* dx = back.d_flat.data() + i * in_dim;
        for (int r = 0; r < H; ++r) {
            double* row = back.grads.w_flat.data() + static_cast<size_t>(r) * in_dim;
            const double* prow = params.w_flat.data() + static_cast<size_t>(r) * in_dim;
            const double d = dz0[r];
            for (int c = 0; c < in_dim; ++c) {
                row[c] += d * x[c];
                dx[c] += d * prow[c];
            }
        }
    }
    // flatten is a reshape, so d_pulled aliases d_flat
    back.d_pulled = back.d_flat;
    return back;
}

LossAndGrads loss_and_grads(std::span<const FeatureVolume> vols, const CameraRig& rig,
                            const BevGrid& grid, const PillarSpec& pillar,
                            const SampleSet& cells, const std::vector<uint8_t>& labels,
                            const HeadParams& params) {
    const CellsForward fwd = forward_cells_cached(vols, rig, grid, pillar, cells, params);
    const BceResult bce = bce_on_points(fwd.result, labels);
    HeadBackward back = head_backward(fwd, params, bce.dlogits);
    LossAndGrads out;
    out.loss = bce.loss;
    out.head = std::move(back.grads);
    out.vol_grads = sparse_pull_backward(vols, fwd.table, back.d_pulled);
    return out;
}

size_t DenseBevMap::n_sampled() const {
    size_t n = 0;
    for (uint8_t s : sampled) n += s;
    return n;
}

double iou(const DenseBevMap& pred, const std::vector<uint8_t>& gt, double threshold) {
    if (gt.size() != pred.prob.size()) throw std::invalid_argument("iou: shape mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
        const bool p = pred.prob[i] > threshold;
        const bool g = gt[i] != 0;
        inter += (p && g);
        uni += (p || g);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

SampleSet all_cells(const BevGrid& grid) {
    SampleSet s;
    s.cells.reserve(grid.n_cells());
    for (int iy = 0; iy < grid.ny(); ++iy)
        for (int ix = 0; ix < grid.nx(); ++ix) s.cells.push_back({ix, iy});
    return s;
}

} // namespace

DenseBevMap dense_inference(std::span<const FeatureVolume> vols, const CameraRig& rig,
                            const BevGrid& grid, const PillarSpec& pillar,
                            const HeadParams& params) {
    const PassResult pass = forward_cells(vols, rig, grid, pillar, all_cells(grid), params);
    DenseBevMap map;
    map.nx = grid.nx();
    map.ny = grid.ny();
    map.prob.assign(grid.n_cells(), 0.0);
    map.sampled.assign(grid.n_cells(), 1);
    for (size_t i = 0; i < pass.size(); ++i) {
        const Cell c = pass.cells.cells[i];
        map.prob[grid.flat_index(c.ix, c.iy)] = sigmoid(pass.logits[i]);
    }
    return map;
}

DenseBevMap sparse_inference(std::span<const FeatureVolume> vols, const CameraRig& rig,
                             const BevGrid& grid, const PillarSpec& pillar,
                             const HeadParams& params, const CoarseStrategy& coarse,
                             double tau, int k_fine, SparseInferenceStats* stats) {
    const SampleSet coarse_cells = sample_coarse(coarse, grid);
    CellsForward coarse_fwd =
        forward_cells_cached(vols, rig, grid, pillar, coarse_cells, params);
    const SampleSet anchors = select_anchors(coarse_fwd.result, AnchorRule{Threshold{tau}});
    const SampleSet fine_cells = densify(anchors, k_fine, grid);
    uint64_t ops = coarse_fwd.pulled.interp_ops;

    PassResult merged;
    size_t n_fine = 0;
    if (!fine_cells.cells.empty()) {
        CellsForward fine_fwd =
            forward_cells_cached(vols, rig, grid, pillar, fine_cells, params);
        ops += fine_fwd.pulled.interp_ops;
        n_fine = fine_cells.size();
        merged = merge_passes(coarse_fwd.result, fine_fwd.result);
    } else {
        merged = coarse_fwd.result;
    }

    DenseBevMap map;
    map.nx = grid.nx();
    map.ny = grid.ny();
    map.prob.assign(grid.n_cells(), 0.0);   // dense completion: empty
    map.sampled.assign(grid.n_cells(), 0);
    for (size_t i = 0; i < merged.size(); ++i) {
        const Cell c = merged.cells.cells[i];
        const size_t at = grid.flat_index(c.ix, c.iy);
        map.prob[at] = sigmoid(merged.logits[i]);
        map.sampled[at] = 1;
    }
    if (stats) {
        stats->n_coarse = coarse_cells.size();
        stats->n_anchors = anchors.size();
        stats->n_fine = n_fine;
        stats->n_sampled = merged.size();
        stats->interp_ops = ops;
    }
    return map;
}

std::vector<double*> head_param_ptrs(HeadParams& p) {
    return {p.w_flat.data(), p.w_hidden.data(), p.b_hidden.data(), p.w_out.data(),
            p.b_out.data()};
}

std::vector<size_t> head_param_sizes(const HeadParams& p) {
    return {p.w_flat.size(), p.w_hidden.size(), p.b_hidden.size(), p.w_out.size(),
            p.b_out.size()};
}

std::vector<std::vector<double>> head_grad_list(const HeadGrads& g) {
    return {g.w_flat, g.w_hidden, g.b_hidden, g.w_out, g.b_out};
}

namespace {
inline uint64_t cell_key(const Cell& c) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(c.ix)) << 32) |
           static_cast<uint32_t>(c.iy);
}
} // namespace

EpochMetrics train_epoch(std::span<const TrainScene> scenes, const CameraRig& rig,
                         const BevGrid& grid, const PillarSpec& pillar, HeadParams& params,
                         AdamState& adam, const TrainConfig& cfg, uint64_t& global_step) {
    EpochMetrics metrics;
    for (const TrainScene& scene : scenes) {
        if (cfg.max_steps > 0 && metrics.steps >= cfg.max_steps) break;

        const CoarseStrategy coarse_strategy{RandomUniform{cfg.n_coarse},
                                             hash_mix(cfg.seed, 0xC0A25E, global_step)};
        const SampleSet coarse_cells = sample_coarse(coarse_strategy, grid);
        CellsForward coarse_fwd =
            forward_cells_cached(scene.vols, rig, grid, pillar, coarse_cells, params);

        // densified fine set around the highest-logit anchors
        PassResult merged = coarse_fwd.result;
        CellsForward fine_fwd;
        bool have_fine = false;
        if (cfg.n_fine > 0) {
            const SampleSet anchors =
                select_anchors(coarse_fwd.result, AnchorRule{TopK{cfg.n_anchor}});
            SampleSet fine_cells = densify(anchors, cfg.k_fine, grid);
            fine_cells = cap_budget(fine_cells, cfg.n_fine,
                                    hash_mix(cfg.seed, 0xF1FE, global_step));
            if (!fine_cells.cells.empty()) {
                fine_fwd = forward_cells_cached(scene.vols, rig, grid, pillar, fine_cells, params);
                merged = merge_passes(coarse_fwd.result, fine_fwd.result);
                have_fine = true;
            }
        }

        std::vector<uint8_t> labels(merged.size());
        for (size_t i = 0; i < merged.size(); ++i) {
            const Cell c = merged.cells.cells[i];
            labels[i] = scene.gt[grid.flat_index(c.ix, c.iy)];
        }
        const BceResult bce = bce_on_points(merged, labels);

        // route merged gradients back to the pass that produced each logit
        std::vector<double> d_coarse(coarse_fwd.result.size(), 0.0);
        std::vector<double> d_fine(have_fine ? fine_fwd.result.size() : 0, 0.0);
        std::unordered_map<uint64_t, size_t> fine_pos;
        if (have_fine) {
            fine_pos.reserve(fine_fwd.result.size());
            for (size_t i = 0; i < fine_fwd.result.size(); ++i) {
                fine_pos[cell_key(fine_fwd.result.cells.cells[i])] = i;
            }
        }
        std::unordered_map<uint64_t, size_t> coarse_pos;
        coarse_pos.reserve(coarse_fwd.result.size());
        for (size_t i = 0; i < coarse_fwd.result.size(); ++i) {
            coarse_pos[cell_key(coarse_fwd.result.cells.cells[i])] = i;
        }
        for (size_t i = 0; i < merged.size(); ++i) {
            const uint64_t key = cell_key(merged.cells.cells[i]);
            if (have_fine) {
                const auto it = fine_pos.find(key);
                if (it != fine_pos.end()) {
                    d_fine[it->second] = bce.dlogits[i];
                    continue;
                }
            }
            d_coarse[coarse_pos.at(key)] = bce.dlogits[i];
        }

        HeadBackward back = head_backward(coarse_fwd, params, d_coarse);
        // backward through the pulling kernel as well (features are fixed
        // inputs here, but the full chain runs every step)
        sparse_pull_backward(scene.vols, coarse_fwd.table, back.d_pulled);
        metrics.interp_ops += coarse_fwd.pulled.interp_ops;
        metrics.points_forwarded += coarse_fwd.result.size();
        if (have_fine) {
            HeadBackward fine_back = head_backward(fine_fwd, params, d_fine);
            sparse_pull_backward(scene.vols, fine_fwd.table, fine_back.d_pulled);
            back.grads.add(fine_back.grads);
            metrics.interp_ops += fine_fwd.pulled.interp_ops;
            metrics.points_forwarded += fine_fwd.result.size();
        }

        auto ptrs = head_param_ptrs(params);
        adam_step(ptrs, head_grad_list(back.grads), adam);

        metrics.losses.push_back(bce.loss);
        ++metrics.steps;
        ++global_step;
    }
    for (double l : metrics.losses) metrics.mean_loss += l;
    if (!metrics.losses.empty()) metrics.mean_loss /= static_cast<double>(metrics.losses.size());
    return metrics;
}

} // namespace pbev
