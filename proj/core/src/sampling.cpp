#include "pbev/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "pbev/rng.hpp"

namespace pbev {

void PassResult::validate() const {
    if (cells.cells.size() != logits.size()) {
        throw std::invalid_argument("PassResult: cells/logits length mismatch");
    }
    for (double l : logits) {
        if (!std::isfinite(l)) throw std::invalid_argument("PassResult: non-finite logit");
    }
}

namespace {

// First n entries of a seeded Fisher-Yates pass over [0, total).
std::vector<uint32_t> draw_without_replacement(size_t total, size_t n, Rng& rng) {
    std::vector<uint32_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0u);
    for (size_t i = 0; i < n; ++i) {
        const size_t j = i + rng.next_below(total - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    return idx;
}

Cell cell_from_flat(const BevGrid& grid, uint32_t flat) {
    return Cell{static_cast<int>(flat % grid.nx()), static_cast<int>(flat / grid.nx())};
}

SampleSet sample_random_uniform(const RandomUniform& s, const BevGrid& grid, uint64_t seed) {
    if (s.n > grid.n_cells()) {
        throw std::invalid_argument("sample_coarse: n exceeds cell count");
    }
    Rng rng(seed);
    SampleSet out;
    out.cells.reserve(s.n);
    for (uint32_t flat : draw_without_replacement(grid.n_cells(), s.n, rng)) {
        out.cells.push_back(cell_from_flat(grid, flat));
    }
    return out;
}

SampleSet sample_regular(const RegularGrid& s, const BevGrid& grid) {
    if (s.spacing < 1) throw std::invalid_argument("sample_coarse: spacing must be >= 1");
    SampleSet out;
    for (int iy = 0; iy < grid.ny(); iy += s.spacing) {
        for (int ix = 0; ix < grid.nx(); ix += s.spacing) {
            out.cells.push_back({ix, iy});
        }
    }
    return out;
}

SampleSet sample_gaussian(const GaussianEgo& s, const BevGrid& grid, uint64_t seed) {
    if (!(s.sigma > 0.0)) throw std::invalid_argument("sample_coarse: sigma must be positive");
    if (s.n > grid.n_cells()) {
        throw std::invalid_argument("sample_coarse: n exceeds cell count");
    }
    // Weighted sampling without replacement (Efraimidis-Spirakis): the n
    // smallest -log(u)/w keys are distributed as sequential weighted draws.
    Rng rng(seed);
    const double inv_two_sigma2 = 1.0 / (2.0 * s.sigma * s.sigma);
    std::vector<std::pair<double, uint32_t>> keys;
    keys.reserve(grid.n_cells());
    for (int iy = 0; iy < grid.ny(); ++iy) {
        for (int ix = 0; ix < grid.nx(); ++ix) {
            const auto [x, y] = grid.cell_to_world(ix, iy);
            const double w = std::exp(-(x * x + y * y) * inv_two_sigma2);
            double u;
            do {
                u = rng.next_real();
            } while (u <= 0.0);
            const double key = w > 0.0 ? -std::log(u) / w
                                       : std::numeric_limits<double>::infinity();
            keys.emplace_back(key, static_cast<uint32_t>(grid.flat_index(ix, iy)));
        }
    }
    std::sort(keys.begin(), keys.end());
    SampleSet out;
    out.cells.reserve(s.n);
    for (size_t i = 0; i < s.n; ++i) out.cells.push_back(cell_from_flat(grid, keys[i].second));
    return out;
}

SampleSet sample_mask(const MaskPrior& s, const BevGrid& grid, uint64_t seed) {
    if (s.mask.size() != grid.n_cells()) {
        throw std::invalid_argument("sample_coarse: mask size does not match grid");
    }
    std::vector<uint32_t> active;
    for (uint32_t i = 0; i < s.mask.size(); ++i) {
        if (s.mask[i]) active.push_back(i);
    }
    if (active.empty()) {
        throw std::invalid_argument("sample_coarse: mask prior has no active cell");
    }
    SampleSet out;
    if (active.size() <= s.n) {
        out.cells.reserve(active.size());
        for (uint32_t flat : active) out.cells.push_back(cell_from_flat(grid, flat));
        return out;
    }
    Rng rng(seed);
    for (size_t i = 0; i < s.n; ++i) {
        const size_t j = i + rng.next_below(active.size() - i);
        std::swap(active[i], active[j]);
    }
    out.cells.reserve(s.n);
    for (size_t i = 0; i < s.n; ++i) out.cells.push_back(cell_from_flat(grid, active[i]));
    return out;
}

} // namespace

SampleSet sample_coarse(const CoarseStrategy& strategy, const BevGrid& grid) {
    return std::visit(
        [&](const auto& s) -> SampleSet {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, RandomUniform>) {
                return sample_random_uniform(s, grid, strategy.seed);
            } else if constexpr (std::is_same_v<T, RegularGrid>) {
                return sample_regular(s, grid);
            } else if constexpr (std::is_same_v<T, GaussianEgo>) {
                return sample_gaussian(s, grid, strategy.seed);
            } else {
                return sample_mask(s, grid, strategy.seed);
            }
        },
        strategy.kind);
}

SampleSet select_anchors(const PassResult& result, const AnchorRule& rule) {
    result.validate();
    if (std::holds_alternative<TopK>(rule.kind)) {
        if (result.size() == 0) {
            throw std::invalid_argument("select_anchors: TopK on an empty pass");
        }
        const size_t n = std::min(std::get<TopK>(rule.kind).n_anchor, result.size());
        std::vector<uint32_t> order(result.size());
        std::iota(order.begin(), order.end(), 0u);
        const auto& cells = result.cells.cells;
        const auto& logits = result.logits;
        std::partial_sort(order.begin(), order.begin() + n, order.end(),
                          [&](uint32_t a, uint32_t b) {
                              if (logits[a] != logits[b]) return logits[a] > logits[b];
                              return cells[a] < cells[b];
                          });
        SampleSet out;
        out.cells.reserve(n);
        for (size_t i = 0; i < n; ++i) out.cells.push_back(cells[order[i]]);
        return out;
    }
    const double tau = std::get<Threshold>(rule.kind).tau;
    SampleSet out;
    for (size_t i = 0; i < result.size(); ++i) {
        if (sigmoid(result.logits[i]) > tau) out.cells.push_back(result.cells.cells[i]);
    }
    return out;
}

SampleSet densify(const SampleSet& anchors, int k_fine, const BevGrid& grid) {
    if (k_fine < 1 || k_fine % 2 == 0) {
        throw std::invalid_argument("densify: k_fine must be odd and >= 1");
    }
    const int half = k_fine / 2;
    std::vector<uint8_t> seen(grid.n_cells(), 0);
    SampleSet out;
    for (const Cell& a : anchors.cells) {
        for (int dy = -half; dy <= half; ++dy) {
            for (int dx = -half; dx <= half; ++dx) {
                const int ix = a.ix + dx, iy = a.iy + dy;
                if (!grid.contains(ix, iy)) continue;
                uint8_t& flag = seen[grid.flat_index(ix, iy)];
                if (!flag) {
                    flag = 1;
                    out.cells.push_back({ix, iy});
                }
            }
        }
    }
    return out;
}

SampleSet cap_budget(const SampleSet& cells, size_t n_fine, uint64_t seed) {
    if (cells.cells.size() <= n_fine) return cells;
    Rng rng(seed);
    auto keep = draw_without_replacement(cells.cells.size(), n_fine, rng);
    std::sort(keep.begin(), keep.end());  // stable subset in input order
    SampleSet out;
    out.unique = cells.unique;
    out.cells.reserve(n_fine);
    for (uint32_t i : keep) out.cells.push_back(cells.cells[i]);
    return out;
}

namespace {
inline uint64_t cell_key(const Cell& c) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(c.ix)) << 32) |
           static_cast<uint32_t>(c.iy);
}
} // namespace

PassResult merge_passes(const PassResult& coarse, const PassResult& fine) {
    coarse.validate();
    fine.validate();
    PassResult out;
    out.cells.cells = coarse.cells.cells;
    out.logits = coarse.logits;
    std::unordered_map<uint64_t, size_t> pos;
    pos.reserve(coarse.size() + fine.size());
    for (size_t i = 0; i < out.logits.size(); ++i) pos[cell_key(out.cells.cells[i])] = i;
    for (size_t i = 0; i < fine.size(); ++i) {
        const auto [it, inserted] = pos.try_emplace(cell_key(fine.cells.cells[i]), out.logits.size());
        if (inserted) {
            out.cells.cells.push_back(fine.cells.cells[i]);
            out.logits.push_back(fine.logits[i]);
        } else {
            out.logits[it->second] = fine.logits[i];  // fine wins
        }
    }
    return out;
}

std::vector<uint8_t> lidar_to_mask(const std::vector<Vec3>& lidar_points, const BevGrid& grid) {
    std::vector<uint8_t> mask(grid.n_cells(), 0);
    for (const Vec3& p : lidar_points) {
        if (auto cell = grid.world_to_cell(p.x, p.y)) {
            mask[grid.flat_index(cell->ix, cell->iy)] = 1;
        }
    }
    return mask;
}

std::vector<uint8_t> subsample_pattern_mask(const BevGrid& grid, int s_k) {
    if (s_k < 1) throw std::invalid_argument("subsample_pattern_mask: factor must be >= 1");
    const int root = static_cast<int>(std::lround(std::sqrt(static_cast<double>(s_k))));
    const int half_root = static_cast<int>(std::lround(std::sqrt(s_k / 2.0)));
    std::vector<uint8_t> mask(grid.n_cells(), 0);
    if (root * root == s_k) {
        for (int iy = 0; iy < grid.ny(); iy += root)
            for (int ix = 0; ix < grid.nx(); ix += root) mask[grid.flat_index(ix, iy)] = 1;
        return mask;
    }
    if (2 * half_root * half_root == s_k) {
        // stride-s checkerboard lattice, density 1/(2 s^2)
        const int s = half_root;
        for (int iy = 0; iy < grid.ny(); iy += s)
            for (int ix = 0; ix < grid.nx(); ix += s)
                if (((ix / s) + (iy / s)) % 2 == 0) mask[grid.flat_index(ix, iy)] = 1;
        return mask;
    }
    throw std::invalid_argument("subsample_pattern_mask: factor must be s^2 or 2*s^2");
}

CoarseStrategy coarse_from_subsample_factor(const BevGrid& grid, int s_k) {
    const int root = static_cast<int>(std::lround(std::sqrt(static_cast<double>(s_k))));
    if (root * root == s_k) {
        return CoarseStrategy{RegularGrid{root}, 0};
    }
    auto mask = subsample_pattern_mask(grid, s_k);
    const size_t n = static_cast<size_t>(std::count(mask.begin(), mask.end(), uint8_t{1}));
    return CoarseStrategy{MaskPrior{std::move(mask), n}, 0};
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
        const size_t pos = text.find(sep, start);
        if (pos == std::string::npos) {
            parts.push_back(text.substr(start));
            break;
        }
        parts.push_back(text.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

uint64_t parse_seed_part(const std::string& part) {
    if (part.rfind("seed=", 0) != 0) {
        throw std::invalid_argument("strategy flag: expected seed=<n>, got '" + part + "'");
    }
    return std::stoull(part.substr(5));
}

} // namespace

CoarseStrategy parse_coarse_flag(const std::string& text) {
    const auto parts = split(text, ':');
    try {
        if (parts[0] == "random" && (parts.size() == 2 || parts.size() == 3)) {
            CoarseStrategy s{RandomUniform{std::stoull(parts[1])}, 0};
            if (parts.size() == 3) s.seed = parse_seed_part(parts[2]);
            return s;
        }
        if (parts[0] == "regular" && parts.size() == 2) {
            return CoarseStrategy{RegularGrid{std::stoi(parts[1])}, 0};
        }
        if (parts[0] == "gauss" && (parts.size() == 3 || parts.size() == 4)) {
            CoarseStrategy s{GaussianEgo{std::stod(parts[1]), std::stoull(parts[2])}, 0};
            if (parts.size() == 4) s.seed = parse_seed_part(parts[3]);
            return s;
        }
        if (parts[0] == "mask" && parts.size() >= 2 && parts[1] == "lidar") {
            // Empty mask marks "fill from the scene's LiDAR sweep".
            const size_t n = parts.size() == 3 ? std::stoull(parts[2]) : 0;
            return CoarseStrategy{MaskPrior{{}, n}, 0};
        }
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument("unparseable coarse strategy: '" + text + "'");
    }
    throw std::invalid_argument("unknown coarse strategy: '" + text + "'");
}

AnchorRule parse_anchor_flag(const std::string& text) {
    const auto parts = split(text, ':');
    try {
        if (parts[0] == "topk" && parts.size() == 2) {
            return AnchorRule{TopK{std::stoull(parts[1])}};
        }
        if (parts[0] == "thresh" && parts.size() == 2) {
            const double tau = std::stod(parts[1]);
            if (tau < 0.0 || tau > 1.0) {
                throw std::invalid_argument("tau outside [0,1]");
            }
            return AnchorRule{Threshold{tau}};
        }
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument("unparseable anchor rule: '" + text + "'");
    }
    throw std::invalid_argument("unknown anchor rule: '" + text + "'");
}

} // namespace pbev
