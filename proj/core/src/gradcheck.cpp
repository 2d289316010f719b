#include "pbev/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pbev {

GradCheckReport check_gradients(
    const std::function<double()>& loss,
    const std::vector<std::pair<std::string, std::span<double>>>& tensors,
    const std::vector<std::span<const double>>& analytic, double step, double floor) {
    if (tensors.size() != analytic.size()) {
        throw std::invalid_argument("check_gradients: tensor/gradient list mismatch");
    }
    GradCheckReport report;
    for (size_t t = 0; t < tensors.size(); ++t) {
        auto [name, data] = tensors[t];
        if (data.size() != analytic[t].size()) {
            throw std::invalid_argument("check_gradients: size mismatch for " + name);
        }
        for (size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + step;
            const double up = loss();
            data[i] = saved - step;
            const double down = loss();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[t][i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_index = i;
                report.worst_tensor = name;
            }
        }
    }
    return report;
}

} // namespace pbev
