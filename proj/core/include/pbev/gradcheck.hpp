#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pbev {

/// Central-finite-difference gradient verification shared by the test
/// suites and the CLI selftest.
struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t checked = 0;
    size_t worst_index = 0;
    std::string worst_tensor;
};

// Perturbs every entry of every registered tensor by +-step around its
// current value, re-evaluates `loss`, and compares the centered
// difference against the analytic gradient. Relative error uses
// max(|analytic|, |numeric|, floor) as the denominator.
GradCheckReport check_gradients(
    const std::function<double()>& loss,
    const std::vector<std::pair<std::string, std::span<double>>>& tensors,
    const std::vector<std::span<const double>>& analytic, double step = 1e-5,
    double floor = 1e-3);

} // namespace pbev
