#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pbev {

struct SuiteResult {
    std::string name;
    bool pass = false;
    double worst = 0.0;  // worst relative error observed
    std::string detail;
};

// Oracle-equivalence suites: randomized instances of the sparse kernels
// checked elementwise against their independent dense references.
SuiteResult verify_pulling_oracle(int instances = 100, uint64_t seed = 7);
SuiteResult verify_attention_oracle(int instances = 100, uint64_t seed = 11);

// Finite-difference suites (64-bit, central differences, step 1e-5).
SuiteResult verify_pulling_gradient(uint64_t seed = 13);
SuiteResult verify_attention_gradient(uint64_t seed = 17);
SuiteResult verify_bce_gradient(uint64_t seed = 19);
SuiteResult verify_end_to_end_gradient(uint64_t seed = 23);

std::vector<SuiteResult> run_all_suites();

} // namespace pbev
