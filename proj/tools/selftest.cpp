#include <iostream>

#include "commands.hpp"
#include "pbev/verification.hpp"

namespace pbev::cli {

int cmd_selftest() {
    bool all_pass = true;
    for (const SuiteResult& res : run_all_suites()) {
        std::cout << (res.pass ? "[PASS] " : "[FAIL] ") << res.name << ": " << res.detail
                  << "\n";
        all_pass = all_pass && res.pass;
    }
    return all_pass ? kOk : kTestFailure;
}

} // namespace pbev::cli
