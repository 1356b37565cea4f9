#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pepnet::gradcheck {

struct OpReport {
    std::string name;
    int cases = 0;
    double max_rel_err = 0.0;
    bool pass = false;
    // composite graphs only: coordinates whose finite-difference probe landed
    // on a relu kink (detected by a half-step consistency check) and the total
    // coordinates probed; more than 0.1% skipped fails the entry
    int64_t skipped_nonsmooth = 0;
    int64_t coords_checked = 0;
};

// Checks every tape operator and the composed stage / recurrent / regressor
// graphs against central finite differences (h = 1e-5) at 64-bit precision.
// Relative error convention: |analytic - fd| / max(|analytic|, |fd|, 1).
std::vector<OpReport> run_all(uint64_t seed = 20240901, double tol = 1e-4);

bool all_pass(const std::vector<OpReport>& reports);

// Fixed-width table, one line per entry plus a PASS/FAIL footer.
std::string format_table(const std::vector<OpReport>& reports);

}  // namespace pepnet::gradcheck
