#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sasnet {

struct GradCheckRow {
    std::string op;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradCheckResult {
    std::vector<GradCheckRow> rows;
    bool all_pass = false;
    std::string report; // one line per op, deterministic given the seed
};

inline constexpr double kGradCheckTolerance = 1e-5;

// Central finite-difference verification (step 1e-5, 64-bit) of every
// analytic gradient: per-op checks over 20 seeds, then end-to-end losses on a
// shrunken-input replica of the full architecture. inject_fault_op ("sigmoid")
// corrupts that op's analytic derivative inside the harness so the failure
// reporting can be tested.
GradCheckResult run_gradcheck(std::uint64_t seed, const std::string& inject_fault_op = "");

} // namespace sasnet
