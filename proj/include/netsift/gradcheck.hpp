#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace netsift {

struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
};

// One case = one op; returns the max relative error for a given seed.
using GradCheckCase = std::pair<std::string, std::function<double(uint64_t)>>;

// Every differentiable op plus the assembled classifier loss, each probed
// with finite differences against its handwritten backward pass.
std::vector<GradCheckCase> standard_gradcheck_cases();

// Runs every case over `seeds_per_op` seeds derived from base_seed and keeps
// the worst error per op. extra cases run after the standard set.
std::vector<GradCheckResult> run_gradcheck_suite(
    uint64_t base_seed, int seeds_per_op,
    const std::vector<GradCheckCase>& extra = {});

constexpr double kGradCheckTolerance = 1e-4;

}  // namespace netsift
