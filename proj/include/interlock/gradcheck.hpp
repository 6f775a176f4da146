#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "interlock/tape.hpp"

namespace interlock {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_coord = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central-difference check of analytic gradients.
//   loss():            scalar function of the current parameter values
//   compute_grads():   zeroes param grads, rebuilds the graph, backwards,
//                      and leaves d(loss)/d(param) in each param's grad
// Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|); the report
// holds the max over all checked coordinates. max_coords > 0 checks a seeded
// random subset of coordinates per parameter instead of all of them.
GradCheckReport grad_check(const std::vector<Parameter*>& params,
                           const std::function<double()>& loss,
                           const std::function<void()>& compute_grads,
                           double eps,
                           int max_coords = 0,
                           std::uint64_t coord_seed = 0);

}  // namespace interlock
