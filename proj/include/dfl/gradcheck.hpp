#pragma once

#include <functional>
#include <string>

#include "dfl/autodiff.hpp"
#include "dfl/optim.hpp"

namespace dfl {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;  // flat coordinate of the worst error
    std::string worst_name;       // parameter name, for store checks
    double analytic = 0.0;        // at the worst coordinate
    double numeric = 0.0;
    std::size_t coordinates = 0;
    // Coordinates whose +h and -h evaluations disagree on some ReLU's active
    // set, and the worst error among the remaining ones. Diagnostic only.
    std::size_t kinks_crossed = 0;
    double max_rel_error_smooth = 0.0;
};

// Builds a scalar on `tape` from the leaf `x`.
using ScalarFn = std::function<Var(Tape& tape, Var x)>;

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h against the tape
// gradient, relative error denominator max(|analytic|, |numeric|, 1e-8).
GradCheckResult finite_diff_check(const ScalarFn& fn, const Tensor& x, double h = 1e-5);

using StoreLossFn = std::function<Var(Tape& tape, const ParamBinding& params)>;

// Same check over every scalar of every parameter in `store`. The store is
// restored exactly before returning.
GradCheckResult finite_diff_check(const StoreLossFn& fn, ParamStore& store, double h = 1e-5);

}  // namespace dfl
