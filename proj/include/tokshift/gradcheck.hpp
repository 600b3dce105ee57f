#pragma once

#include <functional>

#include "tokshift/tensor.hpp"

namespace tokshift {

struct GradCheckReport {
    std::string op;
    double max_rel_err = 0.0;
    int64_t worst_index = -1;        // flat offset into the concatenated inputs
    bool nondifferentiable = false;  // oracle disagreement above 0.1

    bool pass(double tol = 1e-5) const { return !nondifferentiable && max_rel_err < tol; }
};

using ScalarFn = std::function<double(const std::vector<Tensor>&)>;
using GradFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

// Compares the analytic gradient of f against central differences
// (f(x+eps) - f(x-eps)) / (2 eps) entrywise; relative error is
// |a - n| / max(1, |a|, |n|). eps must lie in (0, 1e-2].
GradCheckReport grad_check(const std::string& op, const ScalarFn& f, const GradFn& analytic,
                           const std::vector<Tensor>& inputs, double eps = 1e-5);

// Fixed battery over every differentiable op and the end-to-end tiny model;
// each op appears exactly once. inject_sign_bug flips the sign of one
// analytic gradient to prove the oracle catches broken backwards.
std::vector<GradCheckReport> gradcheck_suite(bool inject_sign_bug = false);

}  // namespace tokshift
