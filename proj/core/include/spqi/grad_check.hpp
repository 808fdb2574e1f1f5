#pragma once

#include <functional>
#include <vector>

#include "spqi/tape.hpp"

namespace spqi {

/// Builds a scalar-valued graph from leaf values already registered on the
/// given tape. Must be deterministic: grad_check re-runs it with perturbed
/// inputs to form central differences.
using TapeFunction =
    std::function<Tape::Value(Tape&, const std::vector<Tape::Value>&)>;

/// Compares reverse-mode gradients of f against central differences
/// (f(x+eps) - f(x-eps)) / 2eps, coordinate by coordinate, and returns the
/// worst relative error, with denominator max(|analytic|, |numeric|, 1e-8).
/// eps must lie in [1e-7, 1e-3]; f must produce a scalar.
double grad_check(const TapeFunction& f, const std::vector<Tensor>& inputs,
                  double eps);

}  // namespace spqi
