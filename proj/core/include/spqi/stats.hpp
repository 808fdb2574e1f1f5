#pragma once

#include <cstddef>
#include <span>

namespace spqi {

/// Regularized incomplete beta function I_x(a, b), continued-fraction
/// evaluation (Lentz).
double incomplete_beta(double a, double b, double x);

/// Two-sided p-value of Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, std::size_t df);

struct PairedTTestResult {
  double p_value = 1.0;
  double t_stat = 0.0;
  std::size_t df = 0;
  bool degenerate = false;  // zero-variance differences; p reported as 1.0
};

/// Two-sided paired t-test over per-seed metric pairs. Lengths must match and
/// be >= 2; identical lists are reported as degenerate with p = 1.0 so grid
/// automation never aborts.
PairedTTestResult paired_significance(std::span<const double> a,
                                      std::span<const double> b);

}  // namespace spqi
