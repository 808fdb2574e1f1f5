#include "spqi/stats.hpp"

#include <cmath>
#include <limits>

#include "spqi/errors.hpp"

namespace spqi {

namespace {

double beta_cf(double a, double b, double x) {
  // Modified Lentz continued fraction for the incomplete beta.
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, std::size_t df) {
  if (df == 0) return 1.0;
  const double d = static_cast<double>(df);
  return incomplete_beta(d / 2.0, 0.5, d / (d + t * t));
}

PairedTTestResult paired_significance(std::span<const double> a,
                                      std::span<const double> b) {
  if (a.size() != b.size())
    throw ContractError("paired_significance: length mismatch");
  if (a.size() < 2) throw ContractError("paired_significance needs n >= 2");
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (a[i] - b[i]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);

  PairedTTestResult res;
  res.df = n - 1;
  if (var == 0.0) {
    res.degenerate = true;
    res.p_value = 1.0;
    res.t_stat = 0.0;
    return res;
  }
  res.t_stat = mean / std::sqrt(var / static_cast<double>(n));
  res.p_value = student_t_two_sided_p(res.t_stat, res.df);
  return res;
}

}  // namespace spqi
