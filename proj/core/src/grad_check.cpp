#include "spqi/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "spqi/errors.hpp"

namespace spqi {

namespace {

double evaluate_scalar(const TapeFunction& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Tape::Value> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.input(t));
  const Tape::Value out = f(tape, leaves);
  const Tensor& v = tape.value(out);
  if (v.size() != 1)
    throw ContractError("grad_check: function output is not scalar, got " +
                        v.shape_str());
  return v.at(0);
}

}  // namespace

double grad_check(const TapeFunction& f, const std::vector<Tensor>& inputs,
                  double eps) {
  if (eps < 1e-7 || eps > 1e-3)
    throw ContractError("grad_check eps must lie in [1e-7, 1e-3]");

  // One analytic pass.
  Tape tape;
  std::vector<Tape::Value> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.input(t));
  const Tape::Value out = f(tape, leaves);
  if (tape.value(out).size() != 1)
    throw ContractError("grad_check: function output is not scalar, got " +
                        tape.value(out).shape_str());
  const Tape::Gradients grads = tape.backward(out);

  double worst = 0.0;
  std::vector<Tensor> work = inputs;
  for (std::size_t i = 0; i < work.size(); ++i) {
    for (std::size_t c = 0; c < work[i].size(); ++c) {
      const double saved = work[i].at(c);
      work[i].at(c) = saved + eps;
      const double fp = evaluate_scalar(f, work);
      work[i].at(c) = saved - eps;
      const double fm = evaluate_scalar(f, work);
      work[i].at(c) = saved;

      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic =
          grads.contains(leaves[i]) ? grads.at(leaves[i]).at(c) : 0.0;
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace spqi
