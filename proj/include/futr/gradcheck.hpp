#pragma once

#include <cmath>
#include <vector>

#include "futr/tensor.hpp"

namespace futr {

// Central-difference check of reverse-mode gradients, meant to run in
// double precision (float FD is noise-dominated). `f` is any deterministic
// scalar-valued function of the given parameter tensors: it is called as
// f(tape) with tape == nullptr for the plain evaluations.
//
// Returns max over parameter elements of
//   |analytic - central_diff| / max(1, |central_diff|).
template <typename F>
double grad_check(F&& f, std::vector<Tensor<double>> params, double step) {
  for (auto& p : params) {
    p.set_needs_grad(true);
    p.ensure_grad();
    p.zero_grad();
  }

  Tape<double> tape;
  Tensor<double> loss = f(&tape);
  if (!std::isfinite(loss.item()))
    throw NumericError("grad_check: non-finite loss");
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + step;
      const double up = f(static_cast<Tape<double>*>(nullptr)).item();
      vals[i] = keep - step;
      const double dn = f(static_cast<Tape<double>*>(nullptr)).item();
      vals[i] = keep;
      if (!std::isfinite(up) || !std::isfinite(dn))
        throw NumericError("grad_check: non-finite loss during perturbation");
      const double fd = (up - dn) / (2.0 * step);
      const double err =
          std::abs(analytic[pi][i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace futr
