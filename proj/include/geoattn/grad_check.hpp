// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of reverse-mode gradients.
#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "geoattn/tape.hpp"
#include "geoattn/tensor.hpp"

namespace geoattn {

// A scalar-valued function of one tensor. With a tape it must build the
// recorded graph; with nullptr it must evaluate pure.
using ScalarFn = std::function<Tensor(const Tensor&, Tape*)>;

inline std::vector<double> finite_difference_gradient(const ScalarFn& f, const Tensor& x,
                                                      double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_gradient: h must be > 0");
  Tensor probe = x.clone();
  std::vector<double> grad(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double x0 = probe[i];
    probe[i] = x0 + h;
    const double fp = f(probe, nullptr)[0];
    probe[i] = x0 - h;
    const double fm = f(probe, nullptr)[0];
    probe[i] = x0;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

inline std::vector<double> analytic_gradient(const ScalarFn& f, const Tensor& x) {
  Tensor probe = x.clone();
  probe.set_requires_grad();
  Tape tape;
  Tensor loss = f(probe, &tape);
  if (loss.numel() != 1)
    throw std::invalid_argument("analytic_gradient: f must return a scalar");
  tape.backward(loss);
  return probe.grad_vec();
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("max_rel_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::fabs(a[i]) + std::fabs(b[i]) + 1e-12;
    const double err = std::fabs(a[i] - b[i]) / denom;
    if (err > worst) worst = err;
  }
  return worst;
}

// max over coordinates of |analytic - central difference| / (|a| + |c| + 1e-12)
inline double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  return max_rel_error(analytic_gradient(f, x), finite_difference_gradient(f, x, h));
}

}  // namespace geoattn
