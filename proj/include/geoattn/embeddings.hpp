// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic spatial embeddings and their closed-form LayerNorm dot products.
// Three 4-component embeddings of a 1-D coordinate share the property that
// the dot product of their LayerNorms approximates -2(x1-x2)^2 + 4 for small
// inputs; the trigonometric one is exact in the difference: 4 cos(x1 - x2).
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoattn/ops.hpp"
#include "geoattn/tensor.hpp"

namespace geoattn {

enum class EmbeddingKind { Trig, Lin, Quad };

inline const char* embedding_name(EmbeddingKind k) {
  switch (k) {
    case EmbeddingKind::Trig: return "trig";
    case EmbeddingKind::Lin: return "lin";
    case EmbeddingKind::Quad: return "quad";
  }
  return "?";
}

// The (a, b) of the shared target -a|x1-x2|^2 + b; both embeddings of a 1-D
// coordinate approximate -2 d^2 + 4.
struct ApproxConstants {
  double a = 2.0;
  double b = 4.0;
};

// 4-vector layout: (even part, -even part, odd part, -odd part)
inline std::vector<double> embed(double x, EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::Trig:
      return {std::cos(x), -std::cos(x), std::sin(x), -std::sin(x)};
    case EmbeddingKind::Lin:
      return {1.0, -1.0, x, -x};
    case EmbeddingKind::Quad: {
      const double q = 1.0 - 0.5 * x * x;
      return {q, -q, x, -x};
    }
  }
  throw std::invalid_argument("embed: unknown kind");
}

// n-dimensional generalization with 2n+2 components: a shared (even, -even)
// pair plus per-axis (x_i, -x_i) pairs. Lin uses constant 1 for the even
// part, Quad uses 1 - |x|^2/2. There is no trig analogue of this layout.
inline std::vector<double> embed_nd(const std::vector<double>& x, EmbeddingKind kind) {
  if (kind == EmbeddingKind::Trig) {
    if (x.size() != 1)
      throw std::invalid_argument("embed_nd: trig embedding is defined for 1-D only");
    return embed(x[0], kind);
  }
  double even = 1.0;
  if (kind == EmbeddingKind::Quad) {
    double norm2 = 0.0;
    for (double xi : x) norm2 += xi * xi;
    even = 1.0 - 0.5 * norm2;
  }
  std::vector<double> e;
  e.reserve(2 * x.size() + 2);
  e.push_back(even);
  e.push_back(-even);
  for (double xi : x) {
    e.push_back(xi);
    e.push_back(-xi);
  }
  return e;
}

// closed-form LN(E(x1)) . LN(E(x2)), no eps, no approximation
inline double ln_dot_exact(double x1, double x2, EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::Trig:
      return 4.0 * std::cos(x1 - x2);
    case EmbeddingKind::Lin:
      return 4.0 * (1.0 + x1 * x2) / std::sqrt((1.0 + x1 * x1) * (1.0 + x2 * x2));
    case EmbeddingKind::Quad: {
      const double q1 = 1.0 - 0.5 * x1 * x1;
      const double q2 = 1.0 - 0.5 * x2 * x2;
      const double s1 = std::sqrt(0.5 * (1.0 + 0.25 * x1 * x1 * x1 * x1));
      const double s2 = std::sqrt(0.5 * (1.0 + 0.25 * x2 * x2 * x2 * x2));
      return 2.0 * (q1 * q2 + x1 * x2) / (s1 * s2);
    }
  }
  throw std::invalid_argument("ln_dot_exact: unknown kind");
}

// numeric-pipeline counterpart of ln_dot_exact: embed, layer_norm (eps = 0,
// unit gain, zero bias), dot
inline double ln_dot_numeric(double x1, double x2, EmbeddingKind kind) {
  const std::vector<double> e1 = embed(x1, kind);
  const std::vector<double> e2 = embed(x2, kind);
  const int d = static_cast<int>(e1.size());
  Tensor gain({d}, 1.0), bias({d}, 0.0);
  Tensor a = layer_norm(Tensor({d}, e1), gain, bias, 0.0);
  Tensor b = layer_norm(Tensor({d}, e2), gain, bias, 0.0);
  double dot = 0.0;
  for (int j = 0; j < d; ++j) dot += a[static_cast<std::size_t>(j)] * b[static_cast<std::size_t>(j)];
  return dot;
}

// the quadratic both approximations target
inline double quadratic_target(double x1, double x2, const ApproxConstants& c = {}) {
  const double diff = x1 - x2;
  return -c.a * diff * diff + c.b;
}

// sup-norm deviation from -2(x1-x2)^2 + 4 over a uniform grid on
// [-x_range, x_range]^2
inline double approx_error(EmbeddingKind kind, double x_range, int grid) {
  if (x_range <= 0.0) throw std::invalid_argument("approx_error: x_range must be > 0");
  if (grid < 2) throw std::invalid_argument("approx_error: grid must be >= 2");
  double worst = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double x1 = -x_range + 2.0 * x_range * i / (grid - 1);
    for (int j = 0; j < grid; ++j) {
      const double x2 = -x_range + 2.0 * x_range * j / (grid - 1);
      const double err = std::fabs(ln_dot_exact(x1, x2, kind) - quadratic_target(x1, x2));
      if (err > worst) worst = err;
    }
  }
  return worst;
}

// Rescaled approximation: c LN(E(x1/c)) . c LN(E(x2/c)) against the target
// c^2 (-2((x1-x2)/c)^2 + 4). Returns the sup-norm error per c.
struct RescalePoint {
  double c = 1.0;
  double sup_error = 0.0;
};

inline std::vector<RescalePoint> rescale_sweep(EmbeddingKind kind,
                                               const std::vector<double>& c_values,
                                               double x_range, int grid = 101) {
  std::vector<RescalePoint> curve;
  curve.reserve(c_values.size());
  for (double c : c_values) {
    if (c <= 0.0) throw std::invalid_argument("rescale_sweep: c must be > 0");
    double worst = 0.0;
    for (int i = 0; i < grid; ++i) {
      const double x1 = -x_range + 2.0 * x_range * i / (grid - 1);
      for (int j = 0; j < grid; ++j) {
        const double x2 = -x_range + 2.0 * x_range * j / (grid - 1);
        const double got = c * c * ln_dot_exact(x1 / c, x2 / c, kind);
        const double want = c * c * quadratic_target(x1 / c, x2 / c);
        const double err = std::fabs(got - want);
        if (err > worst) worst = err;
      }
    }
    curve.push_back({c, worst});
  }
  return curve;
}

// |GLU(x) + GLU(-x) - x^2| for the value-equals-gate reading of the gated
// activations; identically zero in exact arithmetic.
inline double glu_quadratic_identity(double x, Activation kind) {
  if (kind != Activation::ReGLU && kind != Activation::SwiGLU)
    throw std::invalid_argument("glu_quadratic_identity: needs a gated activation");
  auto glu = [kind](double v) {
    Tensor in({2}, std::vector<double>{v, v});
    return activation(in, kind)[0];
  };
  return std::fabs(glu(x) + glu(-x) - x * x);
}

}  // namespace geoattn
