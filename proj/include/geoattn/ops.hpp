// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Primitive tensor operations with reverse-mode rules. Every op optionally
// records its backward closure on a Tape; outputs of recorded ops are marked
// requires_grad so downstream ops keep recording. All math is double.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoattn/tape.hpp"
#include "geoattn/tensor.hpp"

namespace geoattn {

enum class Activation { ReLU, GeLU, ReGLU, SwiGLU };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::GeLU: return "gelu";
    case Activation::ReGLU: return "reglu";
    case Activation::SwiGLU: return "swiglu";
  }
  return "?";
}

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
inline void mm_nn_acc(double* C, const double* A, const double* B, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void mm_tn_acc(double* C, const double* A, const double* B, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    const double* b = B + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      double* c = C + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// BT[n,k] = B[k,n]^T
inline std::vector<double> transposed(const double* B, int k, int n) {
  std::vector<double> bt(static_cast<std::size_t>(k) * n);
  for (int p = 0; p < k; ++p)
    for (int j = 0; j < n; ++j)
      bt[static_cast<std::size_t>(j) * k + p] = B[static_cast<std::size_t>(p) * n + j];
  return bt;
}

inline bool track(const Tape* tape, const Tensor& a) { return tape && a.requires_grad(); }
inline bool track(const Tape* tape, const Tensor& a, const Tensor& b) {
  return tape && (a.requires_grad() || b.requires_grad());
}

inline Tensor make_output(std::vector<int> shape, bool tracked) {
  Tensor out(std::move(shape));
  if (tracked) out.set_requires_grad();
  return out;
}

inline void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-D tensor");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  check_same_shape(a, b, "add");
  const bool tracked = detail::track(tape, a, b);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (tracked) {
    tape->record(out, [a, b, out]() mutable {
      const double* g = out.grad();
      const std::size_t m = out.numel();
      if (a.requires_grad()) { double* ga = a.grad(); for (std::size_t i = 0; i < m; ++i) ga[i] += g[i]; }
      if (b.requires_grad()) { double* gb = b.grad(); for (std::size_t i = 0; i < m; ++i) gb[i] += g[i]; }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  check_same_shape(a, b, "sub");
  const bool tracked = detail::track(tape, a, b);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  if (tracked) {
    tape->record(out, [a, b, out]() mutable {
      const double* g = out.grad();
      const std::size_t m = out.numel();
      if (a.requires_grad()) { double* ga = a.grad(); for (std::size_t i = 0; i < m; ++i) ga[i] += g[i]; }
      if (b.requires_grad()) { double* gb = b.grad(); for (std::size_t i = 0; i < m; ++i) gb[i] -= g[i]; }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  check_same_shape(a, b, "mul");
  const bool tracked = detail::track(tape, a, b);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  if (tracked) {
    tape->record(out, [a, b, out]() mutable {
      const double* g = out.grad();
      const std::size_t m = out.numel();
      if (a.requires_grad()) { double* ga = a.grad(); for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * b[i]; }
      if (b.requires_grad()) { double* gb = b.grad(); for (std::size_t i = 0; i < m; ++i) gb[i] += g[i] * a[i]; }
    });
  }
  return out;
}

inline Tensor div(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  check_same_shape(a, b, "div");
  const bool tracked = detail::track(tape, a, b);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
  if (tracked) {
    tape->record(out, [a, b, out]() mutable {
      const double* g = out.grad();
      const std::size_t m = out.numel();
      if (a.requires_grad()) { double* ga = a.grad(); for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] / b[i]; }
      if (b.requires_grad()) {
        double* gb = b.grad();
        for (std::size_t i = 0; i < m; ++i) gb[i] -= g[i] * a[i] / (b[i] * b[i]);
      }
    });
  }
  return out;
}

inline Tensor mul_scalar(const Tensor& a, double s, Tape* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
  if (tracked) {
    tape->record(out, [a, out, s]() mutable {
      const double* g = out.grad();
      double* ga = a.grad();
      const std::size_t m = out.numel();
      for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

inline Tensor add_scalar(const Tensor& a, double s, Tape* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + s;
  if (tracked) {
    tape->record(out, [a, out]() mutable {
      const double* g = out.grad();
      double* ga = a.grad();
      const std::size_t m = out.numel();
      for (std::size_t i = 0; i < m; ++i) ga[i] += g[i];
    });
  }
  return out;
}

// out[i,j] = x[i,j] + v[j]
inline Tensor add_rowvec(const Tensor& x, const Tensor& v, Tape* tape = nullptr) {
  detail::require_2d(x, "add_rowvec");
  if (v.ndim() != 1 || v.dim(0) != x.dim(1))
    throw std::invalid_argument("add_rowvec: vector length must equal column count");
  const bool tracked = detail::track(tape, x, v);
  Tensor out = detail::make_output(x.shape(), tracked);
  const int rows = x.dim(0), cols = x.dim(1);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out.at(i, j) = x.at(i, j) + v[static_cast<std::size_t>(j)];
  if (tracked) {
    tape->record(out, [x, v, out, rows, cols]() mutable {
      const double* g = out.grad();
      if (x.requires_grad()) {
        double* gx = x.grad();
        const std::size_t m = out.numel();
        for (std::size_t i = 0; i < m; ++i) gx[i] += g[i];
      }
      if (v.requires_grad()) {
        double* gv = v.grad();
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j) gv[j] += g[static_cast<std::size_t>(i) * cols + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// transcendental elementwise ops
// ---------------------------------------------------------------------------

inline Tensor exp(const Tensor& a, Tape* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
  if (tracked) {
    tape->record(out, [a, out]() mutable {
      const double* g = out.grad();
      double* ga = a.grad();
      const std::size_t m = out.numel();
      for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * out[i];
    });
  }
  return out;
}

inline Tensor log(const Tensor& a, Tape* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = std::log(a[i]);
  if (tracked) {
    tape->record(out, [a, out]() mutable {
      const double* g = out.grad();
      double* ga = a.grad();
      const std::size_t m = out.numel();
      for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] / a[i];
    });
  }
  return out;
}

inline Tensor sqrt(const Tensor& a, Tape* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(a[i]);
  if (tracked) {
    tape->record(out, [a, out]() mutable {
      const double* g = out.grad();
      double* ga = a.grad();
      const std::size_t m = out.numel();
      for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * 0.5 / out[i];
    });
  }
  return out;
}

inline Tensor abs(const Tensor& a, Tape* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = std::fabs(a[i]);
  if (tracked) {
    tape->record(out, [a, out]() mutable {
      const double* g = out.grad();
      double* ga = a.grad();
      const std::size_t m = out.numel();
      for (std::size_t i = 0; i < m; ++i)
        ga[i] += g[i] * (a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0));
    });
  }
  return out;
}

// gradient passes only strictly inside (lo, hi)
inline Tensor clamp(const Tensor& a, double lo, double hi, Tape* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  Tensor out = detail::make_output(a.shape(), tracked);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = std::fmin(std::fmax(a[i], lo), hi);
  if (tracked) {
    tape->record(out, [a, out, lo, hi]() mutable {
      const double* g = out.grad();
      double* ga = a.grad();
      const std::size_t m = out.numel();
      for (std::size_t i = 0; i < m; ++i)
        if (a[i] > lo && a[i] < hi) ga[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a, Tape* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  double acc = 0.0;
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  Tensor out = detail::make_output({1}, tracked);
  out[0] = acc;
  if (tracked) {
    tape->record(out, [a, out]() mutable {
      const double g = out.grad()[0];
      double* ga = a.grad();
      const std::size_t m = a.numel();
      for (std::size_t i = 0; i < m; ++i) ga[i] += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a, Tape* tape = nullptr) {
  const bool tracked = detail::track(tape, a);
  const std::size_t n = a.numel();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  Tensor out = detail::make_output({1}, tracked);
  out[0] = acc / static_cast<double>(n);
  if (tracked) {
    tape->record(out, [a, out, n]() mutable {
      const double g = out.grad()[0] / static_cast<double>(n);
      double* ga = a.grad();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw std::invalid_argument("matmul: inner dimensions differ: " +
                                Tensor::shape_str(a.shape()) + " * " +
                                Tensor::shape_str(b.shape()));
  const bool tracked = detail::track(tape, a, b);
  Tensor out = detail::make_output({m, n}, tracked);
  detail::mm_nn_acc(out.data(), a.data(), b.data(), m, k, n);
  if (tracked) {
    tape->record(out, [a, b, out, m, k, n]() mutable {
      const double* g = out.grad();
      if (a.requires_grad()) {
        // dA += dC * B^T
        const std::vector<double> bt = detail::transposed(b.data(), k, n);
        detail::mm_nn_acc(a.grad(), g, bt.data(), m, n, k);
      }
      if (b.requires_grad()) {
        // dB += A^T * dC
        detail::mm_tn_acc(b.grad(), a.data(), g, m, k, n);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax over the last axis
// ---------------------------------------------------------------------------

inline Tensor softmax_row(const Tensor& x, Tape* tape = nullptr) {
  if (x.ndim() < 1) throw std::invalid_argument("softmax_row: rank-0 input");
  check_finite(x, "softmax_row");
  const int n = x.shape().back();
  const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
  const bool tracked = detail::track(tape, x);
  Tensor out = detail::make_output(x.shape(), tracked);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.data() + r * n;
    double* oi = out.data() + r * n;
    double mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) { oi[j] = std::exp(xi[j] - mx); s += oi[j]; }
    const double inv = 1.0 / s;
    for (int j = 0; j < n; ++j) oi[j] *= inv;
  }
  if (tracked) {
    tape->record(out, [x, out, rows, n]() mutable {
      const double* g = out.grad();
      double* gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* oi = out.data() + r * n;
        const double* gi = g + r * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += gi[j] * oi[j];
        double* gxi = gx + r * n;
        for (int j = 0; j < n; ++j) gxi[j] += oi[j] * (gi[j] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer normalization over the last axis (biased variance)
// ---------------------------------------------------------------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps, Tape* tape = nullptr) {
  if (x.ndim() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
  const int d = x.shape().back();
  if (d < 1) throw std::invalid_argument("layer_norm: empty last axis");
  if (gain.numel() != static_cast<std::size_t>(d) || bias.numel() != static_cast<std::size_t>(d))
    throw std::invalid_argument("layer_norm: gain/bias must have length of last axis");
  if (eps < 0.0) throw std::invalid_argument("layer_norm: eps must be >= 0");
  check_finite(x, "layer_norm");

  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  const bool tracked = tape && (x.requires_grad() || gain.requires_grad() || bias.requires_grad());
  Tensor out = detail::make_output(x.shape(), tracked);

  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_sigma = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.data() + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) { const double c = xi[j] - mu; var += c * c; }
    var /= d;
    const double denom = std::sqrt(var + eps);
    const double inv = denom > 0.0 ? 1.0 / denom : 0.0;  // constant row at eps=0
    (*inv_sigma)[r] = inv;
    double* xh = xhat->data() + r * d;
    double* oi = out.data() + r * d;
    for (int j = 0; j < d; ++j) {
      xh[j] = (xi[j] - mu) * inv;
      oi[j] = xh[j] * gain[static_cast<std::size_t>(j)] + bias[static_cast<std::size_t>(j)];
    }
  }

  if (tracked) {
    tape->record(out, [x, gain, bias, out, xhat, inv_sigma, rows, d]() mutable {
      const double* g = out.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gi = g + r * d;
        const double* xh = xhat->data() + r * d;
        if (x.requires_grad()) {
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < d; ++j) {
            const double dxh = gi[j] * gain[static_cast<std::size_t>(j)];
            m1 += dxh;
            m2 += dxh * xh[j];
          }
          m1 /= d;
          m2 /= d;
          const double inv = (*inv_sigma)[r];
          double* gx = x.grad() + r * d;
          for (int j = 0; j < d; ++j) {
            const double dxh = gi[j] * gain[static_cast<std::size_t>(j)];
            gx[j] += inv * (dxh - m1 - xh[j] * m2);
          }
        }
        if (gain.requires_grad()) {
          double* gg = gain.grad();
          for (int j = 0; j < d; ++j) gg[j] += gi[j] * xh[j];
        }
        if (bias.requires_grad()) {
          double* gb = bias.grad();
          for (int j = 0; j < d; ++j) gb[j] += gi[j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

namespace detail {

inline double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}
inline double gelu_slope(double x) {
  const double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779;  // pdf
  const double Phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  return Phi + x * phi;
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

inline Tensor activation(const Tensor& x, Activation kind, Tape* tape = nullptr) {
  check_finite(x, "activation");
  const bool gated = kind == Activation::ReGLU || kind == Activation::SwiGLU;
  const bool tracked = detail::track(tape, x);

  if (!gated) {
    Tensor out = detail::make_output(x.shape(), tracked);
    const std::size_t n = out.numel();
    if (kind == Activation::ReLU) {
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = detail::gelu_value(x[i]);
    }
    if (tracked) {
      tape->record(out, [x, out, kind]() mutable {
        const double* g = out.grad();
        double* gx = x.grad();
        const std::size_t m = out.numel();
        if (kind == Activation::ReLU) {
          for (std::size_t i = 0; i < m; ++i)
            if (x[i] > 0.0) gx[i] += g[i];
        } else {
          for (std::size_t i = 0; i < m; ++i) gx[i] += g[i] * detail::gelu_slope(x[i]);
        }
      });
    }
    return out;
  }

  // gated: split the last axis into (value, gate) halves
  const int last = x.shape().back();
  if (last % 2 != 0)
    throw std::invalid_argument("activation: gated kinds need an even last axis");
  const int h = last / 2;
  std::vector<int> oshape = x.shape();
  oshape.back() = h;
  Tensor out = detail::make_output(oshape, tracked);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(last);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = x.data() + r * last;
    const double* gt = v + h;
    double* o = out.data() + r * h;
    if (kind == Activation::ReGLU) {
      for (int j = 0; j < h; ++j) o[j] = v[j] * (gt[j] > 0.0 ? gt[j] : 0.0);
    } else {
      for (int j = 0; j < h; ++j) o[j] = v[j] * gt[j] * detail::sigmoid(gt[j]);
    }
  }
  if (tracked) {
    tape->record(out, [x, out, kind, rows, last, h]() mutable {
      const double* g = out.grad();
      double* gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* v = x.data() + r * last;
        const double* gt = v + h;
        double* gv = gx + r * last;
        double* gg = gv + h;
        const double* go = g + r * h;
        if (kind == Activation::ReGLU) {
          for (int j = 0; j < h; ++j) {
            const double relu_g = gt[j] > 0.0 ? gt[j] : 0.0;
            gv[j] += go[j] * relu_g;
            if (gt[j] > 0.0) gg[j] += go[j] * v[j];
          }
        } else {
          for (int j = 0; j < h; ++j) {
            const double s = detail::sigmoid(gt[j]);
            gv[j] += go[j] * gt[j] * s;
            gg[j] += go[j] * v[j] * (s + gt[j] * s * (1.0 - s));
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// gather / scatter
// ---------------------------------------------------------------------------

// out[i, :] = table[ids[i], :]; backward scatter-adds into the table rows
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids,
                          Tape* tape = nullptr) {
  detail::require_2d(table, "gather_rows");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::out_of_range("gather_rows: id " + std::to_string(id) +
                              " outside table of " + std::to_string(v) + " rows");
  const bool tracked = detail::track(tape, table);
  Tensor out = detail::make_output({static_cast<int>(ids.size()), d}, tracked);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* src = table.data() + static_cast<std::size_t>(ids[i]) * d;
    double* dst = out.data() + i * d;
    for (int j = 0; j < d; ++j) dst[j] = src[j];
  }
  if (tracked) {
    tape->record(out, [table, out, ids, d]() mutable {
      const double* g = out.grad();
      double* gt = table.grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = gt + static_cast<std::size_t>(ids[i]) * d;
        const double* src = g + i * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// attention cores
// ---------------------------------------------------------------------------

// Block-diagonal multi-head self-attention. Rows of q/k/v are B consecutive
// items of seq_len rows each; attention never crosses item boundaries.
// If `capture` is non-null it receives, per item, the head-averaged post-
// softmax attention matrix [seq_len, seq_len] (forward only).
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   int n_heads, int seq_len, Tape* tape = nullptr,
                                   std::vector<Tensor>* capture = nullptr) {
  detail::require_2d(q, "multi_head_attention");
  check_same_shape(q, k, "multi_head_attention(q,k)");
  check_same_shape(q, v, "multi_head_attention(q,v)");
  const int n = q.dim(0), d = q.dim(1);
  if (seq_len < 1 || n % seq_len != 0)
    throw std::invalid_argument("multi_head_attention: row count not a multiple of seq_len");
  if (n_heads < 1 || d % n_heads != 0)
    throw std::invalid_argument("multi_head_attention: d_model not divisible by n_heads");
  const int items = n / seq_len;
  const int dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const bool tracked = tape && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  Tensor out = detail::make_output({n, d}, tracked);

  // softmax probabilities saved for the backward pass: [items][heads][L,L]
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(items) * n_heads * seq_len * seq_len);

  for (int b = 0; b < items; ++b) {
    Tensor cap;
    if (capture) cap = Tensor({seq_len, seq_len});
    for (int h = 0; h < n_heads; ++h) {
      const std::size_t head_off = static_cast<std::size_t>(h) * dh;
      double* p = probs->data() +
                  (static_cast<std::size_t>(b) * n_heads + h) * seq_len * seq_len;
      // scores + row softmax
      for (int i = 0; i < seq_len; ++i) {
        const double* qi = q.data() + (static_cast<std::size_t>(b) * seq_len + i) * d + head_off;
        double* pi = p + static_cast<std::size_t>(i) * seq_len;
        double mx = -1e300;
        for (int j = 0; j < seq_len; ++j) {
          const double* kj = k.data() + (static_cast<std::size_t>(b) * seq_len + j) * d + head_off;
          double s = 0.0;
          for (int t = 0; t < dh; ++t) s += qi[t] * kj[t];
          pi[j] = s * scale;
          mx = std::max(mx, pi[j]);
        }
        double sum = 0.0;
        for (int j = 0; j < seq_len; ++j) { pi[j] = std::exp(pi[j] - mx); sum += pi[j]; }
        const double inv = 1.0 / sum;
        for (int j = 0; j < seq_len; ++j) pi[j] *= inv;
      }
      // out rows += P * V_h
      for (int i = 0; i < seq_len; ++i) {
        const double* pi = p + static_cast<std::size_t>(i) * seq_len;
        double* oi = out.data() + (static_cast<std::size_t>(b) * seq_len + i) * d + head_off;
        for (int j = 0; j < seq_len; ++j) {
          const double w = pi[j];
          const double* vj = v.data() + (static_cast<std::size_t>(b) * seq_len + j) * d + head_off;
          for (int t = 0; t < dh; ++t) oi[t] += w * vj[t];
        }
      }
      if (capture) {
        for (int i = 0; i < seq_len; ++i)
          for (int j = 0; j < seq_len; ++j)
            cap.at(i, j) += p[static_cast<std::size_t>(i) * seq_len + j] / n_heads;
      }
    }
    if (capture) capture->push_back(cap);
  }

  if (tracked) {
    tape->record(out, [q, k, v, out, probs, items, n_heads, seq_len, dh, d, scale]() mutable {
      const double* g = out.grad();
      std::vector<double> dp(static_cast<std::size_t>(seq_len) * seq_len);
      for (int b = 0; b < items; ++b) {
        for (int h = 0; h < n_heads; ++h) {
          const std::size_t head_off = static_cast<std::size_t>(h) * dh;
          const double* p = probs->data() +
                            (static_cast<std::size_t>(b) * n_heads + h) * seq_len * seq_len;
          // dV_h += P^T dO_h ; dP = dO_h V_h^T
          for (int i = 0; i < seq_len; ++i) {
            const double* gi = g + (static_cast<std::size_t>(b) * seq_len + i) * d + head_off;
            const double* pi = p + static_cast<std::size_t>(i) * seq_len;
            double* dpi = dp.data() + static_cast<std::size_t>(i) * seq_len;
            for (int j = 0; j < seq_len; ++j) {
              const double* vj = v.data() + (static_cast<std::size_t>(b) * seq_len + j) * d + head_off;
              double acc = 0.0;
              for (int t = 0; t < dh; ++t) acc += gi[t] * vj[t];
              dpi[j] = acc;
              if (v.requires_grad()) {
                double* gv = v.grad() + (static_cast<std::size_t>(b) * seq_len + j) * d + head_off;
                const double w = pi[j];
                for (int t = 0; t < dh; ++t) gv[t] += w * gi[t];
              }
            }
          }
          // dS = P o (dP - rowdot) ; dQ_h += dS K_h scale ; dK_h += dS^T Q_h scale
          for (int i = 0; i < seq_len; ++i) {
            const double* pi = p + static_cast<std::size_t>(i) * seq_len;
            double* dpi = dp.data() + static_cast<std::size_t>(i) * seq_len;
            double dot = 0.0;
            for (int j = 0; j < seq_len; ++j) dot += dpi[j] * pi[j];
            for (int j = 0; j < seq_len; ++j) dpi[j] = pi[j] * (dpi[j] - dot);
          }
          for (int i = 0; i < seq_len; ++i) {
            const double* dpi = dp.data() + static_cast<std::size_t>(i) * seq_len;
            const double* qi = q.data() + (static_cast<std::size_t>(b) * seq_len + i) * d + head_off;
            double* gq = q.requires_grad()
                             ? q.grad() + (static_cast<std::size_t>(b) * seq_len + i) * d + head_off
                             : nullptr;
            for (int j = 0; j < seq_len; ++j) {
              const double w = dpi[j] * scale;
              const double* kj = k.data() + (static_cast<std::size_t>(b) * seq_len + j) * d + head_off;
              if (gq)
                for (int t = 0; t < dh; ++t) gq[t] += w * kj[t];
              if (k.requires_grad()) {
                double* gk = k.grad() + (static_cast<std::size_t>(b) * seq_len + j) * d + head_off;
                for (int t = 0; t < dh; ++t) gk[t] += w * qi[t];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// Block-diagonal scaled pair scores: per item b, S_b = scale * Q_b K_b^T.
// q and k have B*seq_len rows; output row (b*L + i) holds scores against the
// L keys of item b.
inline Tensor pair_scores(const Tensor& q, const Tensor& k, int seq_len, double scale,
                          Tape* tape = nullptr) {
  detail::require_2d(q, "pair_scores");
  check_same_shape(q, k, "pair_scores");
  const int n = q.dim(0), d = q.dim(1);
  if (seq_len < 1 || n % seq_len != 0)
    throw std::invalid_argument("pair_scores: row count not a multiple of seq_len");
  const int items = n / seq_len;
  const bool tracked = detail::track(tape, q, k);
  Tensor out = detail::make_output({n, seq_len}, tracked);
  for (int b = 0; b < items; ++b)
    for (int i = 0; i < seq_len; ++i) {
      const double* qi = q.data() + (static_cast<std::size_t>(b) * seq_len + i) * d;
      double* oi = out.data() + (static_cast<std::size_t>(b) * seq_len + i) * seq_len;
      for (int j = 0; j < seq_len; ++j) {
        const double* kj = k.data() + (static_cast<std::size_t>(b) * seq_len + j) * d;
        double s = 0.0;
        for (int t = 0; t < d; ++t) s += qi[t] * kj[t];
        oi[j] = s * scale;
      }
    }
  if (tracked) {
    tape->record(out, [q, k, out, items, seq_len, d, scale]() mutable {
      const double* g = out.grad();
      for (int b = 0; b < items; ++b)
        for (int i = 0; i < seq_len; ++i) {
          const double* gi = g + (static_cast<std::size_t>(b) * seq_len + i) * seq_len;
          const double* qi = q.data() + (static_cast<std::size_t>(b) * seq_len + i) * d;
          double* gq = q.requires_grad()
                           ? q.grad() + (static_cast<std::size_t>(b) * seq_len + i) * d
                           : nullptr;
          for (int j = 0; j < seq_len; ++j) {
            const double w = gi[j] * scale;
            const double* kj = k.data() + (static_cast<std::size_t>(b) * seq_len + j) * d;
            if (gq)
              for (int t = 0; t < d; ++t) gq[t] += w * kj[t];
            if (k.requires_grad()) {
              double* gk = k.grad() + (static_cast<std::size_t>(b) * seq_len + j) * d;
              for (int t = 0; t < d; ++t) gk[t] += w * qi[t];
            }
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// mean absolute entry difference, diagonal included
inline Tensor l1_loss(const Tensor& pred, const Tensor& target, Tape* tape = nullptr) {
  check_same_shape(pred, target, "l1_loss");
  check_finite(pred, "l1_loss");
  const std::size_t n = pred.numel();
  const bool tracked = detail::track(tape, pred);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(pred[i] - target[i]);
  Tensor out = detail::make_output({1}, tracked);
  out[0] = acc / static_cast<double>(n);
  if (tracked) {
    tape->record(out, [pred, target, out, n]() mutable {
      const double g = out.grad()[0] / static_cast<double>(n);
      double* gp = pred.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = pred[i] - target[i];
        gp[i] += g * (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0));
      }
    });
  }
  return out;
}

// mean negative log-likelihood over masked rows
inline Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int>& targets,
                                   const std::vector<std::uint8_t>& loss_mask,
                                   Tape* tape = nullptr) {
  detail::require_2d(logits, "cross_entropy_masked");
  const int n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != static_cast<std::size_t>(n) || loss_mask.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("cross_entropy_masked: targets/mask must match row count");
  check_finite(logits, "cross_entropy_masked");
  std::size_t m = 0;
  for (auto b : loss_mask) m += b ? 1 : 0;
  if (m == 0) throw std::invalid_argument("cross_entropy_masked: empty loss mask");
  for (int i = 0; i < n; ++i)
    if (loss_mask[i] && (targets[i] < 0 || targets[i] >= v))
      throw std::out_of_range("cross_entropy_masked: target id out of range");

  const bool tracked = detail::track(tape, logits);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!loss_mask[i]) continue;
    const double* zi = logits.data() + static_cast<std::size_t>(i) * v;
    double mx = zi[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, zi[j]);
    double s = 0.0;
    for (int j = 0; j < v; ++j) s += std::exp(zi[j] - mx);
    acc += std::log(s) + mx - zi[targets[static_cast<std::size_t>(i)]];
  }
  Tensor out = detail::make_output({1}, tracked);
  out[0] = acc / static_cast<double>(m);
  if (tracked) {
    tape->record(out, [logits, out, targets, loss_mask, n, v, m]() mutable {
      const double g = out.grad()[0] / static_cast<double>(m);
      double* gz = logits.grad();
      for (int i = 0; i < n; ++i) {
        if (!loss_mask[static_cast<std::size_t>(i)]) continue;
        const double* zi = logits.data() + static_cast<std::size_t>(i) * v;
        double mx = zi[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, zi[j]);
        double s = 0.0;
        for (int j = 0; j < v; ++j) s += std::exp(zi[j] - mx);
        const double inv = 1.0 / s;
        double* gzi = gz + static_cast<std::size_t>(i) * v;
        for (int j = 0; j < v; ++j) {
          const double p = std::exp(zi[j] - mx) * inv;
          gzi[j] += g * (p - (j == targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

// convenience: x W + b with W stored [in, out]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr) {
  return add_rowvec(matmul(x, w, tape), b, tape);
}

}  // namespace geoattn
