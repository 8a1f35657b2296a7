// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Point clouds, Haar-uniform rotations, the recenter/rotate/rescale input
// transform, Gaussian-of-distance target matrices, and the rotation
// divergence metric.
#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoattn/rng.hpp"
#include "geoattn/tensor.hpp"

namespace geoattn {

struct PointCloud {
  int dim = 0;
  std::vector<double> coords;  // row-major [size, dim]

  PointCloud() = default;
  PointCloud(int n_points, int n_dim) : dim(n_dim), coords(static_cast<std::size_t>(n_points) * n_dim, 0.0) {}

  int size() const { return dim ? static_cast<int>(coords.size()) / dim : 0; }
  double* point(int i) { return coords.data() + static_cast<std::size_t>(i) * dim; }
  const double* point(int i) const { return coords.data() + static_cast<std::size_t>(i) * dim; }

  double distance(int i, int j) const {
    const double* a = point(i);
    const double* b = point(j);
    double s = 0.0;
    for (int t = 0; t < dim; ++t) { const double c = a[t] - b[t]; s += c * c; }
    return std::sqrt(s);
  }

  std::vector<double> centroid() const {
    std::vector<double> c(static_cast<std::size_t>(dim), 0.0);
    const int n = size();
    for (int i = 0; i < n; ++i) {
      const double* p = point(i);
      for (int t = 0; t < dim; ++t) c[static_cast<std::size_t>(t)] += p[t];
    }
    for (double& v : c) v /= n;
    return c;
  }
};

// n x n matrix in row-major storage
struct SquareMatrix {
  int n = 0;
  std::vector<double> m;

  explicit SquareMatrix(int size = 0) : n(size), m(static_cast<std::size_t>(size) * size, 0.0) {}
  double& at(int i, int j) { return m[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return m[static_cast<std::size_t>(i) * n + j]; }

  static SquareMatrix identity(int size) {
    SquareMatrix r(size);
    for (int i = 0; i < size; ++i) r.at(i, i) = 1.0;
    return r;
  }

  double max_orthogonality_defect() const {
    double worst = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double dot = 0.0;
        for (int t = 0; t < n; ++t) dot += at(t, i) * at(t, j);
        worst = std::max(worst, std::fabs(dot - (i == j ? 1.0 : 0.0)));
      }
    return worst;
  }

  // Laplace expansion; fine for the n <= 4 rotations used here
  double determinant() const {
    if (n == 0) return 1.0;
    if (n == 1) return at(0, 0);
    if (n == 2) return at(0, 0) * at(1, 1) - at(0, 1) * at(1, 0);
    double det = 0.0;
    for (int c = 0; c < n; ++c) {
      SquareMatrix minor(n - 1);
      for (int i = 1; i < n; ++i) {
        int mc = 0;
        for (int j = 0; j < n; ++j) {
          if (j == c) continue;
          minor.at(i - 1, mc++) = at(i, j);
        }
      }
      det += (c % 2 ? -1.0 : 1.0) * at(0, c) * minor.determinant();
    }
    return det;
  }
};

struct RigidTransform {
  SquareMatrix rotation;
  std::vector<double> translation;
  double scale = 1.0;

  bool is_valid(double tol = 1e-12) const {
    return scale > 0.0 && rotation.max_orthogonality_defect() <= tol &&
           std::fabs(rotation.determinant() - 1.0) <= tol;
  }
};

// Haar rotation via QR of a Gaussian matrix: signs of R's diagonal fix the
// O(n) coset, a final fixed column flip maps det -1 onto SO(n).
inline SquareMatrix sample_rotation_qr(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_rotation_qr: n must be >= 1");
  SquareMatrix a(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a.at(i, j) = rng.normal();
  // Householder QR, accumulating Q explicitly
  SquareMatrix q = SquareMatrix::identity(n);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int k = 0; k < n - 1; ++k) {
    double norm = 0.0;
    for (int i = k; i < n; ++i) norm += a.at(i, k) * a.at(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const double alpha = a.at(k, k) >= 0.0 ? -norm : norm;
    double vnorm2 = 0.0;
    for (int i = k; i < n; ++i) {
      v[static_cast<std::size_t>(i)] = a.at(i, k) - (i == k ? alpha : 0.0);
      vnorm2 += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
    }
    if (vnorm2 == 0.0) continue;
    // A <- (I - 2 v v^T / v^T v) A, Q <- Q (I - 2 v v^T / v^T v)
    for (int j = k; j < n; ++j) {
      double dot = 0.0;
      for (int i = k; i < n; ++i) dot += v[static_cast<std::size_t>(i)] * a.at(i, j);
      const double f = 2.0 * dot / vnorm2;
      for (int i = k; i < n; ++i) a.at(i, j) -= f * v[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = k; j < n; ++j) dot += q.at(i, j) * v[static_cast<std::size_t>(j)];
      const double f = 2.0 * dot / vnorm2;
      for (int j = k; j < n; ++j) q.at(i, j) -= f * v[static_cast<std::size_t>(j)];
    }
  }
  // R's diagonal is now in a's diagonal
  for (int j = 0; j < n; ++j)
    if (a.at(j, j) < 0.0)
      for (int i = 0; i < n; ++i) q.at(i, j) = -q.at(i, j);
  if (q.determinant() < 0.0)
    for (int i = 0; i < n; ++i) q.at(i, n - 1) = -q.at(i, n - 1);
  return q;
}

// Haar rotation on SO(3) from a uniform unit quaternion
inline SquareMatrix sample_rotation_quaternion(Rng& rng) {
  double w, x, y, z, norm2;
  do {
    w = rng.normal();
    x = rng.normal();
    y = rng.normal();
    z = rng.normal();
    norm2 = w * w + x * x + y * y + z * z;
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  w *= inv; x *= inv; y *= inv; z *= inv;
  SquareMatrix r(3);
  r.at(0, 0) = 1.0 - 2.0 * (y * y + z * z);
  r.at(0, 1) = 2.0 * (x * y - w * z);
  r.at(0, 2) = 2.0 * (x * z + w * y);
  r.at(1, 0) = 2.0 * (x * y + w * z);
  r.at(1, 1) = 1.0 - 2.0 * (x * x + z * z);
  r.at(1, 2) = 2.0 * (y * z - w * x);
  r.at(2, 0) = 2.0 * (x * z - w * y);
  r.at(2, 1) = 2.0 * (y * z + w * x);
  r.at(2, 2) = 1.0 - 2.0 * (x * x + y * y);
  return r;
}

inline SquareMatrix sample_rotation(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_rotation: n must be >= 1");
  if (n == 1) return SquareMatrix::identity(1);
  if (n == 3) return sample_rotation_quaternion(rng);
  return sample_rotation_qr(n, rng);
}

inline std::vector<PointCloud> generate_clouds(int count, int length, int dim, double lo,
                                               double hi, Rng& rng) {
  if (count < 1 || length < 1) throw std::invalid_argument("generate_clouds: count and length must be >= 1");
  if (!(hi > lo)) throw std::invalid_argument("generate_clouds: hi must exceed lo");
  std::vector<PointCloud> clouds;
  clouds.reserve(static_cast<std::size_t>(count));
  for (int c = 0; c < count; ++c) {
    PointCloud pc(length, dim);
    for (double& v : pc.coords) v = rng.uniform(lo, hi);
    clouds.push_back(std::move(pc));
  }
  return clouds;
}

// recenter, optionally rotate (fresh Haar sample), then rescale
inline PointCloud augment(const PointCloud& cloud, double scale, bool rotate, Rng& rng) {
  if (scale <= 0.0) throw std::invalid_argument("augment: scale must be > 0");
  const int n = cloud.size();
  const int d = cloud.dim;
  const std::vector<double> mu = cloud.centroid();
  PointCloud out(n, d);
  if (rotate) {
    const SquareMatrix r = sample_rotation(d, rng);
    for (int i = 0; i < n; ++i) {
      const double* p = cloud.point(i);
      double* o = out.point(i);
      for (int row = 0; row < d; ++row) {
        double acc = 0.0;
        for (int col = 0; col < d; ++col)
          acc += r.at(row, col) * (p[col] - mu[static_cast<std::size_t>(col)]);
        o[row] = acc * scale;
      }
    }
  } else {
    for (int i = 0; i < n; ++i) {
      const double* p = cloud.point(i);
      double* o = out.point(i);
      for (int t = 0; t < d; ++t) o[t] = (p[t] - mu[static_cast<std::size_t>(t)]) * scale;
    }
  }
  return out;
}

// entry (i, j) = exp(-(d_ij / s)^p)
inline Tensor target_matrix(const PointCloud& cloud, double p, double s) {
  if (p <= 0.0 || s <= 0.0) throw std::invalid_argument("target_matrix: p and s must be > 0");
  const int n = cloud.size();
  Tensor t({n, n});
  for (int i = 0; i < n; ++i) {
    t.at(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const double v = std::exp(-std::pow(cloud.distance(i, j) / s, p));
      t.at(i, j) = v;
      t.at(j, i) = v;
    }
  }
  return t;
}

// Mean l1 distance between outputs of a cloud->matrix function evaluated on
// independently rotated (recentered, rescaled) copies, averaged over clouds
// and unordered trial pairs.
template <typename CloudFn>
double se3_divergence_fn(CloudFn&& forward, const std::vector<PointCloud>& clouds, int trials,
                         double scale, Rng& rng) {
  if (trials < 2) throw std::invalid_argument("se3_divergence: trials must be >= 2");
  if (clouds.empty()) throw std::invalid_argument("se3_divergence: no clouds");
  double total = 0.0;
  std::size_t pairs = 0;
  for (const PointCloud& cloud : clouds) {
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(trials));
    for (int t = 0; t < trials; ++t) outs.push_back(forward(augment(cloud, scale, true, rng)));
    for (int a = 0; a < trials; ++a)
      for (int b = a + 1; b < trials; ++b) {
        const Tensor& x = outs[static_cast<std::size_t>(a)];
        const Tensor& y = outs[static_cast<std::size_t>(b)];
        double acc = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) acc += std::fabs(x[i] - y[i]);
        total += acc / static_cast<double>(x.numel());
        ++pairs;
      }
  }
  return total / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// plain-text dataset format: header comment with the shape, one point per
// line, blank line between structures
// ---------------------------------------------------------------------------

namespace detail {

inline std::string double_str(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline void write_clouds(const std::vector<PointCloud>& clouds, std::ostream& os) {
  if (clouds.empty()) throw std::invalid_argument("write_clouds: empty dataset");
  os << "# geoattn clouds v1\n";
  os << "# count " << clouds.size() << " dim " << clouds[0].dim << " length "
     << clouds[0].size() << "\n";
  for (const PointCloud& c : clouds) {
    for (int i = 0; i < c.size(); ++i) {
      const double* p = c.point(i);
      for (int t = 0; t < c.dim; ++t) os << (t ? " " : "") << detail::double_str(p[t]);
      os << "\n";
    }
    os << "\n";
  }
}

inline void write_clouds_file(const std::vector<PointCloud>& clouds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_clouds_file: cannot open " + path);
  write_clouds(clouds, os);
}

inline std::vector<PointCloud> read_clouds(std::istream& is) {
  std::vector<PointCloud> clouds;
  std::vector<double> current;
  int dim = -1;
  std::string line;
  auto flush = [&]() {
    if (current.empty()) return;
    PointCloud pc;
    pc.dim = dim;
    pc.coords = current;
    clouds.push_back(std::move(pc));
    current.clear();
  };
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] == '#') continue;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      flush();
      continue;
    }
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (dim == -1) dim = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != dim)
      throw std::runtime_error("read_clouds: inconsistent point dimension");
    current.insert(current.end(), row.begin(), row.end());
  }
  flush();
  if (clouds.empty()) throw std::runtime_error("read_clouds: no structures found");
  return clouds;
}

inline std::vector<PointCloud> read_clouds_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_clouds_file: cannot open " + path);
  return read_clouds(is);
}

}  // namespace geoattn
