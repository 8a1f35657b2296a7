// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Attention-vs-distance profiling and Gaussian curve fitting. Distances are
// bucketed in the original coordinate units (inputs are recentered/rescaled
// for the model, profiles are reported unscaled); attention is averaged over
// ordered pairs excluding the diagonal.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "geoattn/geometry.hpp"
#include "geoattn/model.hpp"
#include "geoattn/training.hpp"

namespace geoattn {

struct AttentionProfile {
  int layer = 0;
  std::vector<double> bucket_centers;
  std::vector<double> mean_attention;
  std::vector<long long> sample_counts;
};

struct GaussianFit {
  double amplitude = 0.0;
  double sigma = 1.0;
  double offset = 0.0;
  double rmse = 0.0;
  bool reliable = true;
};

struct ProfileOptions {
  double bucket_width = 1.0;  // "round to the nearest unit"
};

namespace detail {

struct BucketAcc {
  std::vector<double> sums;
  std::vector<long long> counts;

  void add(long long bucket, double value) {
    if (bucket < 0) bucket = 0;
    if (static_cast<std::size_t>(bucket) >= sums.size()) {
      sums.resize(static_cast<std::size_t>(bucket) + 1, 0.0);
      counts.resize(static_cast<std::size_t>(bucket) + 1, 0);
    }
    sums[static_cast<std::size_t>(bucket)] += value;
    counts[static_cast<std::size_t>(bucket)] += 1;
  }

  AttentionProfile finish(int layer, double width) const {
    AttentionProfile p;
    p.layer = layer;
    for (std::size_t b = 0; b < sums.size(); ++b) {
      if (counts[b] == 0) continue;
      p.bucket_centers.push_back(static_cast<double>(b) * width);
      p.mean_attention.push_back(sums[b] / static_cast<double>(counts[b]));
      p.sample_counts.push_back(counts[b]);
    }
    if (p.bucket_centers.empty())
      throw std::runtime_error("attention_vs_distance: no distance buckets collected");
    return p;
  }
};

}  // namespace detail

// Truncated model: the profiled quantity is the model output itself (one
// head's unnormalized attention). Inputs go through recenter + rescale; no
// rotation, so the profile is deterministic.
inline AttentionProfile attention_vs_distance(const TruncatedDistanceModel& model,
                                              const std::vector<PointCloud>& clouds,
                                              ProfileOptions opts = {}) {
  if (clouds.empty()) throw std::invalid_argument("attention_vs_distance: no clouds");
  detail::BucketAcc acc;
  Rng unused(0);
  for (const PointCloud& cloud : clouds) {
    const PointCloud in = augment(cloud, model.config().coord_scale, false, unused);
    const Tensor out = model.forward(in);
    const int n = cloud.size();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const long long bucket = std::llround(cloud.distance(i, j) / opts.bucket_width);
        acc.add(bucket, out.at(i, j));
      }
  }
  return acc.finish(model.config().n_layers - 1, opts.bucket_width);
}

// Masked model: head-averaged post-softmax attention of one layer. With
// isolate=true every non-spatial input is pinned (single token id, constant
// position index) so only 3-D distance varies.
inline AttentionProfile attention_vs_distance(const MaskedLMModel& model,
                                              const std::vector<Chain>& chains, int layer,
                                              bool isolate, ProfileOptions opts = {}) {
  if (chains.empty()) throw std::invalid_argument("attention_vs_distance: no chains");
  if (layer < 0 || layer >= model.n_layers())
    throw std::invalid_argument("attention_vs_distance: layer out of range");
  detail::BucketAcc acc;
  Rng unused(0);
  const int L = static_cast<int>(chains[0].tokens.size());
  const int spatial = model.config().spatial_dim;
  const int chunk = 16;
  for (std::size_t start = 0; start < chains.size(); start += chunk) {
    const std::size_t stop = std::min(chains.size(), start + chunk);
    const int items = static_cast<int>(stop - start);
    std::vector<int> tokens;
    Tensor coords({items * L, spatial});
    for (int b = 0; b < items; ++b) {
      const Chain& ch = chains[start + static_cast<std::size_t>(b)];
      if (static_cast<int>(ch.tokens.size()) != L)
        throw std::invalid_argument("attention_vs_distance: chains must share a length");
      if (isolate)
        tokens.insert(tokens.end(), static_cast<std::size_t>(L), 0);
      else
        tokens.insert(tokens.end(), ch.tokens.begin(), ch.tokens.end());
      const PointCloud in = augment(ch.cloud, model.config().coord_scale, false, unused);
      for (int i = 0; i < L; ++i)
        for (int t = 0; t < spatial; ++t) coords.at(b * L + i, t) = in.point(i)[t];
    }
    std::vector<std::vector<Tensor>> capture;
    model.forward_batch(tokens, &coords, L, nullptr, &capture, isolate ? 0 : -1);
    for (int b = 0; b < items; ++b) {
      const Chain& ch = chains[start + static_cast<std::size_t>(b)];
      const Tensor& attn = capture[static_cast<std::size_t>(layer)][static_cast<std::size_t>(b)];
      for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j) {
          if (i == j) continue;
          const long long bucket = std::llround(ch.cloud.distance(i, j) / opts.bucket_width);
          acc.add(bucket, attn.at(i, j));
        }
    }
  }
  return acc.finish(layer, opts.bucket_width);
}

// ---------------------------------------------------------------------------
// Gaussian fitting: a exp(-x^2 / (2 sigma^2)) + c, weighted by sample counts.
// Coarse log-spaced sigma grid with a closed-form linear solve for (a, c) at
// each sigma, then golden-section refinement. The sigma grid is proportional
// to the data's x scale, so rescaling distance units rescales sigma exactly.
// ---------------------------------------------------------------------------

namespace detail {

struct LinearFitAt {
  double a = 0.0, c = 0.0, sse = 0.0;
};

inline LinearFitAt fit_at_sigma(const std::vector<double>& x, const std::vector<double>& y,
                                const std::vector<double>& w, double sigma) {
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  double sw = 0, sf = 0, sff = 0, sy = 0, sfy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = std::exp(-x[i] * x[i] * inv2s2);
    sw += w[i];
    sf += w[i] * f;
    sff += w[i] * f * f;
    sy += w[i] * y[i];
    sfy += w[i] * f * y[i];
  }
  LinearFitAt fit;
  const double det = sw * sff - sf * sf;
  if (std::fabs(det) > 1e-14 * sw * std::max(sff, 1e-300)) {
    fit.a = (sw * sfy - sf * sy) / det;
    fit.c = (sy - fit.a * sf) / sw;
  } else {
    fit.a = 0.0;
    fit.c = sy / sw;
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = std::exp(-x[i] * x[i] * inv2s2);
    const double r = y[i] - fit.a * f - fit.c;
    sse += w[i] * r * r;
  }
  fit.sse = sse;
  return fit;
}

}  // namespace detail

inline GaussianFit fit_gaussian(const AttentionProfile& profile, long long min_count = 5) {
  std::vector<double> x, y, w;
  for (std::size_t i = 0; i < profile.bucket_centers.size(); ++i) {
    if (profile.sample_counts[i] < min_count) continue;
    x.push_back(profile.bucket_centers[i]);
    y.push_back(profile.mean_attention[i]);
    w.push_back(static_cast<double>(profile.sample_counts[i]));
  }
  if (x.size() < 4) throw std::invalid_argument("fit_gaussian: need at least 4 usable buckets");

  double x_scale = 0.0, sw = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x_scale = std::max(x_scale, std::fabs(x[i]));
    sw += w[i];
    sy += w[i] * y[i];
  }
  const double y_mean = sy / sw;
  double y_var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) y_var += w[i] * (y[i] - y_mean) * (y[i] - y_mean);
  GaussianFit out;
  if (y_var == 0.0 || x_scale == 0.0) {
    out.amplitude = 0.0;
    out.offset = y_mean;
    out.sigma = x_scale > 0.0 ? x_scale : 1.0;
    out.rmse = 0.0;
    out.reliable = false;
    return out;
  }

  constexpr int kGrid = 81;
  const double lo = 1e-2, hi = 10.0;  // relative to x_scale
  double best_sse = std::numeric_limits<double>::infinity();
  int best_idx = 0;
  for (int k = 0; k < kGrid; ++k) {
    const double rel = lo * std::pow(hi / lo, static_cast<double>(k) / (kGrid - 1));
    const auto fit = detail::fit_at_sigma(x, y, w, x_scale * rel);
    if (fit.sse < best_sse) {
      best_sse = fit.sse;
      best_idx = k;
    }
  }
  auto rel_at = [&](int k) {
    return lo * std::pow(hi / lo, static_cast<double>(std::clamp(k, 0, kGrid - 1)) / (kGrid - 1));
  };
  // golden section on log(sigma) between the grid neighbours of the minimum
  const double gr = 0.6180339887498948482;
  double a = std::log(rel_at(best_idx - 1));
  double b = std::log(rel_at(best_idx + 1));
  double m1 = b - gr * (b - a);
  double m2 = a + gr * (b - a);
  double f1 = detail::fit_at_sigma(x, y, w, x_scale * std::exp(m1)).sse;
  double f2 = detail::fit_at_sigma(x, y, w, x_scale * std::exp(m2)).sse;
  for (int it = 0; it < 200 && (b - a) > 1e-12; ++it) {
    if (f1 <= f2) {
      b = m2;
      m2 = m1;
      f2 = f1;
      m1 = b - gr * (b - a);
      f1 = detail::fit_at_sigma(x, y, w, x_scale * std::exp(m1)).sse;
    } else {
      a = m1;
      m1 = m2;
      f1 = f2;
      m2 = a + gr * (b - a);
      f2 = detail::fit_at_sigma(x, y, w, x_scale * std::exp(m2)).sse;
    }
  }
  const double sigma = x_scale * std::exp(0.5 * (a + b));
  const auto fit = detail::fit_at_sigma(x, y, w, sigma);
  out.amplitude = fit.a;
  out.sigma = sigma;
  out.offset = fit.c;
  out.rmse = std::sqrt(fit.sse / sw);
  out.reliable = true;
  return out;
}

// weighted rmse of the best constant predictor on the same buckets; the
// nested model the Gaussian fit must not lose to
inline double constant_fit_rmse(const AttentionProfile& profile, long long min_count = 5) {
  double sw = 0, sy = 0;
  for (std::size_t i = 0; i < profile.bucket_centers.size(); ++i) {
    if (profile.sample_counts[i] < min_count) continue;
    sw += static_cast<double>(profile.sample_counts[i]);
    sy += static_cast<double>(profile.sample_counts[i]) * profile.mean_attention[i];
  }
  if (sw == 0.0) throw std::invalid_argument("constant_fit_rmse: no usable buckets");
  const double mean = sy / sw;
  double sse = 0;
  for (std::size_t i = 0; i < profile.bucket_centers.size(); ++i) {
    if (profile.sample_counts[i] < min_count) continue;
    const double r = profile.mean_attention[i] - mean;
    sse += static_cast<double>(profile.sample_counts[i]) * r * r;
  }
  return std::sqrt(sse / sw);
}

// Spearman rank correlation (average ranks on ties)
inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("spearman_rho: need two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(rx.size());
  my /= static_cast<double>(ry.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace geoattn
