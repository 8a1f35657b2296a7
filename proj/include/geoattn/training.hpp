// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Losses, Adam, warmup/decay schedules, BERT-style masking, the synthetic
// structural chain task, and the two training loops. Training is
// single-threaded and bit-deterministic given the config seed; validation
// inputs (rotations and masking) are frozen at setup so metric curves are
// reproducible and comparable across runs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "geoattn/geometry.hpp"
#include "geoattn/model.hpp"
#include "geoattn/ops.hpp"
#include "geoattn/rng.hpp"

namespace geoattn {

enum class DecayKind { QuadraticToZero, InverseSquare };

struct MaskingSpec {
  double mask_rate = 0.15;
  double mask_token_frac = 0.8;
  double random_frac = 0.1;
  double keep_frac = 0.1;
  int mask_token_id = 0;
  int vocab_size = 0;

  void validate() const {
    if (!(mask_rate > 0.0 && mask_rate < 1.0))
      throw std::invalid_argument("MaskingSpec: mask_rate must be in (0, 1)");
    if (std::fabs(mask_token_frac + random_frac + keep_frac - 1.0) > 1e-12)
      throw std::invalid_argument("MaskingSpec: fractions must sum to 1");
    if (vocab_size < 1) throw std::invalid_argument("MaskingSpec: vocab_size must be >= 1");
  }
};

struct TrainConfig {
  int batch_size = 16;
  double peak_lr = 4e-4;
  int warmup_steps = 4000;
  DecayKind decay = DecayKind::QuadraticToZero;
  long long total_steps = 10000;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  bool rotate_augment = true;
  double coord_scale = 1.0 / 16.0;
  int max_train_items = 0;  // 0 = use the whole training split
  int val_every_epochs = 1;
  MaskingSpec masking;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (peak_lr <= 0.0) throw std::invalid_argument("TrainConfig: peak_lr must be > 0");
    if (warmup_steps < 1) throw std::invalid_argument("TrainConfig: warmup_steps must be >= 1");
    if (total_steps < 1) throw std::invalid_argument("TrainConfig: total_steps must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
      throw std::invalid_argument("TrainConfig: val_fraction must be in (0, 1)");
    if (coord_scale <= 0.0) throw std::invalid_argument("TrainConfig: coord_scale must be > 0");
    if (val_every_epochs < 1) throw std::invalid_argument("TrainConfig: val_every_epochs must be >= 1");
  }
};

// linear warmup to the peak, then the configured decay
inline double lr_at_step(long long step, const TrainConfig& cfg) {
  if (step < 1) throw std::invalid_argument("lr_at_step: step must be >= 1");
  const long long w = cfg.warmup_steps;
  if (step <= w) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(w);
  if (cfg.decay == DecayKind::InverseSquare) {
    const double r = static_cast<double>(w) / static_cast<double>(step);
    return cfg.peak_lr * r * r;
  }
  const long long t = cfg.total_steps;
  if (step >= t || t <= w) return 0.0;
  const double tau = static_cast<double>(step - w) / static_cast<double>(t - w);
  return cfg.peak_lr * (1.0 - tau) * (1.0 - tau);
}

// spec alias: mean absolute entry difference, diagonal included
inline Tensor l1_attention_loss(const Tensor& pred, const Tensor& target, Tape* tape = nullptr) {
  return l1_loss(pred, target, tape);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<std::vector<double>> m, v;

  void init(const std::vector<NamedParam>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const NamedParam& p : params) {
      m.emplace_back(p.value.numel(), 0.0);
      v.emplace_back(p.value.numel(), 0.0);
    }
  }
};

// standard bias-corrected update, in place; grads are consumed and zeroed
inline void adam_step(std::vector<NamedParam>& params, AdamState& st, double lr) {
  if (st.m.size() != params.size())
    throw std::invalid_argument("adam_step: state not initialized for these params");
  for (NamedParam& p : params) {
    const auto& g = p.value.grad_vec();
    for (double gv : g)
      if (!std::isfinite(gv))
        throw std::runtime_error("adam_step: non-finite gradient in " + p.name + "; step aborted");
  }
  st.t += 1;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& value = params[i].value;
    const auto& g = value.grad_vec();
    auto& mi = st.m[i];
    auto& vi = st.v[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      mi[j] = st.beta1 * mi[j] + (1.0 - st.beta1) * g[j];
      vi[j] = st.beta2 * vi[j] + (1.0 - st.beta2) * g[j] * g[j];
      const double mhat = mi[j] / c1;
      const double vhat = vi[j] / c2;
      value[j] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
    value.zero_grad();
  }
}

inline void zero_param_grads(std::vector<NamedParam>& params) {
  for (NamedParam& p : params) p.value.zero_grad();
}

// ---------------------------------------------------------------------------
// masking
// ---------------------------------------------------------------------------

struct MaskedTokens {
  std::vector<int> corrupted;
  std::vector<std::uint8_t> loss_mask;  // 1 where the loss is evaluated
};

// 15% masked; of those 80% -> [MASK], 10% -> random data token, 10% kept
// unchanged (kept positions stay in the loss mask)
inline MaskedTokens apply_masking(const std::vector<int>& tokens, const MaskingSpec& spec,
                                  Rng& rng) {
  spec.validate();
  MaskedTokens out;
  out.corrupted = tokens;
  out.loss_mask.assign(tokens.size(), 0);
  const double c_mask = spec.mask_token_frac;
  const double c_random = spec.mask_token_frac + spec.random_frac;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (rng.uniform() >= spec.mask_rate) continue;
    out.loss_mask[i] = 1;
    const double u = rng.uniform();
    if (u < c_mask) {
      out.corrupted[i] = spec.mask_token_id;
    } else if (u < c_random) {
      out.corrupted[i] = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.vocab_size)));
    }  // else: kept
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic structural chain task
// ---------------------------------------------------------------------------

struct SyntheticChainSpec {
  int count = 1000;
  int chain_length = 64;
  double step_length = 1.0;
  int vocab_size = 8;
  double neighbor_radius = 2.0;  // must exceed step_length
  double label_noise = 0.1;
  // Upper-inclusive count thresholds for classes 0..vocab_size-2 (the last
  // class takes the rest); defaults roughly balance the 8 classes under the
  // default walk parameters so no class-prior shortcut dominates. An empty
  // list falls back to min(count, vocab_size - 1).
  std::vector<int> bin_edges = {2, 3, 4, 5, 6, 7, 9};
  int max_step_retries = 256;
  int max_chain_restarts = 256;

  int label_of_count(int count_value) const {
    if (bin_edges.empty()) return std::min(count_value, vocab_size - 1);
    for (std::size_t c = 0; c < bin_edges.size(); ++c)
      if (count_value <= bin_edges[c]) return static_cast<int>(c);
    return vocab_size - 1;
  }

  void validate() const {
    if (count < 1 || chain_length < 2) throw std::invalid_argument("SyntheticChainSpec: bad count/length");
    if (step_length <= 0.0) throw std::invalid_argument("SyntheticChainSpec: step_length must be > 0");
    if (neighbor_radius <= step_length)
      throw std::invalid_argument("SyntheticChainSpec: neighbor_radius must exceed step_length");
    if (vocab_size < 2) throw std::invalid_argument("SyntheticChainSpec: vocab_size must be >= 2");
    if (label_noise < 0.0 || label_noise > 1.0)
      throw std::invalid_argument("SyntheticChainSpec: label_noise must be in [0, 1]");
    if (!bin_edges.empty()) {
      if (static_cast<int>(bin_edges.size()) != vocab_size - 1)
        throw std::invalid_argument("SyntheticChainSpec: need vocab_size - 1 bin edges");
      for (std::size_t i = 1; i < bin_edges.size(); ++i)
        if (bin_edges[i] <= bin_edges[i - 1])
          throw std::invalid_argument("SyntheticChainSpec: bin edges must increase");
    }
  }
};

struct Chain {
  std::vector<int> tokens;
  PointCloud cloud;
};

namespace detail {

inline void unit_direction3(Rng& rng, double* d) {
  double n2;
  do {
    d[0] = rng.normal();
    d[1] = rng.normal();
    d[2] = rng.normal();
    n2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
  } while (n2 == 0.0);
  const double inv = 1.0 / std::sqrt(n2);
  d[0] *= inv;
  d[1] *= inv;
  d[2] *= inv;
}

}  // namespace detail

// 3-D fixed-step random walks with excluded volume (min pairwise distance
// 0.8 * step). The token at position i counts non-adjacent points within
// neighbor_radius, clipped into vocab_size classes, and is flipped to a
// uniformly random label with probability label_noise. Labels are therefore
// a function of local 3-D density, only weakly of sequence position.
inline std::vector<Chain> generate_synthetic_chains(const SyntheticChainSpec& spec, Rng& rng) {
  spec.validate();
  const double min_dist = 0.8 * spec.step_length;
  std::vector<Chain> chains;
  chains.reserve(static_cast<std::size_t>(spec.count));
  for (int c = 0; c < spec.count; ++c) {
    PointCloud cloud(spec.chain_length, 3);
    bool done = false;
    for (int attempt = 0; attempt < spec.max_chain_restarts && !done; ++attempt) {
      bool failed = false;
      for (int i = 1; i < spec.chain_length && !failed; ++i) {
        const double* prev = cloud.point(i - 1);
        int tries = 0;
        for (; tries < spec.max_step_retries; ++tries) {
          double dir[3];
          detail::unit_direction3(rng, dir);
          double cand[3] = {prev[0] + spec.step_length * dir[0],
                            prev[1] + spec.step_length * dir[1],
                            prev[2] + spec.step_length * dir[2]};
          bool clash = false;
          for (int j = 0; j < i - 1 && !clash; ++j) {
            const double* q = cloud.point(j);
            const double dx = cand[0] - q[0], dy = cand[1] - q[1], dz = cand[2] - q[2];
            if (dx * dx + dy * dy + dz * dz < min_dist * min_dist) clash = true;
          }
          if (!clash) {
            double* p = cloud.point(i);
            p[0] = cand[0];
            p[1] = cand[1];
            p[2] = cand[2];
            break;
          }
        }
        if (tries == spec.max_step_retries) failed = true;
      }
      done = !failed;
    }
    if (!done)
      throw std::runtime_error("generate_synthetic_chains: excluded-volume rejection failed");

    Chain chain;
    chain.tokens.resize(static_cast<std::size_t>(spec.chain_length));
    for (int i = 0; i < spec.chain_length; ++i) {
      int count = 0;
      for (int j = 0; j < spec.chain_length; ++j) {
        if (std::abs(i - j) < 2) continue;
        if (cloud.distance(i, j) <= spec.neighbor_radius) ++count;
      }
      int label = spec.label_of_count(count);
      if (rng.uniform() < spec.label_noise)
        label = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.vocab_size)));
      chain.tokens[static_cast<std::size_t>(i)] = label;
    }
    chain.cloud = std::move(cloud);
    chains.push_back(std::move(chain));
  }
  return chains;
}

// ---------------------------------------------------------------------------
// truncated distance training
// ---------------------------------------------------------------------------

struct EpochMetric {
  long long epoch = 0;
  long long step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_recovery = 0.0;  // masked-LM only
};

struct TrainTruncatedResult {
  std::vector<EpochMetric> metrics;
  double final_train = 0.0;  // mean over the recorded tail (last 10% of rows)
  double final_val = 0.0;
  double best_val = std::numeric_limits<double>::infinity();
  double baseline_constant_val = 0.0;  // best constant-matrix predictor on val targets
  std::shared_ptr<TruncatedDistanceModel> model;
  std::shared_ptr<TruncatedDistanceModel> best_model;
};

namespace detail {

inline double tail_mean(const std::vector<EpochMetric>& rows, double EpochMetric::*field) {
  if (rows.empty()) return 0.0;
  const std::size_t k = std::max<std::size_t>(1, rows.size() / 10);
  double acc = 0.0;
  for (std::size_t i = rows.size() - k; i < rows.size(); ++i) acc += rows[i].*field;
  return acc / static_cast<double>(k);
}

template <typename Model>
std::shared_ptr<Model> clone_model(const Model& src) {
  auto copy = std::make_shared<Model>(src.config(), Rng(0));
  auto& dst = copy->params();
  const auto& s = src.params();
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s[i].value.numel(); ++j) dst[i].value[j] = s[i].value[j];
  return copy;
}

}  // namespace detail

// per-entry median matrix over the given targets, and its l1 loss; the
// strongest constant predictor under l1
inline double constant_predictor_loss(const std::vector<Tensor>& targets) {
  if (targets.empty()) throw std::invalid_argument("constant_predictor_loss: no targets");
  const std::size_t n = targets[0].numel();
  Tensor median(targets[0].shape());
  std::vector<double> column(targets.size());
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t c = 0; c < targets.size(); ++c) column[c] = targets[c][e];
    std::nth_element(column.begin(), column.begin() + column.size() / 2, column.end());
    double med = column[column.size() / 2];
    if (column.size() % 2 == 0) {
      const double hi = med;
      std::nth_element(column.begin(), column.begin() + column.size() / 2 - 1, column.end());
      med = 0.5 * (column[column.size() / 2 - 1] + hi);
    }
    median[e] = med;
  }
  double acc = 0.0;
  for (const Tensor& t : targets)
    for (std::size_t e = 0; e < n; ++e) acc += std::fabs(t[e] - median[e]);
  return acc / static_cast<double>(targets.size() * n);
}

inline TrainTruncatedResult train_truncated(const TrainConfig& cfg, const ModelConfig& model_cfg_in,
                                            const std::vector<PointCloud>& clouds, double p,
                                            double s) {
  cfg.validate();
  if (clouds.size() < 2) throw std::invalid_argument("train_truncated: need at least 2 clouds");
  ModelConfig model_cfg = model_cfg_in;
  model_cfg.coord_scale = cfg.coord_scale;
  const int L = clouds[0].size();

  Rng base(cfg.seed);
  Rng init_rng = base.fork(1);
  Rng split_rng = base.fork(2);
  Rng data_rng = base.fork(3);
  Rng val_rng = base.fork(4);

  // split by structure, then optionally shrink the training side
  std::vector<int> order(clouds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  split_rng.shuffle(order);
  const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                                         cfg.val_fraction * clouds.size())));
  std::vector<int> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<int> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (cfg.max_train_items > 0 && train_idx.size() > static_cast<std::size_t>(cfg.max_train_items))
    train_idx.resize(static_cast<std::size_t>(cfg.max_train_items));
  if (train_idx.empty()) throw std::invalid_argument("train_truncated: empty training split");

  // targets from original coordinates
  std::vector<Tensor> targets(clouds.size());
  for (std::size_t i = 0; i < clouds.size(); ++i) targets[i] = target_matrix(clouds[i], p, s);

  // frozen validation inputs: recenter + rotate (one Haar draw per cloud) + rescale
  std::vector<PointCloud> val_inputs;
  std::vector<Tensor> val_targets;
  val_inputs.reserve(val_idx.size());
  for (int idx : val_idx) {
    val_inputs.push_back(augment(clouds[static_cast<std::size_t>(idx)], cfg.coord_scale, true, val_rng));
    val_targets.push_back(targets[static_cast<std::size_t>(idx)]);
  }

  TrainTruncatedResult result;
  result.baseline_constant_val = constant_predictor_loss(val_targets);

  auto model = std::make_shared<TruncatedDistanceModel>(model_cfg, init_rng);
  AdamState adam;
  adam.init(model->params());

  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(train_idx.size()));
  const int spatial = model_cfg.spatial_dim;

  auto eval_val = [&]() {
    double acc = 0.0;
    std::size_t entries = 0;
    const int chunk = 64;
    for (std::size_t start = 0; start < val_inputs.size(); start += chunk) {
      const std::size_t stop = std::min(val_inputs.size(), start + chunk);
      const int items = static_cast<int>(stop - start);
      Tensor coords({items * L, spatial});
      for (int b = 0; b < items; ++b) {
        const PointCloud& pc = val_inputs[start + static_cast<std::size_t>(b)];
        for (int i = 0; i < L; ++i)
          for (int t = 0; t < spatial; ++t) coords.at(b * L + i, t) = pc.point(i)[t];
      }
      Tensor pred = model->forward_batch(coords, L, nullptr);
      for (int b = 0; b < items; ++b) {
        const Tensor& tgt = val_targets[start + static_cast<std::size_t>(b)];
        for (int i = 0; i < L; ++i)
          for (int j = 0; j < L; ++j) acc += std::fabs(pred.at(b * L + i, j) - tgt.at(i, j));
      }
      entries += static_cast<std::size_t>(items) * L * L;
    }
    return acc / static_cast<double>(entries);
  };

  long long step = 0;
  long long epoch = 0;
  while (step < cfg.total_steps) {
    ++epoch;
    data_rng.shuffle(train_idx);
    double epoch_loss = 0.0;
    long long epoch_steps = 0;
    for (std::size_t start = 0; start + batch <= train_idx.size() && step < cfg.total_steps;
         start += static_cast<std::size_t>(batch)) {
      Tensor coords({batch * L, spatial});
      Tensor target({batch * L, L});
      for (int b = 0; b < batch; ++b) {
        const int idx = train_idx[start + static_cast<std::size_t>(b)];
        PointCloud in = augment(clouds[static_cast<std::size_t>(idx)], cfg.coord_scale,
                                cfg.rotate_augment, data_rng);
        for (int i = 0; i < L; ++i)
          for (int t = 0; t < spatial; ++t) coords.at(b * L + i, t) = in.point(i)[t];
        const Tensor& tgt = targets[static_cast<std::size_t>(idx)];
        for (int i = 0; i < L; ++i)
          for (int j = 0; j < L; ++j) target.at(b * L + i, j) = tgt.at(i, j);
      }
      Tape tape;
      Tensor pred = model->forward_batch(coords, L, &tape);
      Tensor loss = l1_attention_loss(pred, target, &tape);
      zero_param_grads(model->params());
      tape.backward(loss);
      ++step;
      adam_step(model->params(), adam, lr_at_step(step, cfg));
      epoch_loss += loss[0];
      ++epoch_steps;
    }
    if (epoch_steps == 0) throw std::logic_error("train_truncated: batch larger than training set");

    const bool last = step >= cfg.total_steps;
    if (epoch % cfg.val_every_epochs == 0 || last) {
      EpochMetric row;
      row.epoch = epoch;
      row.step = step;
      row.lr = lr_at_step(step, cfg);
      row.train_loss = epoch_loss / static_cast<double>(epoch_steps);
      row.val_loss = eval_val();
      result.metrics.push_back(row);
      if (row.val_loss < result.best_val) {
        result.best_val = row.val_loss;
        result.best_model = detail::clone_model(*model);
      }
    }
  }

  result.model = model;
  if (!result.best_model) result.best_model = model;
  result.final_train = detail::tail_mean(result.metrics, &EpochMetric::train_loss);
  result.final_val = detail::tail_mean(result.metrics, &EpochMetric::val_loss);
  return result;
}

// ---------------------------------------------------------------------------
// masked-token training on synthetic chains
// ---------------------------------------------------------------------------

struct TrainMaskedResult {
  std::vector<EpochMetric> metrics;  // train_loss/val_loss are cross-entropies
  double final_train = 0.0;
  double final_val = 0.0;
  double final_val_recovery = 0.0;
  double best_val = std::numeric_limits<double>::infinity();
  std::shared_ptr<MaskedLMModel> model;
};

inline TrainMaskedResult train_masked(const TrainConfig& cfg, const ModelConfig& model_cfg_in,
                                      const std::vector<Chain>& chains, bool with_coords) {
  cfg.validate();
  if (chains.size() < 2) throw std::invalid_argument("train_masked: need at least 2 chains");
  ModelConfig model_cfg = model_cfg_in;
  model_cfg.coord_scale = cfg.coord_scale;
  model_cfg.use_coord_embed = with_coords;
  const int L = static_cast<int>(chains[0].tokens.size());

  MaskingSpec masking = cfg.masking;
  masking.vocab_size = model_cfg.vocab_size;
  masking.mask_token_id = model_cfg.vocab_size;
  masking.validate();

  Rng base(cfg.seed);
  Rng init_rng = base.fork(1);
  Rng split_rng = base.fork(2);
  Rng data_rng = base.fork(3);
  Rng val_rng = base.fork(4);

  std::vector<int> order(chains.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  split_rng.shuffle(order);
  const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                                         cfg.val_fraction * chains.size())));
  std::vector<int> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<int> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (cfg.max_train_items > 0 && train_idx.size() > static_cast<std::size_t>(cfg.max_train_items))
    train_idx.resize(static_cast<std::size_t>(cfg.max_train_items));
  if (train_idx.empty()) throw std::invalid_argument("train_masked: empty training split");

  // frozen validation inputs: one masking draw and one rigid transform per chain
  struct ValItem {
    std::vector<int> corrupted;
    std::vector<std::uint8_t> loss_mask;
    std::vector<int> original;
    PointCloud coords;
  };
  std::vector<ValItem> val_items;
  for (int idx : val_idx) {
    const Chain& ch = chains[static_cast<std::size_t>(idx)];
    ValItem item;
    MaskedTokens mt = apply_masking(ch.tokens, masking, val_rng);
    item.corrupted = std::move(mt.corrupted);
    item.loss_mask = std::move(mt.loss_mask);
    item.original = ch.tokens;
    item.coords = augment(ch.cloud, cfg.coord_scale, true, val_rng);
    val_items.push_back(std::move(item));
  }

  auto model = std::make_shared<MaskedLMModel>(model_cfg, init_rng);
  AdamState adam;
  adam.init(model->params());
  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(train_idx.size()));
  const int spatial = model_cfg.spatial_dim;

  auto eval_val = [&](double* recovery_out) {
    double ce_acc = 0.0;
    long long masked_total = 0, recovered = 0;
    const int chunk = 16;
    for (std::size_t start = 0; start < val_items.size(); start += chunk) {
      const std::size_t stop = std::min(val_items.size(), start + chunk);
      const int items = static_cast<int>(stop - start);
      std::vector<int> tokens;
      std::vector<int> originals;
      std::vector<std::uint8_t> mask;
      Tensor coords({items * L, spatial});
      for (int b = 0; b < items; ++b) {
        const ValItem& it = val_items[start + static_cast<std::size_t>(b)];
        tokens.insert(tokens.end(), it.corrupted.begin(), it.corrupted.end());
        originals.insert(originals.end(), it.original.begin(), it.original.end());
        mask.insert(mask.end(), it.loss_mask.begin(), it.loss_mask.end());
        for (int i = 0; i < L; ++i)
          for (int t = 0; t < spatial; ++t) coords.at(b * L + i, t) = it.coords.point(i)[t];
      }
      Tensor logits = model->forward_batch(tokens, with_coords ? &coords : nullptr, L, nullptr);
      long long m = 0;
      for (auto b : mask) m += b ? 1 : 0;
      if (m == 0) continue;
      Tensor ce = cross_entropy_masked(logits, originals, mask, nullptr);
      ce_acc += ce[0] * static_cast<double>(m);
      masked_total += m;
      const int v = model_cfg.vocab_size;
      for (std::size_t r = 0; r < mask.size(); ++r) {
        if (!mask[r]) continue;
        int best = 0;
        for (int j = 1; j < v; ++j)
          if (logits.at(static_cast<int>(r), j) > logits.at(static_cast<int>(r), best)) best = j;
        if (best == originals[r]) ++recovered;
      }
    }
    if (recovery_out)
      *recovery_out = masked_total ? static_cast<double>(recovered) / static_cast<double>(masked_total) : 0.0;
    return masked_total ? ce_acc / static_cast<double>(masked_total) : 0.0;
  };

  TrainMaskedResult result;
  long long step = 0;
  long long epoch = 0;
  while (step < cfg.total_steps) {
    ++epoch;
    data_rng.shuffle(train_idx);
    double epoch_ce = 0.0;
    long long epoch_steps = 0;
    for (std::size_t start = 0; start + batch <= train_idx.size() && step < cfg.total_steps;
         start += static_cast<std::size_t>(batch)) {
      std::vector<int> tokens;
      std::vector<int> originals;
      std::vector<std::uint8_t> mask;
      Tensor coords({batch * L, spatial});
      for (int b = 0; b < batch; ++b) {
        const Chain& ch = chains[static_cast<std::size_t>(train_idx[start + static_cast<std::size_t>(b)])];
        MaskedTokens mt = apply_masking(ch.tokens, masking, data_rng);
        tokens.insert(tokens.end(), mt.corrupted.begin(), mt.corrupted.end());
        originals.insert(originals.end(), ch.tokens.begin(), ch.tokens.end());
        mask.insert(mask.end(), mt.loss_mask.begin(), mt.loss_mask.end());
        PointCloud in = augment(ch.cloud, cfg.coord_scale, cfg.rotate_augment, data_rng);
        for (int i = 0; i < L; ++i)
          for (int t = 0; t < spatial; ++t) coords.at(b * L + i, t) = in.point(i)[t];
      }
      bool any_masked = false;
      for (auto b : mask)
        if (b) { any_masked = true; break; }
      if (!any_masked) continue;  // vanishingly rare, but keep the loss well-defined
      Tape tape;
      Tensor logits = model->forward_batch(tokens, with_coords ? &coords : nullptr, L, &tape);
      Tensor loss = cross_entropy_masked(logits, originals, mask, &tape);
      zero_param_grads(model->params());
      tape.backward(loss);
      ++step;
      adam_step(model->params(), adam, lr_at_step(step, cfg));
      epoch_ce += loss[0];
      ++epoch_steps;
    }
    if (epoch_steps == 0) throw std::logic_error("train_masked: batch larger than training set");

    const bool last = step >= cfg.total_steps;
    if (epoch % cfg.val_every_epochs == 0 || last) {
      EpochMetric row;
      row.epoch = epoch;
      row.step = step;
      row.lr = lr_at_step(step, cfg);
      row.train_loss = epoch_ce / static_cast<double>(epoch_steps);
      row.val_loss = eval_val(&row.val_recovery);
      result.metrics.push_back(row);
      result.best_val = std::min(result.best_val, row.val_loss);
    }
  }

  result.model = model;
  result.final_train = detail::tail_mean(result.metrics, &EpochMetric::train_loss);
  result.final_val = detail::tail_mean(result.metrics, &EpochMetric::val_loss);
  result.final_val_recovery = detail::tail_mean(result.metrics, &EpochMetric::val_recovery);
  return result;
}

}  // namespace geoattn
