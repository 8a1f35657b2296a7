// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm transformer encoders: the truncated distance model whose output
// is one head's unnormalized attention matrix, and a masked-token model with
// optional coordinate embeddings. Parameter accounting is exact and the
// registration order is the checkpoint order.
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoattn/geometry.hpp"
#include "geoattn/ops.hpp"
#include "geoattn/rng.hpp"
#include "geoattn/tape.hpp"
#include "geoattn/tensor.hpp"

namespace geoattn {

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  int n_layers = 3;  // the truncated model runs n_layers - 1 full layers
  int d_model = 256;
  int n_heads = 8;
  int d_ff = 1024;
  Activation activation = Activation::ReLU;
  int head_dim_truncated = 32;
  int spatial_dim = 3;
  int vocab_size = 0;  // masked-LM data classes; the [MASK] id equals vocab_size
  bool use_sinusoidal_pe = false;
  bool use_coord_embed = true;
  double coord_scale = 1.0 / 16.0;  // loader rescale factor for model inputs
  double logit_clamp = 30.0;

  static ModelConfig simulated_default() { return ModelConfig{}; }

  int ff_hidden_out() const {
    const bool gated = activation == Activation::ReGLU || activation == Activation::SwiGLU;
    return gated ? d_ff / 2 : d_ff;
  }

  void validate_common() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1)
      throw std::invalid_argument("ModelConfig: sizes must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    const bool gated = activation == Activation::ReGLU || activation == Activation::SwiGLU;
    if (gated && d_ff % 2 != 0)
      throw std::invalid_argument("ModelConfig: gated activations need an even d_ff");
    if (coord_scale <= 0.0) throw std::invalid_argument("ModelConfig: coord_scale must be > 0");
  }
};

namespace detail {

inline Tensor init_affine_weight(int fan_in, int fan_out, Rng& rng) {
  Tensor w({fan_in, fan_out});
  const double bound = std::sqrt(1.0 / fan_in);
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  w.set_requires_grad();
  return w;
}

inline Tensor init_zeros(int n) {
  Tensor t({n});
  t.set_requires_grad();
  return t;
}

inline Tensor init_ones(int n) {
  Tensor t({n}, 1.0);
  t.set_requires_grad();
  return t;
}

}  // namespace detail

struct NamedParam {
  std::string name;
  Tensor value;
};

struct EncoderLayer {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;

  static EncoderLayer build(const ModelConfig& cfg, Rng& rng) {
    EncoderLayer l;
    const int d = cfg.d_model;
    l.ln1_gain = detail::init_ones(d);
    l.ln1_bias = detail::init_zeros(d);
    l.wq = detail::init_affine_weight(d, d, rng);
    l.bq = detail::init_zeros(d);
    l.wk = detail::init_affine_weight(d, d, rng);
    l.bk = detail::init_zeros(d);
    l.wv = detail::init_affine_weight(d, d, rng);
    l.bv = detail::init_zeros(d);
    l.wo = detail::init_affine_weight(d, d, rng);
    l.bo = detail::init_zeros(d);
    l.ln2_gain = detail::init_ones(d);
    l.ln2_bias = detail::init_zeros(d);
    l.w1 = detail::init_affine_weight(d, cfg.d_ff, rng);
    l.b1 = detail::init_zeros(cfg.d_ff);
    l.w2 = detail::init_affine_weight(cfg.ff_hidden_out(), d, rng);
    l.b2 = detail::init_zeros(d);
    return l;
  }

  void register_params(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".ln1.gain", ln1_gain});
    out.push_back({prefix + ".ln1.bias", ln1_bias});
    out.push_back({prefix + ".wq.w", wq});
    out.push_back({prefix + ".wq.b", bq});
    out.push_back({prefix + ".wk.w", wk});
    out.push_back({prefix + ".wk.b", bk});
    out.push_back({prefix + ".wv.w", wv});
    out.push_back({prefix + ".wv.b", bv});
    out.push_back({prefix + ".wo.w", wo});
    out.push_back({prefix + ".wo.b", bo});
    out.push_back({prefix + ".ln2.gain", ln2_gain});
    out.push_back({prefix + ".ln2.bias", ln2_bias});
    out.push_back({prefix + ".ff1.w", w1});
    out.push_back({prefix + ".ff1.b", b1});
    out.push_back({prefix + ".ff2.w", w2});
    out.push_back({prefix + ".ff2.b", b2});
  }

  // x + Attn(LN(x)), then x + FF(LN(x))
  Tensor forward(const Tensor& h_in, const ModelConfig& cfg, int seq_len, Tape* tape,
                 std::vector<Tensor>* attn_capture = nullptr) const {
    Tensor x = layer_norm(h_in, ln1_gain, ln1_bias, kLayerNormEps, tape);
    Tensor q = linear(x, wq, bq, tape);
    Tensor k = linear(x, wk, bk, tape);
    Tensor v = linear(x, wv, bv, tape);
    Tensor attn = multi_head_attention(q, k, v, cfg.n_heads, seq_len, tape, attn_capture);
    Tensor h = add(h_in, linear(attn, wo, bo, tape), tape);
    Tensor y = layer_norm(h, ln2_gain, ln2_bias, kLayerNormEps, tape);
    Tensor ff = linear(activation(linear(y, w1, b1, tape), cfg.activation, tape), w2, b2, tape);
    return add(h, ff, tape);
  }
};

// standard interleaved sin/cos positional encoding, wavelength base 10,000
inline Tensor sinusoidal_pe(int length, int d_model) {
  if (d_model % 2 != 0) throw std::invalid_argument("sinusoidal_pe: d_model must be even");
  if (length < 0) throw std::invalid_argument("sinusoidal_pe: negative length");
  Tensor pe({length, d_model});
  for (int pos = 0; pos < length; ++pos)
    for (int i = 0; i < d_model / 2; ++i) {
      const double rate = std::pow(10000.0, -2.0 * i / d_model);
      pe.at(pos, 2 * i) = std::sin(pos * rate);
      pe.at(pos, 2 * i + 1) = std::cos(pos * rate);
    }
  return pe;
}

// ---------------------------------------------------------------------------
// truncated distance model
// ---------------------------------------------------------------------------

class TruncatedDistanceModel {
 public:
  TruncatedDistanceModel(const ModelConfig& cfg, Rng rng) : cfg_(cfg) {
    cfg_.validate_common();
    if (cfg_.n_layers < 2)
      throw std::invalid_argument("TruncatedDistanceModel: needs at least one full layer");
    if (cfg_.spatial_dim < 1 || cfg_.head_dim_truncated < 1)
      throw std::invalid_argument("TruncatedDistanceModel: bad spatial/head dims");
    const int d = cfg_.d_model;
    coord_w_ = detail::init_affine_weight(cfg_.spatial_dim, d, rng);
    coord_b_ = detail::init_zeros(d);
    for (int l = 0; l + 1 < cfg_.n_layers; ++l) layers_.push_back(EncoderLayer::build(cfg_, rng));
    final_gain_ = detail::init_ones(d);
    final_bias_ = detail::init_zeros(d);
    q_w_ = detail::init_affine_weight(d, cfg_.head_dim_truncated, rng);
    q_b_ = detail::init_zeros(cfg_.head_dim_truncated);
    k_w_ = detail::init_affine_weight(d, cfg_.head_dim_truncated, rng);
    k_b_ = detail::init_zeros(cfg_.head_dim_truncated);
    register_all();
  }

  const ModelConfig& config() const { return cfg_; }

  // coords: [B * seq_len, spatial_dim], already recentered/rescaled by the
  // caller; output [B * seq_len, seq_len] of unnormalized attention
  Tensor forward_batch(const Tensor& coords, int seq_len, Tape* tape = nullptr) const {
    if (coords.ndim() != 2 || coords.dim(1) != cfg_.spatial_dim)
      throw std::invalid_argument("forward_batch: coords must be [*, spatial_dim]");
    if (seq_len < 2) throw std::invalid_argument("forward_batch: need at least 2 points");
    Tensor h = linear(coords, coord_w_, coord_b_, tape);
    for (const EncoderLayer& l : layers_) h = l.forward(h, cfg_, seq_len, tape);
    h = layer_norm(h, final_gain_, final_bias_, kLayerNormEps, tape);
    Tensor q = linear(h, q_w_, q_b_, tape);
    Tensor k = linear(h, k_w_, k_b_, tape);
    Tensor s = pair_scores(q, k, seq_len, 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim_truncated)), tape);
    return geoattn::exp(clamp(s, -cfg_.logit_clamp, cfg_.logit_clamp, tape), tape);
  }

  // single transformed cloud -> [L, L]
  Tensor forward(const PointCloud& cloud, Tape* tape = nullptr) const {
    if (cloud.dim != cfg_.spatial_dim)
      throw std::invalid_argument("forward: cloud dimension mismatch");
    const int n = cloud.size();
    if (n < 2) throw std::invalid_argument("forward: need at least 2 points");
    Tensor coords({n, cloud.dim}, cloud.coords);
    return forward_batch(coords, n, tape);
  }

  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  void register_all() {
    params_.clear();
    params_.push_back({"coord_embed.w", coord_w_});
    params_.push_back({"coord_embed.b", coord_b_});
    for (std::size_t l = 0; l < layers_.size(); ++l)
      layers_[l].register_params("layer" + std::to_string(l), params_);
    params_.push_back({"final_ln.gain", final_gain_});
    params_.push_back({"final_ln.bias", final_bias_});
    params_.push_back({"q_head.w", q_w_});
    params_.push_back({"q_head.b", q_b_});
    params_.push_back({"k_head.w", k_w_});
    params_.push_back({"k_head.b", k_b_});
  }

  ModelConfig cfg_;
  Tensor coord_w_, coord_b_;
  std::vector<EncoderLayer> layers_;
  Tensor final_gain_, final_bias_;
  Tensor q_w_, q_b_, k_w_, k_b_;
  std::vector<NamedParam> params_;
};

// ---------------------------------------------------------------------------
// masked token model
// ---------------------------------------------------------------------------

class MaskedLMModel {
 public:
  MaskedLMModel(const ModelConfig& cfg, Rng rng) : cfg_(cfg) {
    cfg_.validate_common();
    if (cfg_.vocab_size < 2) throw std::invalid_argument("MaskedLMModel: vocab_size must be >= 2");
    const int d = cfg_.d_model;
    token_table_ = detail::init_affine_weight(cfg_.vocab_size + 1, d, rng);
    if (cfg_.use_coord_embed) {
      coord_w_ = detail::init_affine_weight(cfg_.spatial_dim, d, rng);
      coord_b_ = detail::init_zeros(d);
    }
    for (int l = 0; l < cfg_.n_layers; ++l) layers_.push_back(EncoderLayer::build(cfg_, rng));
    final_gain_ = detail::init_ones(d);
    final_bias_ = detail::init_zeros(d);
    out_w_ = detail::init_affine_weight(d, cfg_.vocab_size, rng);
    out_b_ = detail::init_zeros(cfg_.vocab_size);
    register_all();
  }

  const ModelConfig& config() const { return cfg_; }
  int mask_token_id() const { return cfg_.vocab_size; }
  int n_layers() const { return static_cast<int>(layers_.size()); }

  // tokens: B * seq_len ids (data ids or the mask id); coords: optional
  // [B * seq_len, spatial_dim]. pin_position >= 0 replaces every positional
  // encoding row by that position's row (the isolation probe).
  // attn_capture, when given, receives per layer the per-item head-averaged
  // attention matrices.
  Tensor forward_batch(const std::vector<int>& tokens, const Tensor* coords, int seq_len,
                       Tape* tape = nullptr,
                       std::vector<std::vector<Tensor>>* attn_capture = nullptr,
                       int pin_position = -1) const {
    const int n = static_cast<int>(tokens.size());
    if (seq_len < 1 || n % seq_len != 0)
      throw std::invalid_argument("forward_batch: token count not a multiple of seq_len");
    for (int t : tokens)
      if (t < 0 || t > cfg_.vocab_size)
        throw std::out_of_range("forward_batch: token id " + std::to_string(t) +
                                " outside vocabulary (mask id is " +
                                std::to_string(cfg_.vocab_size) + ")");
    if (coords && (coords->ndim() != 2 || coords->dim(0) != n || coords->dim(1) != cfg_.spatial_dim))
      throw std::invalid_argument("forward_batch: coords must be [tokens, spatial_dim]");

    Tensor h = gather_rows(token_table_, tokens, tape);
    if (cfg_.use_coord_embed && coords)
      h = add(h, linear(*coords, coord_w_, coord_b_, tape), tape);
    if (cfg_.use_sinusoidal_pe) {
      Tensor pe = positional_rows(n, seq_len, pin_position);
      h = add(h, pe, tape);
    }
    if (attn_capture) attn_capture->assign(static_cast<std::size_t>(cfg_.n_layers), {});
    for (std::size_t l = 0; l < layers_.size(); ++l)
      h = layers_[l].forward(h, cfg_, seq_len, tape, attn_capture ? &(*attn_capture)[l] : nullptr);
    h = layer_norm(h, final_gain_, final_bias_, kLayerNormEps, tape);
    return linear(h, out_w_, out_b_, tape);
  }

  // single sequence -> [L, vocab] logits
  Tensor forward(std::span<const int> tokens, const std::optional<PointCloud>& coords,
                 Tape* tape = nullptr) const {
    const int n = static_cast<int>(tokens.size());
    std::vector<int> ids(tokens.begin(), tokens.end());
    if (coords) {
      if (coords->size() != n)
        throw std::invalid_argument("forward: coords length must match token count");
      Tensor c({n, coords->dim}, coords->coords);
      return forward_batch(ids, &c, n, tape);
    }
    return forward_batch(ids, nullptr, n, tape);
  }

  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  Tensor positional_rows(int n, int seq_len, int pin_position) const {
    Tensor pe = sinusoidal_pe(seq_len, cfg_.d_model);
    Tensor rows({n, cfg_.d_model});
    for (int i = 0; i < n; ++i) {
      const int pos = pin_position >= 0 ? pin_position : i % seq_len;
      for (int j = 0; j < cfg_.d_model; ++j) rows.at(i, j) = pe.at(pos, j);
    }
    return rows;
  }

  void register_all() {
    params_.clear();
    params_.push_back({"token_embed.table", token_table_});
    if (cfg_.use_coord_embed) {
      params_.push_back({"coord_embed.w", coord_w_});
      params_.push_back({"coord_embed.b", coord_b_});
    }
    for (std::size_t l = 0; l < layers_.size(); ++l)
      layers_[l].register_params("layer" + std::to_string(l), params_);
    params_.push_back({"final_ln.gain", final_gain_});
    params_.push_back({"final_ln.bias", final_bias_});
    params_.push_back({"out_proj.w", out_w_});
    params_.push_back({"out_proj.b", out_b_});
  }

  ModelConfig cfg_;
  Tensor token_table_;
  Tensor coord_w_, coord_b_;
  std::vector<EncoderLayer> layers_;
  Tensor final_gain_, final_bias_;
  Tensor out_w_, out_b_;
  std::vector<NamedParam> params_;
};

// ---------------------------------------------------------------------------
// parameter accounting
// ---------------------------------------------------------------------------

template <typename Model>
long long count_parameters(const Model& model) {
  long long total = 0;
  for (const NamedParam& p : model.params()) total += static_cast<long long>(p.value.numel());
  return total;
}

inline long long encoder_layer_parameter_count(const ModelConfig& cfg) {
  const long long d = cfg.d_model, f = cfg.d_ff, fo = cfg.ff_hidden_out();
  return 4 * (d * d + d) + (d * f + f) + (fo * d + d) + 2 * (2 * d);
}

inline long long expected_truncated_parameter_count(const ModelConfig& cfg) {
  const long long d = cfg.d_model, n = cfg.spatial_dim, hd = cfg.head_dim_truncated;
  return (n * d + d) + (cfg.n_layers - 1) * encoder_layer_parameter_count(cfg) + 2 * d +
         2 * (d * hd + hd);
}

inline long long expected_masked_parameter_count(const ModelConfig& cfg) {
  const long long d = cfg.d_model, v = cfg.vocab_size, n = cfg.spatial_dim;
  long long total = (v + 1) * d;
  if (cfg.use_coord_embed) total += n * d + d;
  total += cfg.n_layers * encoder_layer_parameter_count(cfg);
  total += 2 * d;
  total += d * v + v;
  return total;
}

// Mean l1 distance between model outputs across independently rotated copies
// of each cloud; the rotation-invariance deficit of the learned map.
inline double se3_divergence(const TruncatedDistanceModel& model,
                             const std::vector<PointCloud>& clouds, int trials, Rng& rng) {
  return se3_divergence_fn([&](const PointCloud& c) { return model.forward(c); }, clouds,
                           trials, model.config().coord_scale, rng);
}

}  // namespace geoattn
