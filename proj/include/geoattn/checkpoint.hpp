// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoints: a JSON config manifest followed by named
// flat parameter arrays in registration order. Raw little-endian doubles, so
// a reload reproduces forward outputs bit-exactly.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoattn/model.hpp"

namespace geoattn {

inline const char* activation_to_string(Activation a) { return activation_name(a); }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "gelu") return Activation::GeLU;
  if (s == "reglu") return Activation::ReGLU;
  if (s == "swiglu") return Activation::SwiGLU;
  throw std::invalid_argument("unknown activation: " + s);
}

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"n_layers", cfg.n_layers},
                        {"d_model", cfg.d_model},
                        {"n_heads", cfg.n_heads},
                        {"d_ff", cfg.d_ff},
                        {"activation", activation_to_string(cfg.activation)},
                        {"head_dim_truncated", cfg.head_dim_truncated},
                        {"spatial_dim", cfg.spatial_dim},
                        {"vocab_size", cfg.vocab_size},
                        {"use_sinusoidal_pe", cfg.use_sinusoidal_pe},
                        {"use_coord_embed", cfg.use_coord_embed},
                        {"coord_scale", cfg.coord_scale},
                        {"logit_clamp", cfg.logit_clamp}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.activation = activation_from_string(j.at("activation").get<std::string>());
  cfg.head_dim_truncated = j.at("head_dim_truncated").get<int>();
  cfg.spatial_dim = j.at("spatial_dim").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.use_sinusoidal_pe = j.at("use_sinusoidal_pe").get<bool>();
  cfg.use_coord_embed = j.at("use_coord_embed").get<bool>();
  cfg.coord_scale = j.at("coord_scale").get<double>();
  cfg.logit_clamp = j.at("logit_clamp").get<double>();
  return cfg;
}

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void write_doubles(std::ostream& os, const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, p + i, 8);
    unsigned char b[8];
    for (int t = 0; t < 8; ++t) b[t] = static_cast<unsigned char>(bits >> (8 * t));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

inline void read_doubles(std::istream& is, double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int t = 0; t < 8; ++t) bits |= static_cast<std::uint64_t>(b[t]) << (8 * t);
    std::memcpy(p + i, &bits, 8);
  }
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Model>
void save_checkpoint(const Model& model, const std::string& kind, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  nlohmann::json manifest{{"kind", kind}, {"config", model_config_to_json(model.config())}};
  const std::string mstr = manifest.dump();
  os.write("GATN", 4);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(mstr.size()));
  os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  detail::write_u32(os, static_cast<std::uint32_t>(model.params().size()));
  for (const NamedParam& p : model.params()) {
    detail::write_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.value.shape();
    detail::write_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    detail::write_doubles(os, p.value.data(), p.value.numel());
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct CheckpointData {
  std::string kind;
  ModelConfig config;
  std::vector<NamedParam> params;
};

inline CheckpointData load_checkpoint_data(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "GATN")
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const std::uint32_t version = detail::read_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t mlen = detail::read_u32(is);
  std::string mstr(mlen, '\0');
  is.read(mstr.data(), mlen);
  nlohmann::json manifest = nlohmann::json::parse(mstr);
  CheckpointData out;
  out.kind = manifest.at("kind").get<std::string>();
  out.config = model_config_from_json(manifest.at("config"));
  const std::uint32_t n_params = detail::read_u32(is);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::uint32_t nlen = detail::read_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    const std::uint32_t ndim = detail::read_u32(is);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(detail::read_u32(is));
    Tensor t(shape);
    detail::read_doubles(is, t.data(), t.numel());
    out.params.push_back({name, t});
  }
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return out;
}

template <typename Model>
void assign_params(Model& model, const std::vector<NamedParam>& stored) {
  auto& live = model.params();
  if (live.size() != stored.size())
    throw std::runtime_error("assign_params: parameter count mismatch");
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (live[i].name != stored[i].name)
      throw std::runtime_error("assign_params: parameter order mismatch at " + live[i].name);
    if (live[i].value.shape() != stored[i].value.shape())
      throw std::runtime_error("assign_params: shape mismatch at " + live[i].name);
    for (std::size_t j = 0; j < live[i].value.numel(); ++j)
      live[i].value[j] = stored[i].value[j];
  }
}

inline TruncatedDistanceModel load_truncated_model(const std::string& path) {
  CheckpointData data = load_checkpoint_data(path);
  if (data.kind != "truncated")
    throw std::runtime_error("load_truncated_model: checkpoint kind is " + data.kind);
  TruncatedDistanceModel model(data.config, Rng(0));
  assign_params(model, data.params);
  return model;
}

inline MaskedLMModel load_masked_model(const std::string& path) {
  CheckpointData data = load_checkpoint_data(path);
  if (data.kind != "masked")
    throw std::runtime_error("load_masked_model: checkpoint kind is " + data.kind);
  MaskedLMModel model(data.config, Rng(0));
  assign_params(model, data.params);
  return model;
}

}  // namespace geoattn
