// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point. Exit codes: 0 success, 1 validation/runtime
// failure, 2 usage or configuration errors.
#pragma once

#include <cstdio>
#include <exception>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "geoattn/experiments.hpp"

namespace geoattn {

namespace detail {

inline std::string default_out_dir(const std::string& subcommand) {
  if (const char* env = std::getenv("GEOATTN_OUT")) return std::string(env) + "/" + subcommand;
  return "results/" + subcommand;
}

inline nlohmann::json load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"a desk-scale laboratory for Gaussian attention filters of Euclidean distance"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, csv_path, x_col;
  std::vector<std::string> y_cols;
  std::uint64_t seed = 0;
  bool seed_given = false, fast = false, full = false;
  int jobs = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config of flat dotted keys");
    cmd->add_option("--out", out_dir, "output directory (default results/<subcommand>)");
    cmd->add_option("--seed", seed, "base seed")->each([&](const std::string&) { seed_given = true; });
    cmd->add_flag("--fast", fast, "acceptance-scale presets");
    cmd->add_flag("--full", full, "paper-scale presets (the default)");
    cmd->add_option("--jobs", jobs, "worker threads for sweeps (0 = hardware)");
  };

  CLI::App* verify = app.add_subcommand("verify", "analytic embedding and activation identities");
  CLI::App* train_sim = app.add_subcommand("train-sim", "train the truncated distance model");
  CLI::App* sweep_exp = app.add_subcommand("sweep-exponent", "val loss across target exponents p");
  CLI::App* sweep_hd = app.add_subcommand("sweep-headdim", "val loss across Q/K head dimensions");
  CLI::App* ablate = app.add_subcommand("ablate-aug", "rotation-augmentation ablation at 100 clouds");
  CLI::App* se3div = app.add_subcommand("se3-div", "rotation divergence of a trained checkpoint");
  CLI::App* train_masked = app.add_subcommand("train-masked", "masked-token training on synthetic chains");
  CLI::App* analyze = app.add_subcommand("analyze-attn", "attention-vs-distance profile and Gaussian fit");
  CLI::App* plot = app.add_subcommand("plot", "render an SVG chart from a metrics CSV");
  for (CLI::App* cmd : {verify, train_sim, sweep_exp, sweep_hd, ablate, se3div, train_masked, analyze, plot})
    add_common(cmd);
  se3div->add_option("--checkpoint", checkpoint_path, "truncated model checkpoint")->required();
  analyze->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  plot->add_option("--csv", csv_path, "metrics CSV to plot")->required();
  plot->add_option("--x", x_col, "x column (default: first column)");
  plot->add_option("--y", y_cols, "y columns (default: all other columns)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  if (out_dir.empty()) out_dir = detail::default_out_dir(name);

  LabConfig cfg;
  try {
    if (fast && full) throw std::invalid_argument("--fast and --full are mutually exclusive");
    cfg = default_lab_config(fast);
    if (!config_path.empty()) apply_config_overrides(cfg, detail::load_config_file(config_path));
    if (seed_given) cfg.seed = seed;
    if (jobs > 0) cfg.jobs = jobs;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "geoattn %s: %s\n", name.c_str(), e.what());
    return 2;
  }

  try {
    ExperimentResult result;
    if (name == "verify") {
      result = run_verify(cfg);
      bool all_pass = result.summary.at("all_pass").get<bool>();
      std::printf("%-58s %12s %12s  %s\n", "check", "measured", "bound", "status");
      for (const auto& row : result.summary.at("checks")) {
        std::printf("%-58s %12.3e %12.3e  %s\n", row.at("name").get<std::string>().c_str(),
                    row.at("measured").get<double>(), row.at("bound").get<double>(),
                    row.at("pass").get<bool>() ? "pass" : "FAIL");
      }
      write_result_dir(result, out_dir);
      std::printf("%s\n", all_pass ? "all checks passed" : "VERIFY FAILED");
      return all_pass ? 0 : 1;
    } else if (name == "train-sim") {
      result = run_train_sim(cfg, out_dir);
    } else if (name == "sweep-exponent") {
      result = run_sweep_exponent(cfg);
    } else if (name == "sweep-headdim") {
      result = run_sweep_headdim(cfg);
    } else if (name == "ablate-aug") {
      result = run_ablate_augmentation(cfg);
    } else if (name == "se3-div") {
      result = run_se3_div(cfg, checkpoint_path);
    } else if (name == "train-masked") {
      result = run_train_masked(cfg, out_dir);
    } else if (name == "analyze-attn") {
      result = run_analyze_attn(cfg, checkpoint_path);
    } else if (name == "plot") {
      result = run_plot(cfg, csv_path, x_col, y_cols);
    }
    write_result_dir(result, out_dir);
    std::printf("%s: wrote %s (%.1f s)\n", name.c_str(), out_dir.c_str(), result.wall_seconds);
    std::printf("summary: %s\n", result.summary.dump().c_str());
    return 0;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "geoattn %s: %s\n", name.c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "geoattn %s: %s\n", name.c_str(), e.what());
    return 1;
  }
}

}  // namespace geoattn
