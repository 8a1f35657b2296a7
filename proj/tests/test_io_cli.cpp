// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "geoattn/cli.hpp"
#include "geoattn/io.hpp"

using namespace geoattn;
namespace fs = std::filesystem;

namespace {

// strict-enough well-formedness scan: declaration, balanced tags, quoted
// attributes, a single root element
bool xml_well_formed(const std::string& text) {
  std::size_t pos = 0;
  if (text.rfind("<?xml", 0) == 0) {
    pos = text.find("?>");
    if (pos == std::string::npos) return false;
    pos += 2;
  }
  std::vector<std::string> stack;
  int roots = 0;
  while (pos < text.size()) {
    const std::size_t open = text.find('<', pos);
    if (open == std::string::npos) break;
    const std::size_t close = text.find('>', open);
    if (close == std::string::npos) return false;
    std::string tag = text.substr(open + 1, close - open - 1);
    pos = close + 1;
    if (tag.empty()) return false;
    if (tag[0] == '!') continue;  // comments / doctype
    bool closing = tag[0] == '/';
    bool self_closing = tag.back() == '/';
    if (closing) tag = tag.substr(1);
    if (self_closing) tag = tag.substr(0, tag.size() - 1);
    // quotes inside the tag must be balanced
    int quotes = 0;
    for (char c : tag)
      if (c == '"') ++quotes;
    if (quotes % 2 != 0) return false;
    const std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
    if (name.empty()) return false;
    if (closing) {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (!self_closing) {
      if (stack.empty() && roots++ > 0) return false;
      stack.push_back(name);
    } else if (stack.empty() && roots++ > 0) {
      return false;
    }
  }
  return stack.empty() && roots == 1;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("geoattn");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "geoattn_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string tiny_sim_config(const fs::path& dir) {
  const fs::path path = dir / "tiny.json";
  std::ofstream os(path);
  os << R"({"data.count": 40, "data.length": 4,
            "model.n_layers": 3, "model.d_model": 16, "model.n_heads": 4,
            "model.d_ff": 32, "model.head_dim_truncated": 5,
            "train.total_steps": 24, "train.warmup_steps": 6,
            "train.val_every_epochs": 2,
            "se3.clouds": 10, "se3.trials": 2, "profile.clouds": 40})";
  return path.string();
}

}  // namespace

TEST_CASE("deterministic double formatting round-trips", "[io]") {
  for (double v : {0.1, 1.0 / 3.0, 2e-4, 141.4213562373095, -7.5, 0.0, 1e300}) {
    const std::string s = io::fmt(v);
    REQUIRE(std::stod(s) == v);
  }
}

TEST_CASE("csv rendering is stable and validates row width", "[io]") {
  io::Csv csv;
  csv.header = {"a", "b"};
  csv.rows = {{"1", "2"}, {"3", "4"}};
  REQUIRE(csv.to_string() == "a,b\n1,2\n3,4\n");
  csv.rows.push_back({"only-one"});
  REQUIRE_THROWS_AS(csv.to_string(), std::logic_error);
}

TEST_CASE("svg charts are well-formed and byte-deterministic", "[io]") {
  io::Series line;
  line.label = "losses & <things>";
  line.x = {0, 1, 2, 3, 4};
  line.y = {1.0, 0.5, 0.33, 0.21, 0.18};
  io::Series dots;
  dots.label = "points";
  dots.markers = true;
  dots.line = false;
  dots.x = {0.5, 1.5};
  dots.y = {0.7, 0.4};
  const std::string a = io::svg_chart("demo \"chart\"", "epoch", "loss", {line, dots});
  const std::string b = io::svg_chart("demo \"chart\"", "epoch", "loss", {line, dots});
  REQUIRE(a == b);
  REQUIRE(xml_well_formed(a));
  REQUIRE_THROWS_AS(io::svg_chart("t", "x", "y", {}), std::invalid_argument);
}

TEST_CASE("xml checker itself rejects broken documents", "[io]") {
  REQUIRE(xml_well_formed("<a><b x=\"1\"/></a>"));
  REQUIRE_FALSE(xml_well_formed("<a><b></a></b>"));
  REQUIRE_FALSE(xml_well_formed("<a><b x=\"1/></a>"));
  REQUIRE_FALSE(xml_well_formed("<a></a><c></c>"));
}

TEST_CASE("cli: usage and config errors exit 2", "[cli]") {
  const auto dir = fresh_dir("cli_errors");
  REQUIRE(run_cli({"no-such-command"}) == 2);
  REQUIRE(run_cli({"verify", "--no-such-flag"}) == 2);

  const fs::path bad_json = dir / "bad.json";
  std::ofstream(bad_json) << "{ not json";
  REQUIRE(run_cli({"verify", "--config", bad_json.string(), "--out", (dir / "o1").string()}) == 2);

  const fs::path unknown_key = dir / "unknown.json";
  std::ofstream(unknown_key) << R"({"train.nonexistent_knob": 3})";
  REQUIRE(run_cli({"verify", "--config", unknown_key.string(), "--out", (dir / "o2").string()}) == 2);

  REQUIRE(run_cli({"se3-div"}) == 2);  // missing required --checkpoint
}

TEST_CASE("cli: verify runs all identities and exits 0", "[cli]") {
  const auto dir = fresh_dir("cli_verify");
  REQUIRE(run_cli({"verify", "--out", (dir / "out").string()}) == 0);
  for (const char* f : {"config.json", "metrics.csv", "summary.json"})
    REQUIRE(fs::exists(dir / "out" / f));
}

TEST_CASE("cli: result directories are structurally complete and reproducible", "[cli]") {
  const auto dir = fresh_dir("cli_struct");
  const std::string config = tiny_sim_config(dir);

  auto run_twice = [&](const std::string& sub, std::vector<std::string> extra) {
    std::vector<std::string> args{sub, "--config", config, "--seed", "7"};
    for (const auto& e : extra) args.push_back(e);
    const fs::path out1 = dir / (sub + "_1");
    const fs::path out2 = dir / (sub + "_2");
    auto with_out = [&](const fs::path& out) {
      std::vector<std::string> a = args;
      a.push_back("--out");
      a.push_back(out.string());
      return a;
    };
    REQUIRE(run_cli(with_out(out1)) == 0);
    REQUIRE(run_cli(with_out(out2)) == 0);
    for (const fs::path& out : {out1, out2}) {
      REQUIRE(fs::exists(out / "config.json"));
      REQUIRE(fs::exists(out / "metrics.csv"));
      REQUIRE(fs::exists(out / "summary.json"));
      bool has_svg = false;
      for (const auto& entry : fs::directory_iterator(out))
        if (entry.path().extension() == ".svg") {
          has_svg = true;
          REQUIRE(xml_well_formed(io::read_text_file(entry.path().string())));
        }
      REQUIRE(has_svg);
    }
    REQUIRE(io::read_text_file((out1 / "metrics.csv").string()) ==
            io::read_text_file((out2 / "metrics.csv").string()));
    REQUIRE(io::read_text_file((out1 / "summary.json").string()) ==
            io::read_text_file((out2 / "summary.json").string()));
  };

  run_twice("train-sim", {});
  // reuse the checkpoint the train-sim run saved
  const std::string ckpt = (dir / "train-sim_1" / "checkpoint.bin").string();
  REQUIRE(fs::exists(ckpt));
  run_twice("se3-div", {"--checkpoint", ckpt});
  run_twice("analyze-attn", {"--checkpoint", ckpt});
  run_twice("plot", {"--csv", (dir / "train-sim_1" / "metrics.csv").string(), "--x", "epoch"});
}

TEST_CASE("cli: environment variable provides the default output root", "[cli]") {
  const auto dir = fresh_dir("cli_envout");
  setenv("GEOATTN_OUT", dir.c_str(), 1);
  REQUIRE(run_cli({"verify"}) == 0);
  unsetenv("GEOATTN_OUT");
  REQUIRE(fs::exists(dir / "verify" / "metrics.csv"));
}
