// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic result emission: CSV tables (shortest round-trip doubles)
// and self-contained SVG line/scatter charts. Identical inputs produce
// byte-identical files.
#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace geoattn::io {

inline std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt(long long v) { return std::to_string(v); }

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_text_file: cannot open " + path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw std::runtime_error("write_text_file: write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_text_file: cannot open " + path);
  std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return content;
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
    out += "\n";
    for (const auto& row : rows) {
      if (row.size() != header.size())
        throw std::logic_error("Csv: row width differs from header");
      for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
      out += "\n";
    }
    return out;
  }

  void write(const std::string& path) const { write_text_file(path, to_string()); }
};

// ---------------------------------------------------------------------------
// SVG charts
// ---------------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> x, y;
  bool line = true;
  bool markers = false;
};

namespace detail {

inline const char* series_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  return palette[i % 8];
}

inline std::string coord(double v) {
  // one decimal of pixel precision keeps files small and stable
  const double r = std::round(v * 10.0) / 10.0;
  std::string s = fmt(r);
  return s;
}

// tick spacing of the form {1, 2, 5} * 10^k covering roughly `target` steps
inline double nice_step(double span, int target) {
  if (span <= 0.0) return 1.0;
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double mult : {1.0, 2.0, 5.0, 10.0}) {
    if (mag * mult >= raw) return mag * mult;
  }
  return mag * 10.0;
}

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Self-contained static chart. Series are drawn in order with a fixed
// palette and a legend; axes carry {1,2,5}-step ticks.
inline std::string svg_chart(const std::string& title, const std::string& xlabel,
                             const std::string& ylabel, const std::vector<Series>& series,
                             int width = 720, int height = 480) {
  if (series.empty()) throw std::invalid_argument("svg_chart: no series");
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool first = true;
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("svg_chart: x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      } else {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, s.y[i]);
        ymax = std::max(ymax, s.y[i]);
      }
    }
  }
  if (first) throw std::invalid_argument("svg_chart: no finite points");
  if (xmax == xmin) { xmax += 1.0; xmin -= 1.0; }
  if (ymax == ymin) { ymax += 1.0; ymin -= 1.0; }
  const double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
  xmin -= xpad; xmax += xpad; ymin -= ypad; ymax += ypad;

  const double ml = 70, mr = 20, mt = 40, mb = 55;
  const double pw = width - ml - mr, ph = height - mt - mb;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + (ymax - y) / (ymax - ymin) * ph; };

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) +
         " " + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::coord(width / 2.0) +
         "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
         detail::escape_xml(title) + "</text>\n";

  // gridlines and ticks
  const double xstep = detail::nice_step(xmax - xmin, 8);
  const double ystep = detail::nice_step(ymax - ymin, 6);
  svg += "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (double t = std::ceil(xmin / xstep) * xstep; t <= xmax + 1e-12 * xstep; t += xstep) {
    const double X = px(t);
    svg += "<line x1=\"" + detail::coord(X) + "\" y1=\"" + detail::coord(mt) + "\" x2=\"" +
           detail::coord(X) + "\" y2=\"" + detail::coord(mt + ph) +
           "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + detail::coord(X) + "\" y=\"" + detail::coord(mt + ph + 16) +
           "\" text-anchor=\"middle\">" + fmt(std::fabs(t) < 1e-12 * xstep ? 0.0 : t) + "</text>\n";
  }
  for (double t = std::ceil(ymin / ystep) * ystep; t <= ymax + 1e-12 * ystep; t += ystep) {
    const double Y = py(t);
    svg += "<line x1=\"" + detail::coord(ml) + "\" y1=\"" + detail::coord(Y) + "\" x2=\"" +
           detail::coord(ml + pw) + "\" y2=\"" + detail::coord(Y) +
           "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + detail::coord(ml - 6) + "\" y=\"" + detail::coord(Y + 4) +
           "\" text-anchor=\"end\">" + fmt(std::fabs(t) < 1e-12 * ystep ? 0.0 : t) + "</text>\n";
  }
  svg += "</g>\n";

  // axes
  svg += "<rect x=\"" + detail::coord(ml) + "\" y=\"" + detail::coord(mt) + "\" width=\"" +
         detail::coord(pw) + "\" height=\"" + detail::coord(ph) +
         "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  svg += "<text x=\"" + detail::coord(ml + pw / 2) + "\" y=\"" + detail::coord(mt + ph + 40) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
         detail::escape_xml(xlabel) + "</text>\n";
  svg += "<text x=\"18\" y=\"" + detail::coord(mt + ph / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 " +
         detail::coord(mt + ph / 2) + ")\">" + detail::escape_xml(ylabel) + "</text>\n";

  // data
  for (std::size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    const char* color = detail::series_color(si);
    if (s.line && s.x.size() > 1) {
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        pts += detail::coord(px(s.x[i])) + "," + detail::coord(py(s.y[i])) + " ";
      }
      svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
             "\" stroke-width=\"1.6\" points=\"" + pts + "\"/>\n";
    }
    if (s.markers || s.x.size() == 1) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        svg += "<circle cx=\"" + detail::coord(px(s.x[i])) + "\" cy=\"" +
               detail::coord(py(s.y[i])) + "\" r=\"2.6\" fill=\"" + std::string(color) + "\"/>\n";
      }
    }
  }

  // legend
  svg += "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  double ly = mt + 8;
  for (std::size_t si = 0; si < series.size(); ++si) {
    if (series[si].label.empty()) continue;
    svg += "<rect x=\"" + detail::coord(ml + pw - 150) + "\" y=\"" + detail::coord(ly) +
           "\" width=\"14\" height=\"4\" fill=\"" + std::string(detail::series_color(si)) + "\"/>\n";
    svg += "<text x=\"" + detail::coord(ml + pw - 130) + "\" y=\"" + detail::coord(ly + 6) +
           "\">" + detail::escape_xml(series[si].label) + "</text>\n";
    ly += 18;
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

}  // namespace geoattn::io
