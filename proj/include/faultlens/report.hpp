#pragma once

// Static SVG and CSV artifacts: the qualitative heatmap (faults x features,
// one column per method), normalized score tables and per-variable traces.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "faultlens/analysis.hpp"
#include "faultlens/csv.hpp"
#include "faultlens/dataset.hpp"
#include "faultlens/error.hpp"
#include "faultlens/io.hpp"

namespace faultlens::report {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

/// Coordinates and labels are printed with fixed decimals so output bytes do
/// not depend on the platform's shortest-float formatting.
inline std::string num(double v, int decimals = 2) {
  return csv::format_fixed(v, decimals);
}

inline std::string svg_open(double width, double height) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
         num(width, 0) + "\" height=\"" + num(height, 0) + "\" viewBox=\"0 0 " +
         num(width, 0) + " " + num(height, 0) + "\">\n";
}

inline std::string svg_text(double x, double y, std::string_view text,
                            std::string_view extra = "") {
  std::string out = "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\"";
  if (!extra.empty()) out += " " + std::string(extra);
  return out + ">" + xml_escape(text) + "</text>\n";
}

// ---------------------------------------------------------------- heatmap

struct HeatmapData {
  std::vector<std::string> faults;
  std::vector<std::string> methods;  // column order inside each fault: A, B, ...
  std::vector<std::string> features;
  // scores[fault][method][feature], normalized.
  std::vector<std::vector<std::vector<double>>> scores;

  void validate() const {
    if (faults.empty() || methods.empty() || features.empty()) {
      throw InvalidArgument("heatmap needs at least 1 fault, method and feature");
    }
    if (scores.size() != faults.size()) {
      throw ShapeError("heatmap: score rows do not match the fault list");
    }
    for (const auto& per_fault : scores) {
      if (per_fault.size() != methods.size()) {
        throw ShapeError("heatmap: method columns do not match the method list");
      }
      for (const auto& col : per_fault) {
        if (col.size() != features.size()) {
          throw ShapeError("heatmap: column length does not match the features");
        }
        for (double v : col) {
          if (!std::isfinite(v)) throw NumericError("heatmap: non-finite score");
        }
      }
    }
  }
};

struct HeatmapOptions {
  double threshold = 0.5;  // features whose max score is below are omitted
  double cell_width = 22.0;
  double cell_height = 16.0;
  std::string title = "Most contributing features";
};

/// Fraction of the darkest colour for a score: clipped to [0, vmax].
inline double heat_level(double score, double vmax) {
  if (!(vmax > 0.0)) return 0.0;
  return std::clamp(score, 0.0, vmax) / vmax;
}

struct Rgb {
  int r = 255, g = 255, b = 255;
  bool operator==(const Rgb&) const = default;
};

/// White at level 0 to dark blue at level 1; every channel is
/// non-increasing in the level.
inline Rgb heat_rgb(double level) {
  level = std::clamp(level, 0.0, 1.0);
  auto lerp = [&](int to) {
    return static_cast<int>(std::lround(255.0 + level * (to - 255)));
  };
  return {lerp(8), lerp(48), lerp(107)};
}

inline std::string hex_color(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

struct HeatCell {
  std::size_t fault = 0;
  std::size_t method = 0;
  std::size_t feature = 0;
  double score = 0.0;
  double level = 0.0;
  Rgb color;
};

struct HeatmapLayout {
  std::vector<std::size_t> shown_features;
  std::vector<HeatCell> cells;  // fault-major, then method, then feature
  double vmax = 0.0;
};

inline HeatmapLayout layout_heatmap(const HeatmapData& d,
                                    const HeatmapOptions& opt = {}) {
  d.validate();
  HeatmapLayout out;
  for (std::size_t i = 0; i < d.features.size(); ++i) {
    double best = -INFINITY;
    for (const auto& per_fault : d.scores) {
      for (const auto& col : per_fault) best = std::max(best, col[i]);
    }
    if (best >= opt.threshold) out.shown_features.push_back(i);
  }
  for (std::size_t i : out.shown_features) {
    for (const auto& per_fault : d.scores) {
      for (const auto& col : per_fault) out.vmax = std::max(out.vmax, col[i]);
    }
  }
  for (std::size_t f = 0; f < d.faults.size(); ++f) {
    for (std::size_t m = 0; m < d.methods.size(); ++m) {
      for (std::size_t i : out.shown_features) {
        const double s = d.scores[f][m][i];
        const double level = heat_level(s, out.vmax);
        out.cells.push_back({f, m, i, s, level, heat_rgb(level)});
      }
    }
  }
  return out;
}

inline std::string column_letter(std::size_t method) {
  return std::string(1, static_cast<char>('A' + method % 26));
}

inline std::string render_heatmap(const HeatmapData& d,
                                  const HeatmapOptions& opt = {}) {
  const HeatmapLayout lay = layout_heatmap(d, opt);
  std::size_t longest = 4;
  for (std::size_t i : lay.shown_features) {
    longest = std::max(longest, d.features[i].size());
  }
  const double left = 12.0 + 7.0 * static_cast<double>(longest);
  const double top = 70.0;
  const double cw = opt.cell_width, ch = opt.cell_height;
  const std::size_t ncols = d.faults.size() * d.methods.size();
  const double grid_w = cw * static_cast<double>(ncols);
  const double grid_h = ch * static_cast<double>(lay.shown_features.size());
  const double width = left + grid_w + 90.0;
  const double height = top + std::max(grid_h, 120.0) + 40.0;

  std::string s = svg_open(width, height);
  s += "<style>text { font-family: sans-serif; font-size: 10px; }</style>\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + num(width, 0) + "\" height=\"" +
       num(height, 0) + "\" fill=\"#ffffff\"/>\n";
  s += svg_text(8, 16, opt.title, "font-size=\"13px\"");
  std::string legend_methods;
  for (std::size_t m = 0; m < d.methods.size(); ++m) {
    if (m) legend_methods += ", ";
    legend_methods += column_letter(m) + ": " + d.methods[m];
  }
  s += svg_text(8, 32, legend_methods + " columns; features with max score below " +
                           num(opt.threshold) + " omitted");

  for (std::size_t f = 0; f < d.faults.size(); ++f) {
    const double x0 = left + cw * static_cast<double>(f * d.methods.size());
    const double span = cw * static_cast<double>(d.methods.size());
    s += svg_text(x0 + span / 2, top - 22, d.faults[f],
                  "text-anchor=\"middle\"");
    for (std::size_t m = 0; m < d.methods.size(); ++m) {
      s += svg_text(x0 + cw * (static_cast<double>(m) + 0.5), top - 6,
                    column_letter(m), "text-anchor=\"middle\"");
    }
  }
  for (std::size_t r = 0; r < lay.shown_features.size(); ++r) {
    s += svg_text(left - 6, top + ch * (static_cast<double>(r) + 0.7),
                  d.features[lay.shown_features[r]], "text-anchor=\"end\"");
  }

  std::size_t idx = 0;
  for (std::size_t f = 0; f < d.faults.size(); ++f) {
    for (std::size_t m = 0; m < d.methods.size(); ++m) {
      const double x = left + cw * static_cast<double>(f * d.methods.size() + m);
      for (std::size_t r = 0; r < lay.shown_features.size(); ++r, ++idx) {
        const HeatCell& c = lay.cells[idx];
        s += "<rect x=\"" + num(x) + "\" y=\"" +
             num(top + ch * static_cast<double>(r)) + "\" width=\"" + num(cw) +
             "\" height=\"" + num(ch) + "\" fill=\"" + hex_color(c.color) +
             "\" stroke=\"#d0d0d0\" stroke-width=\"0.5\"><title>" +
             xml_escape(d.faults[f] + " " + d.methods[m] + " " +
                        d.features[c.feature] + " " + num(c.score)) +
             "</title></rect>\n";
      }
    }
    if (f + 1 < d.faults.size()) {
      const double x = left + cw * static_cast<double>((f + 1) * d.methods.size());
      s += "<line x1=\"" + num(x) + "\" y1=\"" + num(top) + "\" x2=\"" + num(x) +
           "\" y2=\"" + num(top + grid_h) +
           "\" stroke=\"#404040\" stroke-width=\"1\"/>\n";
    }
  }

  // Colour scale.
  const double lx = left + grid_w + 24.0;
  constexpr int kSteps = 10;
  for (int k = 0; k < kSteps; ++k) {
    const double level = 1.0 - static_cast<double>(k) / (kSteps - 1);
    s += "<rect x=\"" + num(lx) + "\" y=\"" + num(top + 10.0 * k) +
         "\" width=\"14\" height=\"10\" fill=\"" + hex_color(heat_rgb(level)) +
         "\"/>\n";
  }
  s += svg_text(lx + 18, top + 8, num(lay.vmax));
  s += svg_text(lx + 18, top + 10.0 * kSteps, "0");
  if (lay.shown_features.empty()) {
    s += svg_text(left, top + 12, "no feature reaches the display threshold");
  }
  s += "</svg>\n";
  return s;
}

inline void emit_heatmap(const HeatmapData& d, const std::filesystem::path& path,
                         const HeatmapOptions& opt = {}) {
  io::write_file_atomic(path, render_heatmap(d, opt));
}

// ------------------------------------------------------------ score table

struct ScoreTable {
  std::vector<std::string> features;
  std::vector<std::string> methods;
  std::vector<std::vector<double>> values;  // [method][feature]
  std::size_t k = kDefaultTopK;

  void validate() const {
    if (features.empty() || methods.empty()) {
      throw InvalidArgument("score table needs features and methods");
    }
    if (values.size() != methods.size()) {
      throw ShapeError("score table: value columns do not match the methods");
    }
    for (const auto& col : values) {
      if (col.size() != features.size()) {
        throw ShapeError("score table: column length does not match the features");
      }
    }
  }
};

inline constexpr std::string_view kTopMarker = "*";

/// One row per feature: feature, one value column per method, then one
/// top-k marker column per method ("*" for members of that method's top-k).
inline std::string render_score_table(const ScoreTable& t, int decimals = 2) {
  t.validate();
  std::vector<std::vector<bool>> marked;
  for (const auto& col : t.values) {
    std::vector<bool> m(t.features.size(), false);
    for (std::size_t i : top_k(col, std::min(t.k, t.features.size()))) m[i] = true;
    marked.push_back(std::move(m));
  }
  std::vector<std::string> header{"feature"};
  for (const auto& m : t.methods) header.push_back(m);
  for (const auto& m : t.methods) header.push_back("top_" + m);
  std::string out = csv::join(header) + "\n";
  for (std::size_t i = 0; i < t.features.size(); ++i) {
    std::vector<std::string> row{t.features[i]};
    for (const auto& col : t.values) row.push_back(csv::format_fixed(col[i], decimals));
    for (const auto& m : marked) row.emplace_back(m[i] ? kTopMarker : "");
    out += csv::join(row) + "\n";
  }
  return out;
}

inline ScoreTable parse_score_table(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw ParseError("score table is empty", 1, 0);
  const auto header = csv::split_record(line);
  if (header.size() < 3 || header[0] != "feature" || (header.size() - 1) % 2) {
    throw ParseError("score table header must be feature, methods, top_ markers",
                     1, 0);
  }
  ScoreTable t;
  const std::size_t nm = (header.size() - 1) / 2;
  for (std::size_t m = 0; m < nm; ++m) {
    t.methods.push_back(header[1 + m]);
    if (header[1 + nm + m] != "top_" + header[1 + m]) {
      throw ParseError("score table: expected column top_" + header[1 + m], 1,
                       2 + nm + m);
    }
  }
  t.values.resize(nm);
  std::vector<std::size_t> marks(nm, 0);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split_record(line);
    if (f.size() != header.size()) {
      throw ParseError("score table: wrong number of fields", row, 0);
    }
    t.features.push_back(f[0]);
    for (std::size_t m = 0; m < nm; ++m) {
      const auto v = csv::parse_double(f[1 + m]);
      if (!v) throw ParseError("score table: bad number '" + f[1 + m] + "'", row, 2 + m);
      t.values[m].push_back(*v);
      if (f[1 + nm + m] == kTopMarker) ++marks[m];
    }
  }
  t.k = marks.empty() ? kDefaultTopK : marks.front();
  return t;
}

inline void emit_score_table(const ScoreTable& t, const std::filesystem::path& path,
                             int decimals = 2) {
  io::write_file_atomic(path, render_score_table(t, decimals));
}

// --------------------------------------------------------- variable plots

struct PlotFrame {
  double x = 0, y = 0, w = 0, h = 0;
};

namespace detail {

inline std::string polyline(std::span<const double> v, const PlotFrame& fr,
                            double lo, double hi, std::string_view color) {
  std::string pts;
  const double n = static_cast<double>(std::max<std::size_t>(v.size(), 2) - 1);
  const double range = hi > lo ? hi - lo : 1.0;
  for (std::size_t t = 0; t < v.size(); ++t) {
    const double x = fr.x + fr.w * static_cast<double>(t) / n;
    const double y = fr.y + fr.h * (1.0 - (v[t] - lo) / range);
    if (t) pts.push_back(' ');
    pts += num(x) + "," + num(y);
  }
  return "<polyline fill=\"none\" stroke=\"" + std::string(color) +
         "\" stroke-width=\"1.2\" points=\"" + pts + "\"/>\n";
}

inline std::string frame(const PlotFrame& fr, double lo, double hi) {
  return "<rect x=\"" + num(fr.x) + "\" y=\"" + num(fr.y) + "\" width=\"" +
         num(fr.w) + "\" height=\"" + num(fr.h) +
         "\" fill=\"none\" stroke=\"#808080\" stroke-width=\"0.8\"/>\n" +
         svg_text(fr.x - 4, fr.y + 4, num(hi, 3), "text-anchor=\"end\"") +
         svg_text(fr.x - 4, fr.y + fr.h, num(lo, 3), "text-anchor=\"end\"");
}

inline std::pair<double, double> bounds(std::span<const double> a,
                                        std::span<const double> b = {}) {
  double lo = INFINITY, hi = -INFINITY;
  for (double v : a) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : b) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace detail

struct VariablePlotOptions {
  std::optional<std::size_t> normal_run;  // default: first fault-free run
  bool deviation_panel = true;
  double width = 640.0;
  double panel_height = 180.0;
};

/// Faulty trace over a normal reference, a dashed onset marker and, when
/// enabled, a |faulty - normal| panel underneath.
inline std::string render_variable_plot(std::string_view title,
                                        std::span<const double> faulty,
                                        std::span<const double> normal,
                                        std::optional<std::size_t> onset,
                                        const VariablePlotOptions& opt = {}) {
  if (faulty.empty()) throw InvalidArgument("variable plot: empty trace");
  const std::size_t n = std::min(faulty.size(), normal.size());
  const double left = 70.0, right = 20.0, top = 40.0, gap = 40.0;
  const PlotFrame main{left, top, opt.width - left - right, opt.panel_height};
  const PlotFrame dev{left, top + opt.panel_height + gap, main.w,
                      opt.panel_height * 0.6};
  const double height =
      (opt.deviation_panel ? dev.y + dev.h : main.y + main.h) + 36.0;

  std::string s = svg_open(opt.width, height);
  s += "<style>text { font-family: sans-serif; font-size: 10px; }</style>\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + num(opt.width, 0) + "\" height=\"" +
       num(height, 0) + "\" fill=\"#ffffff\"/>\n";
  s += svg_text(left, 16, title, "font-size=\"13px\"");
  s += svg_text(left, 30, "faulty run (red) vs normal run (grey)");

  const auto [lo, hi] = detail::bounds(faulty, normal);
  s += detail::frame(main, lo, hi);
  s += detail::polyline(normal, main, lo, hi, "#909090");
  s += detail::polyline(faulty, main, lo, hi, "#c0392b");

  std::vector<double> deviation(n);
  for (std::size_t t = 0; t < n; ++t) deviation[t] = std::abs(faulty[t] - normal[t]);
  PlotFrame dev_scaled = dev;
  if (opt.deviation_panel && n > 0) {
    dev_scaled.w = main.w * static_cast<double>(std::max<std::size_t>(n, 2) - 1) /
                   static_cast<double>(std::max<std::size_t>(faulty.size(), 2) - 1);
    const auto [dlo, dhi] = detail::bounds(deviation);
    s += detail::frame(dev, dlo, dhi);
    s += detail::polyline(deviation, dev_scaled, dlo, dhi, "#2c3e50");
    s += svg_text(left, dev.y - 6, "|faulty - normal|");
  }
  if (onset && *onset < faulty.size()) {
    const double x = main.x + main.w * static_cast<double>(*onset) /
                                  static_cast<double>(std::max<std::size_t>(faulty.size(), 2) - 1);
    const double y1 = main.y;
    const double y2 = opt.deviation_panel ? dev.y + dev.h : main.y + main.h;
    s += "<line x1=\"" + num(x) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x) +
         "\" y2=\"" + num(y2) +
         "\" stroke=\"#000000\" stroke-dasharray=\"4,3\" stroke-width=\"1\"/>\n";
    s += svg_text(x + 3, y1 + 10, "onset " + std::to_string(*onset));
  }
  const double axis_y = (opt.deviation_panel ? dev.y + dev.h : main.y + main.h) + 14;
  s += svg_text(main.x, axis_y, "0");
  s += svg_text(main.x + main.w, axis_y, std::to_string(faulty.size() - 1),
                "text-anchor=\"end\"");
  s += svg_text(main.x + main.w / 2, axis_y + 12, "sample", "text-anchor=\"middle\"");
  s += "</svg>\n";
  return s;
}

inline std::string plot_file_name(std::size_t run, std::string_view channel) {
  std::string safe;
  for (char ch : channel) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' ||
                    ch == '-';
    safe.push_back(ok ? ch : '_');
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "run_%03zu_", run);
  return buf + safe + ".svg";
}

inline std::size_t default_normal_run(const Dataset& ds) {
  for (std::size_t r = 0; r < ds.runs.size(); ++r) {
    if (ds.runs[r].label == kNormalClass && !ds.runs[r].onset) return r;
  }
  throw DataError("dataset has no fault-free run to plot as the normal reference");
}

/// One SVG per channel in `dir`; returns the written paths in channel order.
inline std::vector<std::filesystem::path> emit_variable_plots(
    const Dataset& ds, std::size_t run, std::span<const std::string> channels,
    std::optional<std::size_t> onset, const std::filesystem::path& dir,
    const VariablePlotOptions& opt = {}) {
  if (run >= ds.runs.size()) {
    throw InvalidArgument("run " + std::to_string(run) + " is out of range");
  }
  const std::size_t ref = opt.normal_run ? *opt.normal_run : default_normal_run(ds);
  if (ref >= ds.runs.size()) {
    throw InvalidArgument("normal run " + std::to_string(ref) + " is out of range");
  }
  if (!onset) onset = ds.runs[run].onset;
  std::vector<std::size_t> cols;
  for (const std::string& name : channels) {
    const auto c = ds.channel(name);
    if (!c) throw InvalidArgument("unknown channel '" + name + "'");
    cols.push_back(*c);
  }
  std::vector<std::filesystem::path> written;
  const Tensor& fv = ds.runs[run].values;
  const Tensor& nv = ds.runs[ref].values;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    std::vector<double> faulty(fv.dim(0)), normal(nv.dim(0));
    for (std::size_t t = 0; t < faulty.size(); ++t) faulty[t] = fv.at(t, cols[k]);
    for (std::size_t t = 0; t < normal.size(); ++t) normal[t] = nv.at(t, cols[k]);
    const std::string title = channels[k] + " (" + ds.runs[run].scenario + ")";
    const auto path = dir / plot_file_name(run, channels[k]);
    io::write_file_atomic(path,
                          render_variable_plot(title, faulty, normal, onset, opt));
    written.push_back(path);
  }
  return written;
}

}  // namespace faultlens::report
