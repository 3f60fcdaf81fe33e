#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedcon/experiment.hpp"
#include "fedcon/metrics.hpp"

namespace fedcon {

struct Curve {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

namespace svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '<') out += "&lt;";
    else if (ch == '>') out += "&gt;";
    else if (ch == '&') out += "&amp;";
    else out += ch;
  }
  return out;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace svg

/// Line chart with axes, five ticks per axis and a legend.
inline std::string render_svg(const std::vector<Curve>& curves, const std::string& title, const std::string& x_label,
                              const std::string& y_label) {
  const double W = 720, H = 440, L = 70, R = 170, T = 40, Bm = 55;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& c : curves)
    for (auto [x, y] : c.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1e-3;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - Bm - (y - y0) / (y1 - y0) * (H - T - Bm); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + svg::num(W) + "\" height=\"" + svg::num(H) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + svg::num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + svg::escape(title) +
       "</text>\n";
  s += "<line x1=\"" + svg::num(L) + "\" y1=\"" + svg::num(H - Bm) + "\" x2=\"" + svg::num(W - R) + "\" y2=\"" +
       svg::num(H - Bm) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + svg::num(L) + "\" y1=\"" + svg::num(T) + "\" x2=\"" + svg::num(L) + "\" y2=\"" +
       svg::num(H - Bm) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    s += "<text x=\"" + svg::num(px(xv)) + "\" y=\"" + svg::num(H - Bm + 18) + "\" text-anchor=\"middle\">" +
         svg::num(xv) + "</text>\n";
    s += "<text x=\"" + svg::num(L - 6) + "\" y=\"" + svg::num(py(yv) + 4) + "\" text-anchor=\"end\">" +
         svg::num(yv) + "</text>\n";
    s += "<line x1=\"" + svg::num(L) + "\" y1=\"" + svg::num(py(yv)) + "\" x2=\"" + svg::num(W - R) + "\" y2=\"" +
         svg::num(py(yv)) + "\" stroke=\"#eeeeee\"/>\n";
  }
  s += "<text x=\"" + svg::num((L + W - R) / 2) + "\" y=\"" + svg::num(H - 12) + "\" text-anchor=\"middle\">" +
       svg::escape(x_label) + "</text>\n";
  s += "<text transform=\"translate(16," + svg::num((T + H - Bm) / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       svg::escape(y_label) + "</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const char* colour = svg::kPalette[k % std::size(svg::kPalette)];
    std::string pts;
    for (auto [x, y] : curves[k].points) pts += svg::num(px(x)) + "," + svg::num(py(y)) + " ";
    s += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.8\" points=\"" + pts +
         "\"/>\n";
    const double ly = T + 10 + 18.0 * double(k);
    s += "<line x1=\"" + svg::num(W - R + 12) + "\" y1=\"" + svg::num(ly) + "\" x2=\"" + svg::num(W - R + 32) +
         "\" y2=\"" + svg::num(ly) + "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + svg::num(W - R + 38) + "\" y=\"" + svg::num(ly + 4) + "\">" + svg::escape(curves[k].label) +
         "</text>\n";
  }
  return s + "</svg>\n";
}

inline Curve metric_curve(const std::vector<MetricRow>& rows, std::string_view kind, std::string label) {
  Curve c{std::move(label), {}};
  for (auto [round, v] : series(rows, kind)) c.points.emplace_back(double(round), v);
  return c;
}

struct PlotOutcome {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
};

/// Plots a run directory (accuracy and server loss curves) or a sweep
/// directory (one accuracy curve per sub-run). Writes nothing for series
/// without data and reports a warning instead.
inline PlotOutcome emit_plots(const std::filesystem::path& source, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  PlotOutcome outcome;
  std::vector<std::pair<std::string, std::vector<MetricRow>>> runs;
  if (fs::is_regular_file(source)) {
    runs.emplace_back(source.parent_path().filename().string(), read_metrics(source));
  } else if (fs::exists(source / kMetricsFile)) {
    runs.emplace_back(source.filename().string(), read_metrics(source / kMetricsFile));
  } else if (fs::is_directory(source)) {
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(source))
      if (e.is_directory() && fs::exists(e.path() / kMetricsFile)) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& d : subdirs) runs.emplace_back(d.filename().string(), read_metrics(d / kMetricsFile));
  }
  if (runs.empty()) throw MetricsError("no metrics found under " + source.string());

  auto emit = [&](const std::string& kind, const std::string& file, const std::string& title, const std::string& y) {
    std::vector<Curve> curves;
    for (const auto& [label, rows] : runs) {
      auto c = metric_curve(rows, kind, label);
      if (!c.points.empty()) curves.push_back(std::move(c));
    }
    if (curves.empty()) {
      outcome.warnings.push_back("no '" + kind + "' rows; " + file + " not written");
      return;
    }
    fs::create_directories(out_dir);
    write_text(out_dir / file, render_svg(curves, title, "round", y));
    outcome.written.push_back(out_dir / file);
  };
  emit("test_accuracy", "accuracy.svg", "Test accuracy", "accuracy");
  emit("server_ce", "server_ce.svg", "Server cross-entropy", "loss");
  emit("client_loss", "client_loss.svg", "Client regression loss", "loss");
  return outcome;
}

}  // namespace fedcon
