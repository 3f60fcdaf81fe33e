#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedcon/config.hpp"
#include "fedcon/federation.hpp"

namespace fedcon {

class MetricsError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kMetricsHeader = "round,kind,client_id,value";

/// One CSV row. Server and evaluation rows leave client_id empty.
struct MetricRow {
  std::uint64_t round = 0;
  std::string kind;
  std::optional<std::size_t> client_id;
  double value = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

inline std::vector<MetricRow> report_rows(const RoundReport& r) {
  std::vector<MetricRow> rows;
  rows.push_back({r.round, "server_ce", std::nullopt, r.server.mean_ce});
  rows.push_back({r.round, "server_consistency", std::nullopt, r.server.mean_consistency});
  rows.push_back({r.round, "server_loss", std::nullopt, r.server.mean_total});
  for (std::size_t i = 0; i < r.selected.size(); ++i)
    rows.push_back({r.round, "client_loss", r.selected[i], r.client_loss[i]});
  if (r.accuracy) rows.push_back({r.round, "test_accuracy", std::nullopt, *r.accuracy});
  return rows;
}

inline std::string format_row(const MetricRow& row) {
  std::string s = std::to_string(row.round) + "," + row.kind + ",";
  if (row.client_id) s += std::to_string(*row.client_id);
  return s + "," + cfg::format_real(row.value);
}

inline std::vector<MetricRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MetricsError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || cfg::trim(line) != kMetricsHeader)
    throw MetricsError(path.string() + ": missing header '" + kMetricsHeader + "'");
  std::vector<MetricRow> rows;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (cfg::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() == 3 && line.back() == ',') f.emplace_back();
    if (f.size() != 4) throw MetricsError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      MetricRow row;
      row.round = cfg::parse_count("round", f[0]);
      row.kind = f[1];
      if (!f[2].empty()) row.client_id = cfg::parse_count("client_id", f[2]);
      row.value = cfg::parse_real("value", f[3]);
      rows.push_back(std::move(row));
    } catch (const ConfigError& e) {
      throw MetricsError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

/// Appends rows and flushes once per round. Opening with `keep_through` keeps
/// only rows of rounds <= keep_through from an existing file (used on resume).
class MetricsWriter {
public:
  explicit MetricsWriter(const std::filesystem::path& path, std::optional<std::uint64_t> keep_through = std::nullopt)
      : path_(path) {
    std::vector<MetricRow> kept;
    if (keep_through && std::filesystem::exists(path))
      for (auto& row : read_metrics(path))
        if (row.round <= *keep_through) kept.push_back(std::move(row));
    out_.open(path, std::ios::trunc);
    if (!out_) throw MetricsError("cannot write " + path.string());
    out_ << kMetricsHeader << '\n';
    for (const auto& row : kept) out_ << format_row(row) << '\n';
    out_.flush();
  }

  void write_round(const RoundReport& report) {
    for (const auto& row : report_rows(report)) out_ << format_row(row) << '\n';
    out_.flush();
    if (!out_) throw MetricsError("failed writing " + path_.string());
  }

private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// (round, value) pairs of one kind, in file order.
inline std::vector<std::pair<std::uint64_t, double>> series(const std::vector<MetricRow>& rows, std::string_view kind) {
  std::vector<std::pair<std::uint64_t, double>> out;
  for (const auto& r : rows)
    if (r.kind == kind) out.emplace_back(r.round, r.value);
  return out;
}

}  // namespace fedcon
