#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fedmem/error.hpp"

namespace fedmem {

inline constexpr const char* kMetricsHeader = "run_id,seed,round,strategy,client_id,split,metric,value";
inline constexpr const char* kAbsent = "absent";
inline constexpr const char* kGlobalClient = "global";

/// One observation. `value` is NaN when the quantity is absent (for example
/// the accuracy of a class with no test rows).
struct MetricsRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  int round = 0;
  std::string strategy;
  std::string client_id;  // decimal client id or "global"
  std::string split;      // "train" or "test"
  std::string metric;
  double value = std::numeric_limits<double>::quiet_NaN();

  bool absent() const { return std::isnan(value); }
  friend bool operator==(const MetricsRecord& a, const MetricsRecord& b) {
    return a.run_id == b.run_id && a.seed == b.seed && a.round == b.round && a.strategy == b.strategy &&
           a.client_id == b.client_id && a.split == b.split && a.metric == b.metric &&
           (a.value == b.value || (a.absent() && b.absent()));
  }
};

inline std::string format_value(double v) {
  if (std::isnan(v)) return kAbsent;
  if (!std::isfinite(v)) throw NumericError("non-finite metric value");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {
// "global" sorts before numeric ids; numeric ids sort numerically.
inline std::pair<long, std::string> client_key(const std::string& id) {
  if (id == kGlobalClient) return {-1, id};
  if (!id.empty() && std::all_of(id.begin(), id.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return {std::stol(id), ""};
  return {std::numeric_limits<long>::max(), id};
}
}  // namespace detail

/// Canonical record order: run_id, round, client_id, metric, then strategy
/// and split so that the order is total.
inline void sort_canonical(std::vector<MetricsRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const MetricsRecord& a, const MetricsRecord& b) {
    return std::make_tuple(a.run_id, a.seed, a.round, detail::client_key(a.client_id), a.metric, a.strategy, a.split) <
           std::make_tuple(b.run_id, b.seed, b.round, detail::client_key(b.client_id), b.metric, b.strategy, b.split);
  });
}

inline std::string to_csv_line(const MetricsRecord& r) {
  std::ostringstream os;
  os << r.run_id << ',' << r.seed << ',' << r.round << ',' << r.strategy << ',' << r.client_id << ',' << r.split << ','
     << r.metric << ',' << format_value(r.value);
  return os.str();
}

inline void write_metrics_csv(std::vector<MetricsRecord> records, const std::filesystem::path& path) {
  sort_canonical(records);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << kMetricsHeader << '\n';
  for (const auto& r : records) out << to_csv_line(r) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ReportError(path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw ReportError(path.string() + " has header '" + line + "', expected '" + kMetricsHeader + "'");
  std::vector<MetricsRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8)
      throw ReportError(path.string() + ":" + std::to_string(line_no) + ": expected 8 columns, found " +
                        std::to_string(cells.size()));
    MetricsRecord r;
    try {
      r.run_id = cells[0];
      r.seed = std::stoull(cells[1]);
      r.round = std::stoi(cells[2]);
      r.strategy = cells[3];
      r.client_id = cells[4];
      r.split = cells[5];
      r.metric = cells[6];
      r.value = cells[7] == kAbsent ? std::numeric_limits<double>::quiet_NaN() : std::stod(cells[7]);
    } catch (const std::exception&) {
      throw ReportError(path.string() + ":" + std::to_string(line_no) + ": malformed record");
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Thread-safe collector; every producer appends here and the final file is
/// written in canonical order, so the order of appends never shows up.
class MetricsSink {
 public:
  void append(MetricsRecord r) {
    std::lock_guard lock(mutex_);
    records_.push_back(std::move(r));
  }
  void append(std::vector<MetricsRecord> rs) {
    std::lock_guard lock(mutex_);
    for (auto& r : rs) records_.push_back(std::move(r));
  }
  std::vector<MetricsRecord> take() {
    std::lock_guard lock(mutex_);
    auto out = std::move(records_);
    records_.clear();
    sort_canonical(out);
    return out;
  }

 private:
  std::mutex mutex_;
  std::vector<MetricsRecord> records_;
};

}  // namespace fedmem
