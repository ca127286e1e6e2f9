#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fedmem/error.hpp"
#include "fedmem/metrics.hpp"

namespace fedmem {

/// Groups runs across seeds: a sweep tag "axis=value@..." keeps the
/// "axis=value" part, a plain run id keeps its config hash (the part before
/// the '-').
inline std::string setting_of(const std::string& run_id) {
  if (auto at = run_id.find('@'); at != std::string::npos) return run_id.substr(0, at);
  if (auto dash = run_id.find('-'); dash != std::string::npos) return run_id.substr(0, dash);
  return run_id;
}

struct Stat {
  std::size_t n = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  // sample std; NaN for n < 2
};

inline Stat describe(const std::vector<double>& xs) {
  Stat s;
  s.n = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

/// Per (run, strategy) numbers at the run's final round.
struct FinalScores {
  std::string setting;
  std::string strategy;
  std::uint64_t seed = 0;
  double client_mean = std::numeric_limits<double>::quiet_NaN();   // mean per-client accuracy
  double global = std::numeric_limits<double>::quiet_NaN();        // global-split accuracy
  double missing = std::numeric_limits<double>::quiet_NaN();       // mean missing-class accuracy
};

inline std::vector<FinalScores> final_scores(const std::vector<MetricsRecord>& records) {
  std::map<std::string, int> last_round;
  for (const auto& r : records) last_round[r.run_id] = std::max(last_round[r.run_id], r.round);
  struct Acc {
    FinalScores f;
    std::vector<double> clients, missing;
  };
  std::map<std::pair<std::string, std::string>, Acc> acc;
  for (const auto& r : records) {
    if (r.round != last_round[r.run_id] || r.split != "test") continue;
    auto& a = acc[{r.run_id, r.strategy}];
    a.f.setting = setting_of(r.run_id);
    a.f.strategy = r.strategy;
    a.f.seed = r.seed;
    if (r.absent()) continue;
    if (r.metric == "accuracy") {
      if (r.client_id == kGlobalClient) a.f.global = r.value;
      else a.clients.push_back(r.value);
    } else if (r.metric == "missing_class_accuracy") {
      a.missing.push_back(r.value);
    }
  }
  std::vector<FinalScores> out;
  for (auto& [key, a] : acc) {
    a.f.client_mean = describe(a.clients).mean;
    a.f.missing = describe(a.missing).mean;
    out.push_back(a.f);
  }
  return out;
}

struct SummaryRow {
  std::string setting;
  std::string strategy;
  Stat client;
  Stat global;
  Stat missing;
};

inline std::vector<SummaryRow> summarize(const std::vector<MetricsRecord>& records) {
  std::map<std::pair<std::string, std::string>, std::array<std::vector<double>, 3>> groups;
  for (const auto& f : final_scores(records)) {
    auto& g = groups[{f.setting, f.strategy}];
    if (!std::isnan(f.client_mean)) g[0].push_back(f.client_mean);
    if (!std::isnan(f.global)) g[1].push_back(f.global);
    if (!std::isnan(f.missing)) g[2].push_back(f.missing);
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, g] : groups) out.push_back({key.first, key.second, describe(g[0]), describe(g[1]), describe(g[2])});
  return out;
}

/// Mean global accuracy per round over seeds, per (setting, strategy).
using Curves = std::map<std::string, std::map<std::string, std::map<int, double>>>;

inline Curves accuracy_curves(const std::vector<MetricsRecord>& records) {
  std::map<std::string, std::map<std::string, std::map<int, std::vector<double>>>> raw;
  for (const auto& r : records)
    if (r.client_id == kGlobalClient && r.metric == "accuracy" && r.split == "test" && !r.absent())
      raw[setting_of(r.run_id)][r.strategy][r.round].push_back(r.value);
  Curves out;
  for (const auto& [setting, by_strategy] : raw)
    for (const auto& [strategy, by_round] : by_strategy)
      for (const auto& [round, xs] : by_round) out[setting][strategy][round] = describe(xs).mean;
  return out;
}

namespace detail {

inline std::string pct(const Stat& s) {
  if (s.n == 0) return "absent";
  char buf[64];
  if (s.n < 2) std::snprintf(buf, sizeof buf, "%.2f", 100.0 * s.mean);
  else std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * s.mean, 100.0 * s.std);
  return buf;
}

inline std::string num(double v) {
  if (std::isnan(v)) return kAbsent;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string file_stem(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
  return out;
}

inline std::string xml_escape(const std::string& s) {
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

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
  return colors[i % 7];
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace detail

/// Line chart of accuracy (0..1) against round, one polyline per strategy.
inline std::string render_curves_svg(const std::string& title, const std::map<std::string, std::map<int, double>>& series) {
  const double W = 640, H = 400, left = 60, right = 150, top = 40, bottom = 50;
  int max_round = 1;
  for (const auto& [name, pts] : series)
    if (!pts.empty()) max_round = std::max(max_round, pts.rbegin()->first);
  auto sx = [&](int r) { return left + (W - left - right) * static_cast<double>(r) / max_round; };
  auto sy = [&](double a) { return top + (H - top - bottom) * (1.0 - a); };
  std::ostringstream os;
  char buf[256];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
     << detail::xml_escape(title) << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double a = i / 5.0;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">%.0f%%</text>\n",
                  left, sy(a), W - right, sy(a), left - 6, sy(a) + 4, 100 * a);
    os << buf;
  }
  const int ticks = std::min(max_round, 10);
  for (int i = 0; i <= ticks; ++i) {
    const int r = static_cast<int>(std::lround(static_cast<double>(i) * max_round / ticks));
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">%d</text>\n",
                  sx(r), H - bottom + 16, r);
    os << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">round</text>\n",
                (left + W - right) / 2, H - 12);
  os << buf;
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << W - left - right << "\" height=\"" << H - top - bottom
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  std::size_t idx = 0;
  for (const auto& [name, pts] : series) {
    std::string points;
    for (const auto& [r, a] : pts) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", sx(r), sy(a));
      points += buf;
    }
    if (!points.empty()) points.pop_back();
    os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << detail::palette(idx) << "\" points=\"" << points
       << "\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" fill=\"%s\">%s</text>\n",
                  W - right + 10, top + 16.0 * static_cast<double>(idx + 1), detail::palette(idx),
                  detail::xml_escape(name).c_str());
    os << buf;
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

/// Reads every CSV, then writes summary.md, summary.csv, dropout.md and one
/// curves_<setting>.svg per setting into `dir`. Returns the written paths.
inline std::vector<std::filesystem::path> write_report(const std::vector<std::filesystem::path>& csvs,
                                                       const std::filesystem::path& dir) {
  if (csvs.empty()) throw ReportError("report needs at least one metrics CSV");
  std::vector<MetricsRecord> records;
  for (const auto& p : csvs) {
    auto rs = read_metrics_csv(p);
    records.insert(records.end(), rs.begin(), rs.end());
  }
  sort_canonical(records);
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;

  const auto rows = summarize(records);
  std::ostringstream md;
  md << "# Final-round accuracy (%)\n\n";
  md << "Mean ± sample std over seeds; n is the number of seeds.\n\n";
  md << "| setting | strategy | n | per-client mean | global |\n|---|---|---|---|---|\n";
  for (const auto& r : rows)
    md << "| " << r.setting << " | " << r.strategy << " | " << std::max(r.client.n, r.global.n) << " | "
       << detail::pct(r.client) << " | " << detail::pct(r.global) << " |\n";
  detail::write_text(dir / "summary.md", md.str());
  written.push_back(dir / "summary.md");

  std::ostringstream csv;
  csv << "setting,strategy,n,client_mean,client_std,global_n,global_mean,global_std,missing_n,missing_mean,missing_std\n";
  for (const auto& r : rows)
    csv << r.setting << ',' << r.strategy << ',' << r.client.n << ',' << detail::num(r.client.mean) << ','
        << detail::num(r.client.std) << ',' << r.global.n << ',' << detail::num(r.global.mean) << ','
        << detail::num(r.global.std) << ',' << r.missing.n << ',' << detail::num(r.missing.mean) << ','
        << detail::num(r.missing.std) << '\n';
  detail::write_text(dir / "summary.csv", csv.str());
  written.push_back(dir / "summary.csv");

  std::ostringstream drop;
  drop << "# Dropout clients: missing-class accuracy (%)\n\n";
  bool any = false;
  for (const auto& r : rows) {
    if (r.missing.n == 0) continue;
    if (!any) drop << "| setting | strategy | n | missing-class accuracy |\n|---|---|---|---|\n";
    any = true;
    drop << "| " << r.setting << " | " << r.strategy << " | " << r.missing.n << " | " << detail::pct(r.missing) << " |\n";
  }
  if (!any) drop << "No dropout clients in these runs.\n";
  detail::write_text(dir / "dropout.md", drop.str());
  written.push_back(dir / "dropout.md");

  for (const auto& [setting, series] : accuracy_curves(records)) {
    const auto path = dir / ("curves_" + detail::file_stem(setting) + ".svg");
    detail::write_text(path, render_curves_svg("global test accuracy, " + setting, series));
    written.push_back(path);
  }
  return written;
}

}  // namespace fedmem
