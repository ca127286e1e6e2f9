#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedmem/error.hpp"
#include "fedmem/rng.hpp"
#include "fedmem/tensor.hpp"

namespace fedmem {

struct LabelHistogram {
  std::vector<std::size_t> counts;

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  std::vector<int> present_classes() const {
    std::vector<int> out;
    for (std::size_t c = 0; c < counts.size(); ++c)
      if (counts[c] > 0) out.push_back(static_cast<int>(c));
    return out;
  }
};

/// Feature matrix with integer labels in [0, class_count).
struct Dataset {
  Tensor features;  // [n x d]
  std::vector<int> labels;
  int class_count = 0;
  // Present only for synthetically generated data.
  std::optional<Tensor> class_means;  // [C x d]

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  bool empty() const { return labels.empty(); }

  LabelHistogram histogram() const {
    LabelHistogram h;
    h.counts.assign(static_cast<std::size_t>(class_count), 0);
    for (int y : labels) h.counts[static_cast<std::size_t>(y)] += 1;
    return h;
  }

  // Rows in the given order; class metadata carried over.
  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.features = rows.empty() ? Tensor::matrix(0, dim()) : features.gather_rows(rows);
    out.labels.reserve(rows.size());
    for (auto r : rows) out.labels.push_back(labels[r]);
    out.class_count = class_count;
    out.class_means = class_means;
    return out;
  }

  std::vector<std::size_t> rows_of_class(int c) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) out.push_back(i);
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Gaussian blobs around class means drawn uniformly from [-5, 5]^d.
///
/// Means are re-drawn until every pair is at least 2*spread apart (the bound
/// is relaxed by 5% after every 1000 failed layouts so crowded settings
/// still terminate). Samples are mean + N(0, spread^2) noise, grouped by
/// class in label order.
inline Dataset make_blobs(int classes, int dim, int n_per_class, double spread, std::uint64_t layout_seed,
                          std::uint64_t sample_seed) {
  if (classes < 2) throw ConfigError("make_blobs needs at least 2 classes, got " + std::to_string(classes));
  if (dim < 2) throw ConfigError("make_blobs needs dimension >= 2, got " + std::to_string(dim));
  if (n_per_class < 10) throw ConfigError("make_blobs needs n_per_class >= 10, got " + std::to_string(n_per_class));
  if (!(spread > 0.0)) throw ConfigError("make_blobs spread must be positive");

  const auto C = static_cast<std::size_t>(classes);
  const auto d = static_cast<std::size_t>(dim);
  Tensor means = Tensor::matrix(C, d);
  Rng layout(layout_seed);
  double min_dist = 2.0 * spread;
  for (int attempt = 1;; ++attempt) {
    for (double& m : means.values()) m = layout.uniform(-5.0, 5.0);
    bool ok = true;
    for (std::size_t a = 0; a < C && ok; ++a)
      for (std::size_t b = a + 1; b < C && ok; ++b) {
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) sq += (means(a, k) - means(b, k)) * (means(a, k) - means(b, k));
        ok = std::sqrt(sq) >= min_dist;
      }
    if (ok) break;
    if (attempt % 1000 == 0) min_dist *= 0.95;
  }

  Dataset ds;
  ds.class_count = classes;
  ds.features = Tensor::matrix(C * static_cast<std::size_t>(n_per_class), d);
  ds.labels.reserve(ds.features.rows());
  Rng sampler(sample_seed);
  std::size_t r = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (int i = 0; i < n_per_class; ++i, ++r) {
      for (std::size_t k = 0; k < d; ++k) ds.features(r, k) = means(c, k) + spread * sampler.normal();
      ds.labels.push_back(static_cast<int>(c));
    }
  ds.class_means = std::move(means);
  return ds;
}

/// Reads a comma-separated file whose last column is an integer label.
/// Lines starting with '#' are headers/comments; blank lines are skipped.
inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() < 2) throw ParseError(where + ": expected at least one feature and a label");
    if (width == 0) width = cells.size() - 1;
    if (cells.size() - 1 != width)
      throw ParseError(where + ": expected " + std::to_string(width + 1) + " columns, found " +
                       std::to_string(cells.size()));
    for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[i], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cells[i].size() || !std::isfinite(v))
        throw ParseError(where + ": column " + std::to_string(i + 1) + " is not a finite number: '" + cells[i] + "'");
      values.push_back(v);
    }
    const std::string& lab = cells.back();
    std::size_t used = 0;
    long label = -1;
    try {
      label = std::stol(lab, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != lab.size() || label < 0)
      throw ParseError(where + ": label '" + lab + "' is not a nonnegative integer");
    labels.push_back(static_cast<int>(label));
  }
  if (labels.empty()) throw ParseError(path.string() + ": no data rows");
  Dataset ds;
  ds.features = Tensor({labels.size(), width}, std::move(values));
  ds.labels = std::move(labels);
  ds.class_count = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

inline void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "# " << ds.dim() << " features, label\n";
  char buf[40];
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (double v : ds.features.row(r)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ',';
    }
    out << ds.labels[r] << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

struct TrainTestSplit {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_rows;  // row ids into the source dataset, ascending
  std::vector<std::size_t> test_rows;
  std::vector<std::string> warnings;
};

/// Stratified split: each class with at least two rows contributes
/// round-half-up(count * test_fraction) test rows, clamped to [1, count - 1].
/// Single-row classes stay in train and produce a warning.
inline TrainTestSplit split_train_test(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in (0, 1), got " + std::to_string(test_fraction));
  TrainTestSplit out;
  Rng rng(seed);
  for (int c = 0; c < ds.class_count; ++c) {
    auto rows = ds.rows_of_class(c);
    const std::size_t n = rows.size();
    if (n == 0) continue;
    if (n == 1) {
      out.warnings.push_back("class " + std::to_string(c) + " has a single sample; kept in train");
      out.train_rows.push_back(rows[0]);
      continue;
    }
    auto take = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_fraction + 0.5));
    take = std::clamp<std::size_t>(take, 1, n - 1);
    rng.shuffle(rows);
    out.test_rows.insert(out.test_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
    out.train_rows.insert(out.train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end());
  }
  std::sort(out.train_rows.begin(), out.train_rows.end());
  std::sort(out.test_rows.begin(), out.test_rows.end());
  out.train = ds.subset(out.train_rows);
  out.test = ds.subset(out.test_rows);
  return out;
}

}  // namespace fedmem
