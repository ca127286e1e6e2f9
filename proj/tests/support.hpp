#pragma once

// Small fixtures shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fedmem/fedmem.hpp"

namespace support {

inline fedmem::Tensor random_matrix(std::size_t rows, std::size_t cols, fedmem::Rng& rng, double scale = 1.0) {
  fedmem::Tensor t = fedmem::Tensor::matrix(rows, cols);
  for (double& x : t.values()) x = scale * rng.normal();
  return t;
}

inline std::vector<int> random_labels(std::size_t n, int classes, fedmem::Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
  return y;
}

/// Largest |analytic - numeric| / max(1e-6, |analytic| + |numeric|) over all
/// parameters, with central differences of step h.
inline double max_relative_gradient_error(const fedmem::ParamSet& params, const fedmem::Tensor& x,
                                          std::span<const int> labels, const fedmem::LossSpec& spec,
                                          double h = 1e-5) {
  const auto res = fedmem::backward(params, x, labels, spec);
  const auto analytic = res.grads.flatten();
  fedmem::ParamSet probe = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double keep = probe.flat(i);
    probe.flat(i) = keep + h;
    const double up = fedmem::evaluate_loss(probe, x, labels, spec);
    probe.flat(i) = keep - h;
    const double down = fedmem::evaluate_loss(probe, x, labels, spec);
    probe.flat(i) = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max(1e-6, std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

/// Small dataset with one row per (class, copy), features offset by class.
inline fedmem::Dataset toy_dataset(int classes, int per_class, int dim, std::uint64_t seed) {
  fedmem::Rng rng(seed);
  fedmem::Dataset ds;
  ds.class_count = classes;
  ds.features = fedmem::Tensor::matrix(static_cast<std::size_t>(classes * per_class), static_cast<std::size_t>(dim));
  std::size_t r = 0;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i, ++r) {
      for (int k = 0; k < dim; ++k) ds.features(r, static_cast<std::size_t>(k)) = (k == c % dim ? 4.0 : 0.0) + rng.normal();
      ds.labels.push_back(c);
    }
  return ds;
}

}  // namespace support
