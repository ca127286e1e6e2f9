#pragma once

// Straight-line scalar re-implementations used as test oracles. Nothing in
// here calls into the library's numerics; only plain loops over doubles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <vector>

#include "fedmem/param_set.hpp"
#include "fedmem/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const fedmem::Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

inline Matrix mlp_forward(const fedmem::ParamSet& p, Matrix x) {
  for (const auto& layer : p.layers()) {
    Matrix y(x.size(), std::vector<double>(layer.out_width()));
    for (std::size_t r = 0; r < x.size(); ++r)
      for (std::size_t o = 0; o < layer.out_width(); ++o) {
        double s = layer.bias[o];
        for (std::size_t i = 0; i < layer.in_width(); ++i) s += layer.weight(o, i) * x[r][i];
        if (layer.activation == fedmem::Activation::relu && s < 0.0) s = 0.0;
        y[r][o] = s;
      }
    x = std::move(y);
  }
  return x;
}

inline double log_softmax_at(const std::vector<double>& z, int y) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  return z[static_cast<std::size_t>(y)] - mx - std::log(s);
}

inline double mean_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s -= log_softmax_at(logits[i], labels[i]);
  return s / static_cast<double>(logits.size());
}

/// L_cls = (1/n) sum_i sum_k alpha[k][y_i] * CE_k(x_i, y_i), clients with
/// alpha = 0 for the label skipped.
inline double eq_cls(const Matrix& x, const std::vector<int>& labels, const std::vector<const fedmem::ParamSet*>& models,
                     const std::vector<std::vector<double>>& alpha) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < models.size(); ++k) {
      const double a = alpha[k][static_cast<std::size_t>(labels[i])];
      if (a == 0.0) continue;
      const auto z = mlp_forward(*models[k], {x[i]})[0];
      s += a * -log_softmax_at(z, labels[i]);
    }
  return s / static_cast<double>(x.size());
}

inline double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// -(1/n) sum_i sum_{j != i} |x_i - x_j| / (n - 1), over ordered pairs.
inline double eq_div_one_class(const Matrix& x) {
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j)
      if (i != j) s += dist(x[i], x[j]) / (n - 1.0);
  return -s / n;
}

inline double eq_div(const Matrix& x, const std::vector<int>& labels) {
  std::map<int, Matrix> by;
  for (std::size_t i = 0; i < x.size(); ++i) by[labels[i]].push_back(x[i]);
  double s = 0.0;
  int used = 0;
  for (const auto& [y, rows] : by) {
    if (rows.size() < 2) continue;
    s += eq_div_one_class(rows);
    ++used;
  }
  return used ? s / used : 0.0;
}

inline double eq_generator(double cls, double div, double lambda) { return lambda * cls + (1.0 - lambda) * div; }

/// sum_k (w_k / sum w) theta_k on flattened parameters.
inline std::vector<double> weighted_average(const std::vector<std::vector<double>>& thetas, const std::vector<double>& w) {
  double total = 0.0;
  for (double x : w) total += x;
  std::vector<double> out(thetas[0].size(), 0.0);
  for (std::size_t k = 0; k < thetas.size(); ++k)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] / total * thetas[k][i];
  return out;
}

}  // namespace oracle
