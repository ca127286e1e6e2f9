#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fedmem/error.hpp"
#include "fedmem/param_set.hpp"
#include "fedmem/tensor.hpp"

namespace fedmem {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstRowVecMap = Eigen::Map<const Eigen::RowVectorXd>;

inline MatMap as_mat(Tensor& t) { return MatMap(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
inline ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}

}  // namespace detail

/// Activations recorded during a forward pass: pre-activations and outputs
/// of every layer, plus the input.
struct ForwardCache {
  Tensor input;
  std::vector<Tensor> pre;   // z_l
  std::vector<Tensor> post;  // h_l = act(z_l); post.back() is the logits
  const Tensor& output() const { return post.back(); }
};

inline void check_input_width(const ParamSet& params, const Tensor& batch) {
  if (params.empty()) throw ConfigError("forward through an empty parameter set");
  if (batch.rank() != 2 || batch.cols() != params.input_width()) {
    throw ConfigError("batch has " + std::to_string(batch.cols()) + " columns but the first layer expects " +
                      std::to_string(params.input_width()));
  }
}

inline ForwardCache forward_cached(const ParamSet& params, const Tensor& batch) {
  check_input_width(params, batch);
  ForwardCache cache;
  cache.input = batch;
  const Tensor* h = &cache.input;
  for (const Layer& layer : params.layers()) {
    Tensor z = Tensor::matrix(h->rows(), layer.out_width());
    auto zm = detail::as_mat(z);
    zm.noalias() = detail::as_mat(*h) * detail::as_mat(layer.weight).transpose();
    zm.rowwise() += detail::ConstRowVecMap(layer.bias.data(), Eigen::Index(layer.bias.size()));
    Tensor a = z;
    if (layer.activation == Activation::relu)
      for (double& x : a.values()) x = x > 0.0 ? x : 0.0;
    cache.pre.push_back(std::move(z));
    cache.post.push_back(std::move(a));
    h = &cache.post.back();
  }
  return cache;
}

/// Raw logits of the network on a batch [n x d].
inline Tensor forward(const ParamSet& params, const Tensor& batch) {
  check_input_width(params, batch);
  Tensor h = batch;
  for (const Layer& layer : params.layers()) {
    Tensor z = Tensor::matrix(h.rows(), layer.out_width());
    auto zm = detail::as_mat(z);
    zm.noalias() = detail::as_mat(h) * detail::as_mat(layer.weight).transpose();
    zm.rowwise() += detail::ConstRowVecMap(layer.bias.data(), Eigen::Index(layer.bias.size()));
    if (layer.activation == Activation::relu)
      for (double& x : z.values()) x = x > 0.0 ? x : 0.0;
    h = std::move(z);
  }
  return h;
}

/// Back-propagates d(loss)/d(output) through a cached forward pass.
/// Parameter gradients are written to `grads` when non-null; the gradient
/// with respect to the input batch is returned when `want_input` is set.
inline Tensor backpropagate(const ParamSet& params, const ForwardCache& cache, Tensor d_out, Gradients* grads,
                            bool want_input) {
  Tensor delta = std::move(d_out);
  for (std::size_t li = params.depth(); li-- > 0;) {
    const Layer& layer = params.layer(li);
    if (layer.activation == Activation::relu) {
      const Tensor& z = cache.pre[li];
      for (std::size_t i = 0; i < delta.size(); ++i)
        if (z[i] <= 0.0) delta[i] = 0.0;
    }
    const Tensor& h_in = li == 0 ? cache.input : cache.post[li - 1];
    auto dm = detail::as_mat(delta);
    if (grads != nullptr) {
      auto gw = detail::as_mat(grads->layer(li).weight);
      gw.noalias() = dm.transpose() * detail::as_mat(h_in);
      Eigen::Map<Eigen::RowVectorXd>(grads->layer(li).bias.data(), Eigen::Index(layer.out_width())) =
          dm.colwise().sum();
    }
    if (li == 0 && !want_input) break;
    Tensor prev = Tensor::matrix(delta.rows(), layer.in_width());
    detail::as_mat(prev).noalias() = dm * detail::as_mat(layer.weight);
    delta = std::move(prev);
  }
  return delta;
}

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad_logits;
};

inline void check_labels(std::span<const int> labels, std::size_t n, std::size_t classes) {
  if (labels.size() != n)
    throw InputError("label count " + std::to_string(labels.size()) + " differs from row count " + std::to_string(n));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

/// Row-wise softmax probabilities.
inline Tensor softmax(const Tensor& logits) {
  Tensor p = logits;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& x : row) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (double& x : row) x /= sum;
  }
  return p;
}

/// Weighted cross-entropy: sum_i w_i * (-log softmax(logits_i)[y_i]) / normalizer.
/// An empty weight span means unit weights.
inline CrossEntropy weighted_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                           std::span<const double> weights, double normalizer) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  check_labels(labels, n, c);
  CrossEntropy out;
  out.grad_logits = softmax(logits);
  for (std::size_t r = 0; r < n; ++r) {
    const double w = weights.empty() ? 1.0 : weights[r];
    auto lrow = logits.row(r);
    const double mx = *std::max_element(lrow.begin(), lrow.end());
    double sum = 0.0;
    for (double x : lrow) sum += std::exp(x - mx);
    const double log_prob = lrow[labels[r]] - mx - std::log(sum);
    out.loss -= w * log_prob;
    auto grow = out.grad_logits.row(r);
    grow[labels[r]] -= 1.0;
    for (double& g : grow) g *= w / normalizer;
  }
  out.loss /= normalizer;
  return out;
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
inline CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rows() == 0) throw InputError("cross-entropy of an empty batch");
  return weighted_cross_entropy(logits, labels, {}, static_cast<double>(logits.rows()));
}

/// Mean pairwise distance objective over groups of rows:
/// for each group g with n_g >= 2 rows,
///   L_g = -(1/n_g) sum_i sum_{j != i} |x_i - x_j|_2 / (n_g - 1)
/// and the result is the mean of L_g over such groups. Groups with fewer
/// than two rows are skipped. Adds `scale * dL/dx` to `grad` when non-null.
inline double pairwise_diversity(const Tensor& x, const std::vector<std::vector<std::size_t>>& groups, Tensor* grad,
                                 double scale) {
  std::size_t used = 0;
  for (const auto& g : groups) used += g.size() >= 2 ? 1 : 0;
  if (used == 0) return 0.0;
  const std::size_t d = x.cols();
  double total = 0.0;
  std::vector<double> diff(d);
  for (const auto& g : groups) {
    const std::size_t n = g.size();
    if (n < 2) continue;
    const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
    double sum = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      auto xa = x.row(g[a]);
      for (std::size_t b = a + 1; b < n; ++b) {
        auto xb = x.row(g[b]);
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          diff[k] = xa[k] - xb[k];
          sq += diff[k] * diff[k];
        }
        const double dist = std::sqrt(sq);
        sum += dist;
        if (grad != nullptr && dist > 0.0) {
          // Each unordered pair appears twice in the ordered double sum.
          const double coef = -2.0 * norm * scale / (static_cast<double>(used) * dist);
          auto ga = grad->row(g[a]);
          auto gb = grad->row(g[b]);
          for (std::size_t k = 0; k < d; ++k) {
            ga[k] += coef * diff[k];
            gb[k] -= coef * diff[k];
          }
        }
      }
    }
    total += -2.0 * norm * sum;
  }
  return total / static_cast<double>(used);
}

// ---------------------------------------------------------------------------
// Loss specifications understood by `backward`.

struct CrossEntropyLoss {};

/// Cross-entropy plus (mu/2) * |theta - anchor|^2.
struct ProximalCrossEntropyLoss {
  double mu = 0.0;
  const ParamSet* anchor = nullptr;
};

/// A frozen classifier that supervises generator training. `class_weight[y]`
/// is the weight of its cross-entropy on synthetic rows labelled y; zero
/// means the classifier does not hold the class and is not consulted.
struct FrozenTeacher {
  int client_id = 0;
  const ParamSet* params = nullptr;
  std::vector<double> class_weight;
};

/// lambda * L_cls + (1 - lambda) * L_div for a generator whose batch is the
/// conditioning input and whose labels are the requested classes.
/// L_cls = (1/n) sum_i sum_k w_k[y_i] * CE(D_k(G(u_i)), y_i); L_div is
/// `pairwise_diversity` over same-label groups. Teachers are evaluated in
/// ascending client-id order.
struct GeneratorCompositeLoss {
  std::vector<FrozenTeacher> teachers;
  double lambda = 0.5;
};

using LossSpec = std::variant<CrossEntropyLoss, ProximalCrossEntropyLoss, GeneratorCompositeLoss>;

struct BackwardResult {
  double loss = 0.0;
  Gradients grads;
  // Components of the generator objective; zero for classifier losses.
  double cls_term = 0.0;
  double div_term = 0.0;
};

inline std::vector<std::vector<std::size_t>> group_rows_by_label(std::span<const int> labels) {
  int max_label = -1;
  for (int y : labels) max_label = std::max(max_label, y);
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) groups[static_cast<std::size_t>(labels[i])].push_back(i);
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  return groups;
}

/// Weighted teacher cross-entropy term of the generator objective, evaluated
/// on already-generated rows. Adds `scale * dL/dx` into `grad_x` if given.
inline double teacher_cross_entropy(const Tensor& x, std::span<const int> labels,
                                    const std::vector<FrozenTeacher>& teachers, Tensor* grad_x, double scale) {
  const std::size_t n = x.rows();
  if (n == 0) return 0.0;
  std::vector<const FrozenTeacher*> order;
  for (const auto& t : teachers) order.push_back(&t);
  std::stable_sort(order.begin(), order.end(),
                   [](const FrozenTeacher* a, const FrozenTeacher* b) { return a->client_id < b->client_id; });
  double total = 0.0;
  for (const FrozenTeacher* t : order) {
    if (t->params == nullptr) throw ConfigError("frozen teacher without parameters");
    std::vector<std::size_t> rows;
    std::vector<int> sub_labels;
    std::vector<double> weights;
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = static_cast<std::size_t>(labels[i]);
      const double w = y < t->class_weight.size() ? t->class_weight[y] : 0.0;
      if (w > 0.0) {
        rows.push_back(i);
        sub_labels.push_back(labels[i]);
        weights.push_back(w);
      }
    }
    if (rows.empty()) continue;
    Tensor sub = x.gather_rows(rows);
    ForwardCache cache = forward_cached(*t->params, sub);
    CrossEntropy ce = weighted_cross_entropy(cache.output(), sub_labels, weights, static_cast<double>(n));
    total += ce.loss;
    if (grad_x != nullptr) {
      for (double& g : ce.grad_logits.values()) g *= scale;
      Tensor dx = backpropagate(*t->params, cache, std::move(ce.grad_logits), nullptr, true);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        auto src = dx.row(r);
        auto dst = grad_x->row(rows[r]);
        for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
      }
    }
  }
  return total;
}

/// Loss value and gradient with respect to `params` for the given loss spec.
inline BackwardResult backward(const ParamSet& params, const Tensor& batch, std::span<const int> labels,
                               const LossSpec& spec) {
  if (batch.rows() == 0) throw InputError("backward on an empty batch");
  BackwardResult out;
  out.grads = zeros_like(params);
  ForwardCache cache = forward_cached(params, batch);

  if (const auto* gen = std::get_if<GeneratorCompositeLoss>(&spec)) {
    if (labels.size() != batch.rows()) throw InputError("generator labels do not match batch rows");
    const Tensor& x = cache.output();
    Tensor grad_x = Tensor::matrix(x.rows(), x.cols());
    out.cls_term = teacher_cross_entropy(x, labels, gen->teachers, &grad_x, gen->lambda);
    out.div_term = pairwise_diversity(x, group_rows_by_label(labels), &grad_x, 1.0 - gen->lambda);
    out.loss = gen->lambda * out.cls_term + (1.0 - gen->lambda) * out.div_term;
    backpropagate(params, cache, std::move(grad_x), &out.grads, false);
    return out;
  }

  CrossEntropy ce = softmax_cross_entropy(cache.output(), labels);
  out.loss = ce.loss;
  backpropagate(params, cache, std::move(ce.grad_logits), &out.grads, false);

  if (const auto* prox = std::get_if<ProximalCrossEntropyLoss>(&spec)) {
    if (prox->anchor == nullptr || !layout_equal(*prox->anchor, params))
      throw ConfigError("proximal anchor layout does not match the trained parameters");
    double sq = 0.0;
    for (std::size_t l = 0; l < params.depth(); ++l) {
      auto accumulate = [&](const Tensor& p, const Tensor& a, Tensor& g) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double diff = p[i] - a[i];
          sq += diff * diff;
          g[i] += prox->mu * diff;
        }
      };
      accumulate(params.layer(l).weight, prox->anchor->layer(l).weight, out.grads.layer(l).weight);
      accumulate(params.layer(l).bias, prox->anchor->layer(l).bias, out.grads.layer(l).bias);
    }
    out.loss += 0.5 * prox->mu * sq;
  }
  return out;
}

/// Value-only evaluation of a loss spec; used by finite-difference checks.
inline double evaluate_loss(const ParamSet& params, const Tensor& batch, std::span<const int> labels,
                            const LossSpec& spec) {
  Tensor out = forward(params, batch);
  if (const auto* gen = std::get_if<GeneratorCompositeLoss>(&spec)) {
    const double cls = teacher_cross_entropy(out, labels, gen->teachers, nullptr, 0.0);
    const double div = pairwise_diversity(out, group_rows_by_label(labels), nullptr, 0.0);
    return gen->lambda * cls + (1.0 - gen->lambda) * div;
  }
  double loss = softmax_cross_entropy(out, labels).loss;
  if (const auto* prox = std::get_if<ProximalCrossEntropyLoss>(&spec)) {
    if (prox->anchor == nullptr || !layout_equal(*prox->anchor, params))
      throw ConfigError("proximal anchor layout does not match the trained parameters");
    const auto p = params.flatten();
    const auto a = prox->anchor->flatten();
    double sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sq += (p[i] - a[i]) * (p[i] - a[i]);
    loss += 0.5 * prox->mu * sq;
  }
  return loss;
}

/// Index of the largest logit in each row (first on ties).
inline std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace fedmem
