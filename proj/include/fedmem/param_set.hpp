#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedmem/error.hpp"
#include "fedmem/rng.hpp"
#include "fedmem/tensor.hpp"

namespace fedmem {

enum class Activation : unsigned char { identity = 0, relu = 1 };

struct Layer {
  std::string name;
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
  Activation activation = Activation::identity;

  std::size_t in_width() const { return weight.cols(); }
  std::size_t out_width() const { return weight.rows(); }
  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Weights of one feed-forward network, in evaluation order.
///
/// Used for classifiers, friend models, personalized models and the
/// generator alike; the architecture is fully described by the layer
/// shapes and activations.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  const std::vector<Layer>& layers() const { return layers_; }
  Layer& layer(std::size_t i) { return layers_[i]; }
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  std::size_t depth() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

  std::size_t input_width() const { return layers_.empty() ? 0 : layers_.front().in_width(); }
  std::size_t output_width() const { return layers_.empty() ? 0 : layers_.back().out_width(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  // Visits every tensor (weight then bias, layer by layer).
  template <class F>
  void for_each_tensor(F&& f) {
    for (auto& l : layers_) {
      f(l.weight);
      f(l.bias);
    }
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for (const auto& l : layers_) {
      f(l.weight);
      f(l.bias);
    }
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const Tensor& t) { ok = ok && t.all_finite(); });
    return ok;
  }

  // Flat copy of all parameters in visiting order.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for_each_tensor([&](const Tensor& t) { out.insert(out.end(), t.values().begin(), t.values().end()); });
    return out;
  }

  // Scalar access into the flattened view.
  double& flat(std::size_t i) {
    for (auto& l : layers_) {
      if (i < l.weight.size()) return l.weight[i];
      i -= l.weight.size();
      if (i < l.bias.size()) return l.bias[i];
      i -= l.bias.size();
    }
    throw InputError("flat parameter index out of range");
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  void validate() const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.weight.rows()) {
        throw ConfigError("layer '" + l.name + "' has weight " + shape_string(l.weight.shape()) + " and bias " +
                          shape_string(l.bias.shape()));
      }
      if (i > 0 && layers_[i - 1].out_width() != l.in_width()) {
        throw ConfigError("layer '" + l.name + "' expects width " + std::to_string(l.in_width()) +
                          " but previous layer emits " + std::to_string(layers_[i - 1].out_width()));
      }
    }
  }

  std::vector<Layer> layers_;
};

// Gradients share the layout of the ParamSet they differentiate.
using Gradients = ParamSet;

inline bool layout_equal(const ParamSet& a, const ParamSet& b) {
  if (a.depth() != b.depth()) return false;
  for (std::size_t i = 0; i < a.depth(); ++i) {
    const Layer& x = a.layer(i);
    const Layer& y = b.layer(i);
    if (x.name != y.name || !x.weight.same_shape(y.weight) || !x.bias.same_shape(y.bias) ||
        x.activation != y.activation)
      return false;
  }
  return true;
}

inline ParamSet zeros_like(const ParamSet& p) {
  ParamSet z = p;
  z.for_each_tensor([](Tensor& t) {
    for (double& x : t.values()) x = 0.0;
  });
  return z;
}

/// Elementwise wa*a + wb*b. Both sets must be layout-equal.
inline ParamSet affine_combine(const ParamSet& a, double wa, const ParamSet& b, double wb) {
  if (!layout_equal(a, b)) throw ConfigError("affine combination of parameter sets with different layouts");
  ParamSet out = a;
  for (std::size_t l = 0; l < out.depth(); ++l) {
    auto combine = [&](Tensor& dst, const Tensor& x, const Tensor& y) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = wa * x[i] + wb * y[i];
    };
    combine(out.layer(l).weight, a.layer(l).weight, b.layer(l).weight);
    combine(out.layer(l).bias, a.layer(l).bias, b.layer(l).bias);
  }
  return out;
}

// In-place dst += w * src.
inline void add_scaled(ParamSet& dst, const ParamSet& src, double w) {
  for (std::size_t l = 0; l < dst.depth(); ++l) {
    auto& dw = dst.layer(l).weight;
    auto& db = dst.layer(l).bias;
    const auto& sw = src.layer(l).weight;
    const auto& sb = src.layer(l).bias;
    for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += w * sw[i];
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += w * sb[i];
  }
}

/// Builds an MLP with ReLU hidden layers and a linear output layer.
/// `widths` lists input, hidden..., output. Weights and biases are drawn
/// from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline ParamSet make_mlp(std::span<const std::size_t> widths, Rng& rng, const std::string& prefix = "fc") {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least an input and an output width");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i];
    const std::size_t out = widths[i + 1];
    if (in == 0 || out == 0) throw ConfigError("MLP layer widths must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Layer l;
    l.name = prefix + std::to_string(i);
    l.weight = Tensor::matrix(out, in);
    l.bias = Tensor::vector(out);
    for (double& w : l.weight.values()) w = rng.uniform(-bound, bound);
    for (double& b : l.bias.values()) b = rng.uniform(-bound, bound);
    l.activation = (i + 2 == widths.size()) ? Activation::identity : Activation::relu;
    layers.push_back(std::move(l));
  }
  return ParamSet(std::move(layers));
}

inline ParamSet make_mlp(std::initializer_list<std::size_t> widths, Rng& rng, const std::string& prefix = "fc") {
  std::vector<std::size_t> w(widths);
  return make_mlp(std::span<const std::size_t>(w), rng, prefix);
}

}  // namespace fedmem
