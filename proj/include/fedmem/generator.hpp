#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmem/adam.hpp"
#include "fedmem/datasets.hpp"
#include "fedmem/error.hpp"
#include "fedmem/network.hpp"
#include "fedmem/param_set.hpp"
#include "fedmem/rng.hpp"

namespace fedmem {

/// Per-class conditioning vectors A(y) with the seen/unseen class split.
struct SemanticTable {
  std::map<int, std::vector<double>> embeddings;
  std::set<int> seen;
  std::set<int> unseen;

  std::size_t dim() const { return embeddings.empty() ? 0 : embeddings.begin()->second.size(); }
  bool has(int cls) const { return embeddings.count(cls) > 0; }

  const std::vector<double>& at(int cls) const {
    auto it = embeddings.find(cls);
    if (it == embeddings.end()) throw SemanticError("no embedding for class " + std::to_string(cls));
    return it->second;
  }

  void validate() const {
    if (embeddings.empty()) throw SemanticError("semantic table is empty");
    for (int c : seen)
      if (unseen.count(c)) throw SemanticError("class " + std::to_string(c) + " is listed as both seen and unseen");
    for (const auto& [cls, v] : embeddings) {
      if (v.size() != dim()) throw SemanticError("embedding of class " + std::to_string(cls) + " has a different dimension");
      for (double x : v)
        if (!std::isfinite(x)) throw SemanticError("embedding of class " + std::to_string(cls) + " is not finite");
    }
    for (int c : seen)
      if (!has(c)) throw SemanticError("seen class " + std::to_string(c) + " has no embedding");
    for (int c : unseen)
      if (!has(c)) throw SemanticError("unseen class " + std::to_string(c) + " has no embedding");
  }
};

/// Embeddings taken from stored class means, optionally mapped through a
/// seeded Gaussian random projection to `projection_dim` (0 keeps the raw
/// means).
inline SemanticTable semantic_table_from_means(const Tensor& means, const std::set<int>& seen,
                                               const std::set<int>& unseen, int projection_dim = 0,
                                               std::uint64_t projection_seed = 0) {
  SemanticTable t;
  t.seen = seen;
  t.unseen = unseen;
  const std::size_t d = means.cols();
  Tensor proj;
  if (projection_dim > 0) {
    Rng rng(projection_seed);
    proj = Tensor::matrix(static_cast<std::size_t>(projection_dim), d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(projection_dim));
    for (double& x : proj.values()) x = scale * rng.normal();
  }
  for (std::size_t c = 0; c < means.rows(); ++c) {
    auto m = means.row(c);
    std::vector<double> e;
    if (projection_dim > 0) {
      e.assign(static_cast<std::size_t>(projection_dim), 0.0);
      for (std::size_t i = 0; i < e.size(); ++i)
        for (std::size_t k = 0; k < d; ++k) e[i] += proj(i, k) * m[k];
    } else {
      e.assign(m.begin(), m.end());
    }
    t.embeddings[static_cast<int>(c)] = std::move(e);
  }
  t.validate();
  return t;
}

// File format: {"<class id>": [reals], ..., "seen": [ids], "unseen": [ids]}.
inline SemanticTable semantic_table_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("semantic table must be a JSON object");
  SemanticTable t;
  for (const auto& [key, value] : j.items()) {
    if (key == "seen" || key == "unseen") {
      if (!value.is_array()) throw ParseError("semantic table key '" + key + "' must be an array of class ids");
      auto& dst = key == "seen" ? t.seen : t.unseen;
      for (const auto& id : value) {
        if (!id.is_number_integer()) throw ParseError("semantic table key '" + key + "' holds a non-integer id");
        dst.insert(id.get<int>());
      }
      continue;
    }
    std::size_t used = 0;
    int cls = -1;
    try {
      cls = std::stoi(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != key.size() || cls < 0) throw ParseError("semantic table key '" + key + "' is not a class id");
    if (!value.is_array()) throw ParseError("embedding of class " + key + " must be an array");
    std::vector<double> e;
    for (const auto& x : value) {
      if (!x.is_number()) throw ParseError("embedding of class " + key + " holds a non-number");
      e.push_back(x.get<double>());
    }
    t.embeddings[cls] = std::move(e);
  }
  t.validate();
  return t;
}

inline nlohmann::json semantic_table_to_json(const SemanticTable& t) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [cls, e] : t.embeddings) j[std::to_string(cls)] = e;
  j["seen"] = std::vector<int>(t.seen.begin(), t.seen.end());
  j["unseen"] = std::vector<int>(t.unseen.begin(), t.unseen.end());
  return j;
}

inline SemanticTable load_semantic_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open semantic table '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return semantic_table_from_json(j);
}

inline void save_semantic_table(const SemanticTable& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << semantic_table_to_json(t).dump(2) << '\n';
}

struct NoiseSpec {
  int dim = 20;
};

/// alpha_k^y: rows of class y on non-dropout client k divided by all rows on
/// non-dropout clients.
struct ClassProportionTable {
  std::vector<int> clients;                // ascending
  std::vector<std::vector<double>> alpha;  // [client index][class]

  double at(int client, int cls) const {
    for (std::size_t i = 0; i < clients.size(); ++i)
      if (clients[i] == client)
        return static_cast<std::size_t>(cls) < alpha[i].size() ? alpha[i][static_cast<std::size_t>(cls)] : 0.0;
    return 0.0;
  }
  const std::vector<double>& row(int client) const {
    for (std::size_t i = 0; i < clients.size(); ++i)
      if (clients[i] == client) return alpha[i];
    throw ConfigError("client " + std::to_string(client) + " has no class proportions");
  }

  static ClassProportionTable from_histograms(const std::map<int, LabelHistogram>& hists) {
    ClassProportionTable t;
    double total = 0.0;
    for (const auto& [k, h] : hists) total += static_cast<double>(h.total());
    if (total <= 0.0) throw ConfigError("class proportions from empty histograms");
    for (const auto& [k, h] : hists) {
      t.clients.push_back(k);
      std::vector<double> row(h.counts.size());
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = static_cast<double>(h.counts[c]) / total;
      t.alpha.push_back(std::move(row));
    }
    return t;
  }
};

struct GeneratorConfig {
  double lambda = 0.5;
  int samples_per_class = 600;
  int epochs = 20;  // one optimizer step per epoch
  int batch_size = 50;
  double learning_rate = 0.0002;
  std::vector<std::size_t> hidden = {64, 64};
  bool retrain_every_round = true;
};

/// A frozen client classifier consulted during generator training.
struct ClientModel {
  int client_id = 0;
  const ParamSet* params = nullptr;
};

inline ParamSet make_generator(std::size_t noise_dim, std::size_t semantic_dim, std::size_t out_dim,
                               const std::vector<std::size_t>& hidden, Rng& rng) {
  std::vector<std::size_t> widths{noise_dim + semantic_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out_dim);
  return make_mlp(std::span<const std::size_t>(widths), rng, "gen");
}

/// n x dim matrix of iid N(0, 1) draws.
inline Tensor sample_noise(std::size_t n, const NoiseSpec& spec, std::uint64_t seed) {
  if (n == 0) throw InputError("sample_noise needs n >= 1");
  if (spec.dim < 1) throw ConfigError("noise dimension must be >= 1");
  Rng rng(seed);
  Tensor z = Tensor::matrix(n, static_cast<std::size_t>(spec.dim));
  for (double& x : z.values()) x = rng.normal();
  return z;
}

/// Rows concat(z_i, A(y_i)).
inline Tensor generator_input(const Tensor& noise, std::span<const int> labels, const SemanticTable& table) {
  if (noise.rows() != labels.size()) throw InputError("noise rows do not match label count");
  const std::size_t dz = noise.cols();
  const std::size_t da = table.dim();
  Tensor u = Tensor::matrix(noise.rows(), dz + da);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& a = table.at(labels[i]);
    auto row = u.row(i);
    auto z = noise.row(i);
    std::copy(z.begin(), z.end(), row.begin());
    std::copy(a.begin(), a.end(), row.begin() + static_cast<std::ptrdiff_t>(dz));
  }
  return u;
}

/// Synthetic samples G(z_i, A(y_i); omega).
inline Tensor generate(const ParamSet& omega, const Tensor& noise, std::span<const int> labels,
                       const SemanticTable& table) {
  return forward(omega, generator_input(noise, labels, table));
}

inline std::vector<FrozenTeacher> make_teachers(const std::vector<ClientModel>& clients,
                                                const ClassProportionTable& proportions) {
  if (clients.empty()) throw ConfigError("generator supervision needs at least one non-dropout client model");
  std::vector<FrozenTeacher> out;
  for (const auto& c : clients) out.push_back({c.client_id, c.params, proportions.row(c.client_id)});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  return out;
}

/// L_cls = (1/n) sum_i sum_k alpha_k^{y_i} CE(D(x_i; theta_k), y_i): each
/// client model scores only the rows of classes it holds.
inline double classification_loss(const Tensor& samples, std::span<const int> labels,
                                  const std::vector<ClientModel>& clients, const ClassProportionTable& proportions) {
  return teacher_cross_entropy(samples, labels, make_teachers(clients, proportions), nullptr, 0.0);
}

/// L_div for the samples of one class: minus the mean pairwise L2 distance.
inline double diversity_loss(const Tensor& samples) {
  if (samples.rows() < 2) throw ConfigError("diversity loss needs at least 2 samples");
  std::vector<std::size_t> all(samples.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return pairwise_diversity(samples, {all}, nullptr, 0.0);
}

/// Class-averaged L_div over same-label groups.
inline double diversity_loss(const Tensor& samples, std::span<const int> labels) {
  return pairwise_diversity(samples, group_rows_by_label(labels), nullptr, 0.0);
}

inline double generator_loss(double cls, double div, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  return lambda * cls + (1.0 - lambda) * div;
}

struct GeneratorEpochStats {
  double loss = 0.0;
  double cls = 0.0;
  double div = 0.0;
};

/// Generator weights plus optimizer state, kept across warm-started rounds.
struct GeneratorState {
  ParamSet omega;
  AdamState adam;
};

/// Classes the generator is trained on: seen classes held by some client.
inline std::vector<int> supervised_classes(const SemanticTable& table, const ClassProportionTable& proportions) {
  std::vector<int> out;
  for (int c : table.seen) {
    bool held = false;
    for (const auto& row : proportions.alpha) held = held || (static_cast<std::size_t>(c) < row.size() && row[c] > 0.0);
    if (held) out.push_back(c);
  }
  return out;
}

/// Trains the generator against frozen client classifiers for `cfg.epochs`
/// epochs. Each epoch draws fresh noise for samples_per_class rows per
/// supervised class, evaluates lambda * L_cls + (1 - lambda) * L_div in
/// chunks of about `batch_size` rows per class, averages the chunk gradients
/// and takes one Adam step. Only omega changes.
inline std::vector<GeneratorEpochStats> train_generator(GeneratorState& state, const std::vector<ClientModel>& clients,
                                                        const ClassProportionTable& proportions,
                                                        const SemanticTable& table, const GeneratorConfig& cfg,
                                                        const NoiseSpec& noise, std::uint64_t seed) {
  if (cfg.samples_per_class < 2) throw ConfigError("samples_per_class must be >= 2");
  if (cfg.batch_size < 2) throw ConfigError("generator batch_size must be >= 2");
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  std::vector<GeneratorEpochStats> stats;
  if (cfg.epochs <= 0) return stats;
  GeneratorCompositeLoss objective{make_teachers(clients, proportions), cfg.lambda};
  const auto classes = supervised_classes(table, proportions);
  if (classes.empty()) throw ConfigError("no seen class is held by any client");

  const auto n_s = static_cast<std::size_t>(cfg.samples_per_class);
  // Chunks hold at least two rows per class so every chunk has diversity pairs.
  const std::size_t chunks = std::max<std::size_t>(1, n_s / static_cast<std::size_t>(cfg.batch_size));
  const double w = 1.0 / static_cast<double>(chunks);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    GeneratorEpochStats e;
    Gradients grad = zeros_like(state.omega);
    for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
      const std::size_t per_class = n_s / chunks + (chunk < n_s % chunks ? 1 : 0);
      std::vector<int> labels;
      labels.reserve(per_class * classes.size());
      for (int c : classes) labels.insert(labels.end(), per_class, c);
      Tensor z = sample_noise(labels.size(), noise, derive_seed(seed, "gen-noise", {epoch, static_cast<long>(chunk)}));
      Tensor u = generator_input(z, labels, table);
      BackwardResult res = backward(state.omega, u, labels, objective);
      if (!std::isfinite(res.loss)) throw TrainingError("generator loss became non-finite at epoch " + std::to_string(epoch));
      add_scaled(grad, res.grads, w);
      e.loss += w * res.loss;
      e.cls += w * res.cls_term;
      e.div += w * res.div_term;
    }
    adam_step(state.omega, grad, state.adam, cfg.learning_rate);
    stats.push_back(e);
  }
  return stats;
}

/// Cold-start convenience form: fresh Adam state, returns the trained omega.
inline ParamSet train_generator(const ParamSet& omega0, const std::vector<ClientModel>& clients,
                                const ClassProportionTable& proportions, const SemanticTable& table,
                                const GeneratorConfig& cfg, const NoiseSpec& noise, std::uint64_t seed) {
  GeneratorState state{omega0, AdamState::for_params(omega0)};
  train_generator(state, clients, proportions, table, cfg, noise, seed);
  return state.omega;
}

}  // namespace fedmem
