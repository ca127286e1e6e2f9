#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedmem/datasets.hpp"
#include "fedmem/error.hpp"
#include "fedmem/generator.hpp"
#include "fedmem/param_set.hpp"
#include "fedmem/protocol.hpp"
#include "fedmem/rng.hpp"

namespace fedmem {

struct PersonalizationConfig {
  double beta = 0.1;
  FitOptions friend_fit{20, 50, 0.001, 0.0};
  int budget_per_client = 0;  // 0: samples_per_class rows per locally present class
  // Seen-class synthetic rows per unseen-class row in a dropout client's
  // friend-model training set.
  double seen_ratio = 1.0;
  // Starting point of friend-model training: the final global model or the
  // shared round-0 initialization.
  enum class FriendInit { global, init } friend_init = FriendInit::global;
};

struct FriendModel {
  ParamSet params;
  std::string provenance;
};

enum class ClientMode { non_dropout, dropout };

/// Synthetic rows whose label counts follow `hist` (largest remainder over
/// `budget`). Every locally present class needs an embedding in `table`.
inline Dataset synthesize_for_client(const ParamSet& omega, const LabelHistogram& hist, int budget,
                                     const SemanticTable& table, const NoiseSpec& noise, std::uint64_t seed) {
  const auto present = hist.present_classes();
  if (present.empty()) throw InputError("cannot synthesize for an empty label histogram");
  if (budget < static_cast<int>(present.size()))
    throw ConfigError("synthetic budget " + std::to_string(budget) + " is below the " +
                      std::to_string(present.size()) + " locally present classes");
  for (int c : present)
    if (!table.has(c)) throw SemanticError("class " + std::to_string(c) + " is present locally but has no embedding");

  std::vector<double> shares(hist.counts.begin(), hist.counts.end());
  auto counts = apportion(shares, static_cast<std::size_t>(budget));
  // Every present class gets at least one row; take it from the largest.
  for (int c : present) {
    if (counts[c] > 0) continue;
    auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    counts[donor] -= 1;
    counts[c] += 1;
  }
  std::vector<int> labels;
  for (std::size_t c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], static_cast<int>(c));

  Dataset out;
  out.class_count = static_cast<int>(hist.counts.size());
  out.features = generate(omega, sample_noise(labels.size(), noise, seed), labels, table);
  out.labels = std::move(labels);
  return out;
}

inline Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.dim() != b.dim()) throw InputError("cannot concatenate datasets of different widths");
  Dataset out;
  out.class_count = std::max(a.class_count, b.class_count);
  std::vector<double> values(a.features.values().begin(), a.features.values().end());
  values.insert(values.end(), b.features.values().begin(), b.features.values().end());
  out.features = Tensor({a.size() + b.size(), a.dim()}, std::move(values));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

/// Trains a friend model on synthetic rows only, starting from `init`.
inline FriendModel train_friend_model(const Dataset& synthetic, const ParamSet& init, const FitOptions& opt,
                                      std::uint64_t seed, std::string provenance = "") {
  if (synthetic.empty()) throw TrainingError("friend model needs a non-empty synthetic set");
  return {fit_classifier(init, synthetic, opt, seed, "friend model: "), std::move(provenance)};
}

/// beta * a + (1 - beta) * b, exact at both endpoints.
inline ParamSet interpolate(const ParamSet& a, const ParamSet& b, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw InterpolationError("beta must lie in [0, 1], got " + std::to_string(beta));
  if (!layout_equal(a, b)) throw InterpolationError("parameter sets have different layouts");
  if (beta == 1.0) return a;
  if (beta == 0.0) return b;
  return affine_combine(a, beta, b, 1.0 - beta);
}

/// The localized global model of a dropout client: the global model
/// fine-tuned on the client's own rows. An empty shard leaves it unchanged
/// and appends a warning.
inline ParamSet localize_global(const ParamSet& global, const Dataset& shard, const FitOptions& opt,
                                std::uint64_t seed, std::vector<std::string>* warnings = nullptr) {
  if (shard.empty()) {
    if (warnings) warnings->push_back("dropout client has no local rows; using the global model as is");
    return global;
  }
  return fit_classifier(global, shard, opt, seed, "localization: ");
}

/// Shared, read-only inputs of personalization.
struct PersonalizationInputs {
  const ParamSet* generator = nullptr;
  const SemanticTable* semantics = nullptr;
  NoiseSpec noise;
  const ParamSet* global = nullptr;
  const ParamSet* friend_init = nullptr;
  FitOptions localize_fit;
};

struct PersonalizedModel {
  ParamSet params;
  FriendModel friend_model;
  ParamSet base;  // client model (non-dropout) or localized global model (dropout)
  Dataset synthetic;
  std::vector<std::string> warnings;
};

/// Builds a client's personalized model.
///
/// Non-dropout: friend model on synthesis matching the client's histogram,
/// blended with the client's own model. Dropout: friend model on synthesis
/// of the client's classes (typically unseen) plus seen classes, blended
/// with the localized global model.
inline PersonalizedModel personalize(const ClientState& client, ClientMode mode, const PersonalizationInputs& in,
                                     const PersonalizationConfig& cfg, std::uint64_t seed) {
  if (!in.generator || !in.semantics || !in.global || !in.friend_init)
    throw ConfigError("personalization inputs are incomplete");
  PersonalizedModel out;
  const auto hist = client.train.histogram();
  const std::string tag = "client " + std::to_string(client.id);
  if (mode == ClientMode::non_dropout) {
    out.synthetic = synthesize_for_client(*in.generator, hist, cfg.budget_per_client, *in.semantics, in.noise,
                                          derive_seed(seed, "synth", {client.id}));
    out.base = client.last_round >= 0 ? client.local : *in.global;
  } else {
    Dataset local_part = synthesize_for_client(*in.generator, hist, cfg.budget_per_client, *in.semantics, in.noise,
                                               derive_seed(seed, "synth", {client.id}));
    LabelHistogram seen_hist;
    seen_hist.counts.assign(hist.counts.size(), 0);
    for (int c : in.semantics->seen)
      if (static_cast<std::size_t>(c) < seen_hist.counts.size() && hist.counts[c] == 0) seen_hist.counts[c] = 1;
    const auto seen_budget = static_cast<int>(std::lround(cfg.seen_ratio * cfg.budget_per_client));
    Dataset seen_part;
    if (seen_budget > 0 && !seen_hist.present_classes().empty()) {
      seen_part = synthesize_for_client(*in.generator, seen_hist,
                                        std::max<int>(seen_budget, static_cast<int>(seen_hist.present_classes().size())),
                                        *in.semantics, in.noise, derive_seed(seed, "synth-seen", {client.id}));
    }
    out.synthetic = concat(local_part, seen_part);
    out.base = localize_global(*in.global, client.train, in.localize_fit, derive_seed(seed, "localize", {client.id}),
                               &out.warnings);
  }
  out.friend_model = train_friend_model(out.synthetic, *in.friend_init, cfg.friend_fit,
                                        derive_seed(seed, "friend", {client.id}),
                                        tag + (mode == ClientMode::dropout ? " (dropout)" : ""));
  out.params = interpolate(out.base, out.friend_model.params, cfg.beta);
  return out;
}

}  // namespace fedmem
