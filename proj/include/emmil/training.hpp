#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "emmil/bags.hpp"
#include "emmil/dense_matrix.hpp"
#include "emmil/errors.hpp"
#include "emmil/network.hpp"
#include "emmil/pseudo_labels.hpp"

namespace emmil {

struct ScheduleStage {
  std::size_t epochs = 0;
  std::size_t cycle_epochs = 1;  // contiguous epochs per E (or M) phase
  double lr_multiplier = 1.0;
};

enum class TrainMode { kAlternating, kJoint };

struct TrainConfig {
  double learning_rate = 1e-4;
  double gamma = 0.15;
  double fusion_lambda = 0.8;
  std::size_t epochs = 65;
  // 30 epochs alternating every 10, then 35 epochs of cycle 1 at 4x the rate.
  std::vector<ScheduleStage> stages = {{30, 10, 1.0}, {35, 1, 4.0}};
  std::uint64_t seed = 0;
  std::vector<std::size_t> classifier_hidden = {64};
  std::vector<std::size_t> assigner_hidden = {64};
  TrainMode mode = TrainMode::kAlternating;
  // First E cycle labels every clip of a positive bag as key, then the
  // alternation narrows the scope.
  bool warm_start_full_positive = true;
};

inline void validate_config(const TrainConfig& config) {
  if (!(config.learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be > 0");
  if (config.gamma < 0.0) throw ConfigError("TrainConfig: gamma must be >= 0");
  if (!(config.fusion_lambda >= 0.0 && config.fusion_lambda <= 1.0)) {
    throw ConfigError("TrainConfig: fusion_lambda must lie in [0, 1]");
  }
  if (config.epochs == 0) throw ConfigError("TrainConfig: epochs must be >= 1");
  if (config.stages.empty()) throw ConfigError("TrainConfig: schedule has no stages");
  std::size_t staged = 0;
  for (const auto& stage : config.stages) {
    if (stage.cycle_epochs == 0) throw ConfigError("TrainConfig: cycle_epochs must be >= 1");
    if (!(stage.lr_multiplier > 0.0)) throw ConfigError("TrainConfig: lr_multiplier must be > 0");
    staged += stage.epochs;
  }
  if (staged != config.epochs) {
    throw ConfigError("TrainConfig: stages cover " + std::to_string(staged) +
                      " epochs but config declares " + std::to_string(config.epochs));
  }
}

enum class Phase { kE, kM };

inline const char* phase_name(Phase p) { return p == Phase::kE ? "E" : "M"; }

struct EpochPlan {
  Phase phase = Phase::kE;
  double lr_multiplier = 1.0;
  bool in_first_cycle = false;
};

// E comes first inside every cycle; phases swap each cycle_epochs block.
inline EpochPlan plan_for_epoch(const TrainConfig& config, std::size_t epoch) {
  std::size_t offset = 0;
  for (std::size_t si = 0; si < config.stages.size(); ++si) {
    const auto& stage = config.stages[si];
    if (epoch < offset + stage.epochs) {
      const std::size_t in_stage = epoch - offset;
      const std::size_t cycle_index = in_stage / stage.cycle_epochs;
      EpochPlan plan;
      plan.phase = (cycle_index % 2 == 0) ? Phase::kE : Phase::kM;
      plan.lr_multiplier = stage.lr_multiplier;
      plan.in_first_cycle = (si == 0 && cycle_index == 0);
      return plan;
    }
    offset += stage.epochs;
  }
  throw ConfigError("plan_for_epoch: epoch " + std::to_string(epoch) + " beyond schedule");
}

struct EpochRecord {
  std::size_t epoch = 0;
  std::string phase;
  double mean_loss = 0.0;
  double elbo_proxy = 0.0;
  double pseudo_positive_rate = 0.0;
  double z_recall = -1.0;  // e-step recall against planted z; -1 when unknown
};

struct TrainState {
  ScoringNetwork classifier;  // p_theta, T x C scores
  OptimizerState classifier_opt;
  ScoringNetwork assigner;  // q_phi, T x 1 scores
  OptimizerState assigner_opt;
  std::size_t epoch = 0;
  Phase phase = Phase::kE;
  std::vector<double> step_losses;
  std::vector<EpochRecord> history;
  double initial_elbo = 0.0;
};

inline std::vector<double> q_scores(const ScoringNetwork& assigner, const DenseMatrix& features) {
  const DenseMatrix out = forward(assigner, features);
  std::vector<double> q(out.rows());
  for (std::size_t t = 0; t < out.rows(); ++t) q[t] = out(t, 0);
  return q;
}

inline DenseMatrix column_matrix(const std::vector<double>& v) {
  DenseMatrix m(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
  return m;
}

inline TrainState init_train_state(const TrainConfig& config, const Dataset& dataset) {
  validate_config(config);
  if (dataset.bags.empty()) throw ConfigError("train: empty dataset");
  TrainState state;
  std::mt19937_64 rng(config.seed);
  state.classifier =
      make_mlp(dataset.feature_dim, config.classifier_hidden, dataset.num_classes, rng);
  state.assigner = make_mlp(dataset.feature_dim, config.assigner_hidden, 1, rng);
  state.classifier_opt = make_adam(state.classifier, config.learning_rate);
  state.assigner_opt = make_adam(state.assigner, config.learning_rate);
  return state;
}

enum class Aggregator { kMax, kMean };

// Diagnostic estimate of the variational lower bound: per bag, the gated
// positive-class log score plus the negative-class log complements, plus the
// per-clip mean Bernoulli entropy of Q. The entropy term is averaged over
// clips so it stays comparable with the per-class likelihood terms instead of
// swamping them on long bags. Never used for gradients.
inline double elbo_proxy(const TrainState& state, const Dataset& dataset,
                         Aggregator sigma = Aggregator::kMax) {
  double total = 0.0;
  for (const auto& bag : dataset.bags) {
    const DenseMatrix P = forward(state.classifier, bag.sequence.features);
    const std::vector<double> Q = q_scores(state.assigner, bag.sequence.features);
    const auto z_hat = e_step_pseudo_labels(P, bag.label);
    const std::size_t T = P.rows();

    auto aggregate = [&](std::size_t c, bool gate) {
      double best = 0.0, sum = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double v = (!gate || z_hat[t]) ? P(t, c) : 0.0;
        best = std::max(best, v);
        sum += v;
      }
      return sigma == Aggregator::kMax ? best : sum / static_cast<double>(T);
    };

    for (std::size_t c = 0; c < bag.label.num_classes(); ++c) {
      if (bag.label.positive(c)) {
        total += std::log(std::max(aggregate(c, true), kBceClamp));
      } else {
        total += std::log(std::max(1.0 - aggregate(c, false), kBceClamp));
      }
    }
    double entropy = 0.0;
    for (double q : Q) {
      const double p = std::min(std::max(q, kBceClamp), 1.0 - kBceClamp);
      entropy += -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
    }
    total += entropy / static_cast<double>(T);
  }
  return total;
}

namespace detail {

struct EpochStats {
  double loss_sum = 0.0;
  std::size_t steps = 0;
  double positive_entries = 0.0;
  double total_entries = 0.0;
};

// One q step from classifier pseudo-labels. warm_start overrides z_hat with
// all-ones on positive bags.
inline void e_step_bag(TrainState& state, const LabeledBag& bag, bool warm_start,
                       EpochStats& stats) {
  const DenseMatrix P = forward(state.classifier, bag.sequence.features);
  std::vector<std::uint8_t> z_hat;
  if (warm_start && bag.label.any_positive()) {
    z_hat.assign(bag.sequence.num_clips(), 1);
  } else {
    z_hat = e_step_pseudo_labels(P, bag.label);
  }
  DenseMatrix targets(z_hat.size(), 1);
  for (std::size_t t = 0; t < z_hat.size(); ++t) {
    targets(t, 0) = z_hat[t] ? 1.0 : 0.0;
    stats.positive_entries += z_hat[t] ? 1.0 : 0.0;
  }
  stats.total_entries += static_cast<double>(z_hat.size());

  const ForwardCache cache = forward_cached(state.assigner, bag.sequence.features);
  const BceResult bce = bce_loss(cache.output(), targets);
  backward_and_step(state.assigner, state.assigner_opt, cache, bce.grad);
  state.step_losses.push_back(bce.loss);
  stats.loss_sum += bce.loss;
  stats.steps += 1;
}

// One p step from assigner pseudo-labels.
inline void m_step_bag(TrainState& state, const LabeledBag& bag, double gamma,
                       EpochStats& stats) {
  const std::vector<double> Q = q_scores(state.assigner, bag.sequence.features);
  const DenseMatrix y_hat = m_step_pseudo_labels(Q, bag.label, gamma);
  const ClassifierTargets packed = masked_targets_for_classifier(y_hat);
  for (double v : packed.targets.data()) stats.positive_entries += v;
  stats.total_entries += static_cast<double>(packed.targets.size());

  const ForwardCache cache = forward_cached(state.classifier, bag.sequence.features);
  const BceResult bce = bce_loss(cache.output(), packed.targets, &packed.mask);
  backward_and_step(state.classifier, state.classifier_opt, cache, bce.grad);
  state.step_losses.push_back(bce.loss);
  stats.loss_sum += bce.loss;
  stats.steps += 1;
}

inline double e_step_recall(const TrainState& state, const Dataset& dataset) {
  std::size_t tp = 0, fn = 0;
  bool any = false;
  for (const auto& bag : dataset.bags) {
    if (!bag.true_z.has_value() || !bag.label.any_positive()) continue;
    any = true;
    const DenseMatrix P = forward(state.classifier, bag.sequence.features);
    const auto z_hat = e_step_pseudo_labels(P, bag.label);
    const auto& z = *bag.true_z;
    for (std::size_t t = 0; t < z.size(); ++t) {
      if (z[t]) (z_hat[t] ? tp : fn) += 1;
    }
  }
  if (!any || tp + fn == 0) return -1.0;
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

}  // namespace detail

// The classifier is frozen for the whole epoch; only q_phi moves.
inline void run_e_epoch(TrainState& state, const Dataset& dataset, const TrainConfig& config,
                        bool warm_start = false) {
  detail::EpochStats stats;
  for (const auto& bag : dataset.bags) {
    detail::e_step_bag(state, bag, warm_start && config.warm_start_full_positive, stats);
  }
  state.phase = Phase::kE;
}

// Mirror image: q_phi frozen, classifier takes one step per bag.
inline void run_m_epoch(TrainState& state, const Dataset& dataset, const TrainConfig& config) {
  detail::EpochStats stats;
  for (const auto& bag : dataset.bags) {
    detail::m_step_bag(state, bag, config.gamma, stats);
  }
  state.phase = Phase::kM;
}

inline void write_log_record(std::ostream* log, const EpochRecord& rec) {
  if (log == nullptr) return;
  nlohmann::json j;
  j["epoch"] = rec.epoch;
  j["phase"] = rec.phase;
  j["mean_loss"] = rec.mean_loss;
  j["elbo_proxy"] = rec.elbo_proxy;
  j["pseudo_positive_rate"] = rec.pseudo_positive_rate;
  if (rec.z_recall >= 0.0) j["z_recall"] = rec.z_recall;
  (*log) << j.dump() << "\n";
}

// Algorithm 1 with the staged alternation schedule; joint mode instead steps
// both branches every epoch from each other's pre-step scores.
inline TrainState train(const TrainConfig& config, const Dataset& dataset,
                        std::ostream* log = nullptr) {
  validate_config(config);
  if (dataset.bags.empty()) throw ConfigError("train: empty dataset");
  if (dataset.count_positive_bags() == 0) {
    throw ConfigError("train: no positive bags: key-instance assignment unidentifiable");
  }

  TrainState state = init_train_state(config, dataset);
  state.initial_elbo = elbo_proxy(state, dataset);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const EpochPlan plan = plan_for_epoch(config, epoch);
    state.classifier_opt.learning_rate = config.learning_rate * plan.lr_multiplier;
    state.assigner_opt.learning_rate = config.learning_rate * plan.lr_multiplier;

    detail::EpochStats stats;
    EpochRecord rec;
    rec.epoch = epoch;

    if (config.mode == TrainMode::kAlternating) {
      const bool warm = config.warm_start_full_positive && plan.in_first_cycle &&
                        plan.phase == Phase::kE;
      if (plan.phase == Phase::kE) {
        for (const auto& bag : dataset.bags) detail::e_step_bag(state, bag, warm, stats);
      } else {
        for (const auto& bag : dataset.bags) detail::m_step_bag(state, bag, config.gamma, stats);
      }
      state.phase = plan.phase;
      rec.phase = phase_name(plan.phase);
    } else {
      // Joint: derive both pseudo-label sets from the pre-step networks, then
      // update both branches.
      const bool warm = config.warm_start_full_positive && epoch == 0;
      for (const auto& bag : dataset.bags) {
        detail::e_step_bag(state, bag, warm, stats);
        detail::m_step_bag(state, bag, config.gamma, stats);
      }
      state.phase = Phase::kM;
      rec.phase = "joint";
    }

    state.epoch = epoch + 1;
    rec.mean_loss = stats.steps > 0 ? stats.loss_sum / static_cast<double>(stats.steps) : 0.0;
    rec.pseudo_positive_rate =
        stats.total_entries > 0.0 ? stats.positive_entries / stats.total_entries : 0.0;
    rec.elbo_proxy = elbo_proxy(state, dataset);
    rec.z_recall = detail::e_step_recall(state, dataset);
    write_log_record(log, rec);
    state.history.push_back(rec);
  }
  return state;
}

// FNV-1a over the raw parameter bytes; used to assert freeze discipline.
inline std::uint64_t parameter_hash(const ScoringNetwork& net) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](double v) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ull;
    }
  };
  for (const auto& layer : net.layers) {
    for (double w : layer.weights.data()) mix(w);
    for (double b : layer.bias) mix(b);
  }
  return h;
}

}  // namespace emmil
