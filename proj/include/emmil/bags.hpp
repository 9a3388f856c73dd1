#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emmil/dense_matrix.hpp"
#include "emmil/errors.hpp"

namespace emmil {

// A bag: T clip feature vectors of dimension d plus timing metadata.
struct FeatureSequence {
  std::string bag_id;
  DenseMatrix features;           // T x d
  double clip_duration_sec = 1.0;

  std::size_t num_clips() const { return features.rows(); }
  std::size_t feature_dim() const { return features.cols(); }
};

// Multi-hot video-level label; an all-zero vector is a pure-negative bag.
struct BagLabel {
  std::vector<std::uint8_t> y;

  std::size_t num_classes() const { return y.size(); }
  bool positive(std::size_t c) const { return y[c] != 0; }
  bool any_positive() const {
    for (auto v : y) {
      if (v) return true;
    }
    return false;
  }
  std::vector<std::size_t> positive_classes() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < y.size(); ++c) {
      if (y[c]) out.push_back(c);
    }
    return out;
  }
};

// Per-bag branch outputs: classification map P (T x C) and class-agnostic
// assignment scores Q (length T), all in (0,1).
struct ScoreMaps {
  DenseMatrix P;
  std::vector<double> Q;
};

// Hard binary targets produced by the E/M generators.
struct PseudoLabels {
  std::vector<std::uint8_t> z_hat;  // length T
  DenseMatrix y_hat;                // T x C with entries in {0,1}
};

// Evaluation/synthetic-data only; never visible to training.
struct GroundTruthSegment {
  std::size_t class_index = 0;
  double start_sec = 0.0;
  double end_sec = 0.0;
};

struct LabeledBag {
  FeatureSequence sequence;
  BagLabel label;
  std::optional<std::vector<GroundTruthSegment>> segments;
  std::optional<std::vector<std::uint8_t>> true_z;  // planted key-instance latents
};

struct Dataset {
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  double clip_duration_sec = 1.0;
  std::vector<LabeledBag> bags;

  bool has_ground_truth() const {
    for (const auto& bag : bags) {
      if (bag.segments.has_value()) return true;
    }
    return false;
  }
  std::size_t count_positive_bags() const {
    std::size_t n = 0;
    for (const auto& bag : bags) n += bag.label.any_positive() ? 1 : 0;
    return n;
  }
};

inline void validate_bag(const LabeledBag& bag, std::size_t num_classes,
                         std::size_t feature_dim) {
  if (bag.sequence.num_clips() == 0) {
    throw ConfigError("bag '" + bag.sequence.bag_id + "': T must be >= 1");
  }
  if (bag.sequence.feature_dim() != feature_dim) {
    throw ConfigError("bag '" + bag.sequence.bag_id + "': feature dim " +
                      std::to_string(bag.sequence.feature_dim()) + " != dataset dim " +
                      std::to_string(feature_dim));
  }
  if (bag.sequence.clip_duration_sec <= 0.0) {
    throw ConfigError("bag '" + bag.sequence.bag_id + "': clip_duration_sec must be > 0");
  }
  if (bag.label.num_classes() != num_classes) {
    throw ConfigError("bag '" + bag.sequence.bag_id + "': label length mismatch");
  }
  if (bag.segments.has_value()) {
    for (const auto& seg : *bag.segments) {
      if (seg.class_index >= num_classes) {
        throw ConfigError("bag '" + bag.sequence.bag_id + "': segment references class " +
                          std::to_string(seg.class_index) + " but dataset has " +
                          std::to_string(num_classes) + " classes");
      }
      if (!(seg.start_sec < seg.end_sec)) {
        throw ConfigError("bag '" + bag.sequence.bag_id + "': segment start must precede end");
      }
    }
  }
}

}  // namespace emmil
