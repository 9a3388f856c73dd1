#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "emmil/bags.hpp"
#include "emmil/dense_matrix.hpp"
#include "emmil/errors.hpp"

namespace emmil {

// E step: a clip is a key instance iff its classification score strictly
// exceeds the temporal column mean for at least one ground-truth class.
// Degenerate positive bags (nothing above threshold, e.g. constant columns)
// fall back to marking the best-scoring clip, first index on ties, so that a
// positive bag always carries at least one positive pseudo-label.
inline std::vector<std::uint8_t> e_step_pseudo_labels(const DenseMatrix& P, const BagLabel& y) {
  if (P.cols() != y.num_classes()) {
    throw ConfigError("e_step_pseudo_labels: P has " + std::to_string(P.cols()) +
                      " classes, label has " + std::to_string(y.num_classes()));
  }
  const std::size_t T = P.rows();
  std::vector<std::uint8_t> z_hat(T, 0);
  if (!y.any_positive()) return z_hat;

  const auto gt_classes = y.positive_classes();
  std::vector<double> means(gt_classes.size());
  for (std::size_t k = 0; k < gt_classes.size(); ++k) {
    means[k] = column_mean(P, gt_classes[k]);
  }

  bool any = false;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < gt_classes.size(); ++k) {
      if (P(t, gt_classes[k]) > means[k]) {
        z_hat[t] = 1;
        any = true;
        break;
      }
    }
  }
  if (!any) {
    std::size_t best_t = 0;
    double best = -1.0;
    for (std::size_t t = 0; t < T; ++t) {
      double row_best = 0.0;
      for (std::size_t c : gt_classes) row_best = std::max(row_best, P(t, c));
      if (row_best > best) {
        best = row_best;
        best_t = t;
      }
    }
    z_hat[best_t] = 1;
  }
  return z_hat;
}

// M step: clip t gets a positive label in every ground-truth class column iff
// Q_t strictly exceeds mean(Q) + gamma * (max(Q) - min(Q)). Negative bags stay
// all-zero. Same degenerate-bag fallback as the E step, on argmax(Q).
inline DenseMatrix m_step_pseudo_labels(const std::vector<double>& Q, const BagLabel& y,
                                        double gamma) {
  if (Q.empty()) throw ConfigError("m_step_pseudo_labels: empty Q");
  if (gamma < 0.0) throw ConfigError("m_step_pseudo_labels: gamma must be >= 0");
  const std::size_t T = Q.size();
  const std::size_t C = y.num_classes();
  DenseMatrix y_hat(T, C, 0.0);
  if (!y.any_positive()) return y_hat;

  const auto [min_it, max_it] = std::minmax_element(Q.begin(), Q.end());
  const double threshold = mean(Q) + gamma * (*max_it - *min_it);

  bool any = false;
  for (std::size_t t = 0; t < T; ++t) {
    if (Q[t] > threshold) {
      any = true;
      for (std::size_t c = 0; c < C; ++c) {
        if (y.positive(c)) y_hat(t, c) = 1.0;
      }
    }
  }
  if (!any) {
    const std::size_t best_t =
        static_cast<std::size_t>(std::distance(Q.begin(), std::max_element(Q.begin(), Q.end())));
    for (std::size_t c = 0; c < C; ++c) {
      if (y.positive(c)) y_hat(best_t, c) = 1.0;
    }
  }
  return y_hat;
}

struct ClassifierTargets {
  DenseMatrix targets;  // T x C, equals y_hat
  DenseMatrix mask;     // T x C, all ones: every entry is supervised
};

// Packaging for the classifier's BCE: all T x C entries are supervised, so
// background clips and negative bags are pushed toward zero everywhere.
inline ClassifierTargets masked_targets_for_classifier(const DenseMatrix& y_hat) {
  ClassifierTargets out;
  out.targets = y_hat;
  out.mask = DenseMatrix(y_hat.rows(), y_hat.cols(), 1.0);
  return out;
}

}  // namespace emmil
