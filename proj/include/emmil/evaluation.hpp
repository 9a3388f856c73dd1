#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "emmil/bags.hpp"
#include "emmil/data.hpp"
#include "emmil/errors.hpp"
#include "emmil/inference.hpp"

namespace emmil {

inline double tiou(double a_start, double a_end, double b_start, double b_end) {
  const double inter = std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const double uni = std::max(a_end, b_end) - std::min(a_start, b_start);
  return uni > 0.0 ? inter / uni : 0.0;
}

struct GtInstance {
  std::string bag_id;
  double start_sec;
  double end_sec;
};

// All-point interpolated AP for a single class: greedy matching in descending
// confidence order (ties broken by input order), one match per ground-truth
// segment, area under the monotone precision envelope. Recall denominator is
// the total ground-truth count.
inline double average_precision(const std::vector<Proposal>& proposals,
                                const std::vector<GtInstance>& gt, double alpha) {
  if (gt.empty()) return 0.0;

  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return proposals[a].confidence > proposals[b].confidence;
  });

  std::vector<bool> matched(gt.size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Proposal& p = proposals[order[k]];
    std::size_t best_gt = gt.size();
    double best_overlap = 0.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (matched[g] || gt[g].bag_id != p.bag_id) continue;
      const double ov = tiou(p.start_sec, p.end_sec, gt[g].start_sec, gt[g].end_sec);
      if (ov > best_overlap) {
        best_overlap = ov;
        best_gt = g;
      }
    }
    if (best_gt < gt.size() && best_overlap >= alpha) {
      matched[best_gt] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt.size()));
  }
  if (precision.empty()) return 0.0;

  // Monotone envelope from the right, then sum over recall increments.
  for (std::size_t k = precision.size() - 1; k-- > 0;) {
    precision[k] = std::max(precision[k], precision[k + 1]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

struct InstanceMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  std::vector<double> alphas;
  // ap_per_class[c] is empty when class c has no ground truth (excluded from mAP).
  std::vector<std::vector<double>> ap_per_class;  // [class][alpha index]
  std::vector<double> map_per_alpha;
  double average_map = 0.0;  // mean mAP over tIoU 0.5:0.05:0.95
  InstanceMetrics instance;
  bool has_instance_metrics = false;
  std::size_t proposal_count = 0;
  std::vector<std::size_t> proposals_per_class;
};

inline std::vector<double> standard_average_map_alphas() {
  std::vector<double> alphas;
  for (int i = 0; i < 10; ++i) alphas.push_back(0.5 + 0.05 * i);
  return alphas;
}

inline std::vector<double> default_report_alphas() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
}

// Clips covered by any proposal vs planted z, pooled over all annotated bags.
inline std::optional<InstanceMetrics> instance_metrics(const std::vector<Proposal>& proposals,
                                                       const Dataset& dataset) {
  std::map<std::string, std::vector<std::uint8_t>> predicted;
  std::map<std::string, const LabeledBag*> by_id;
  for (const auto& bag : dataset.bags) by_id[bag.sequence.bag_id] = &bag;
  for (const auto& p : proposals) {
    auto it = by_id.find(p.bag_id);
    if (it == by_id.end()) {
      throw ConfigError("instance_metrics: unknown bag_id '" + p.bag_id + "' in proposals");
    }
    auto& mask = predicted[p.bag_id];
    const std::size_t T = it->second->sequence.num_clips();
    mask.resize(T, 0);
    const double dur = it->second->sequence.clip_duration_sec;
    for (std::size_t t = 0; t < T; ++t) {
      const double center = (static_cast<double>(t) + 0.5) * dur;
      if (center >= p.start_sec && center < p.end_sec) mask[t] = 1;
    }
  }

  std::size_t tp = 0, fp = 0, fn = 0;
  bool any_z = false;
  for (const auto& bag : dataset.bags) {
    if (!bag.true_z.has_value()) continue;
    any_z = true;
    const auto& z = *bag.true_z;
    const auto it = predicted.find(bag.sequence.bag_id);
    for (std::size_t t = 0; t < z.size(); ++t) {
      const bool pred = it != predicted.end() && t < it->second.size() && it->second[t];
      if (pred && z[t]) ++tp;
      else if (pred && !z[t]) ++fp;
      else if (!pred && z[t]) ++fn;
    }
  }
  if (!any_z) return std::nullopt;

  InstanceMetrics m;
  m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

inline EvalReport evaluate(const std::vector<Proposal>& proposals, const Dataset& dataset,
                           const std::vector<double>& alphas = default_report_alphas()) {
  std::map<std::string, const LabeledBag*> by_id;
  for (const auto& bag : dataset.bags) by_id[bag.sequence.bag_id] = &bag;
  for (const auto& p : proposals) {
    if (by_id.find(p.bag_id) == by_id.end()) {
      throw ConfigError("evaluate: unknown bag_id '" + p.bag_id + "' in proposals");
    }
    if (p.class_index >= dataset.num_classes) {
      throw ConfigError("evaluate: proposal class out of range");
    }
  }

  const std::size_t C = dataset.num_classes;
  std::vector<std::vector<GtInstance>> gt_per_class(C);
  for (const auto& bag : dataset.bags) {
    if (!bag.segments.has_value()) continue;
    for (const auto& seg : *bag.segments) {
      gt_per_class[seg.class_index].push_back({bag.sequence.bag_id, seg.start_sec, seg.end_sec});
    }
  }
  std::vector<std::vector<Proposal>> props_per_class(C);
  for (const auto& p : proposals) props_per_class[p.class_index].push_back(p);

  EvalReport report;
  report.alphas = alphas;
  report.ap_per_class.assign(C, {});
  report.proposal_count = proposals.size();
  report.proposals_per_class.assign(C, 0);
  for (std::size_t c = 0; c < C; ++c) report.proposals_per_class[c] = props_per_class[c].size();

  auto map_at = [&](double alpha, std::vector<double>* per_class_out) {
    double sum = 0.0;
    std::size_t classes_with_gt = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (gt_per_class[c].empty()) continue;
      const double ap = average_precision(props_per_class[c], gt_per_class[c], alpha);
      if (per_class_out != nullptr) (*per_class_out)[c] = ap;
      sum += ap;
      ++classes_with_gt;
    }
    return classes_with_gt > 0 ? sum / static_cast<double>(classes_with_gt) : 0.0;
  };

  std::vector<double> scratch(C, 0.0);
  for (double alpha : alphas) {
    std::fill(scratch.begin(), scratch.end(), 0.0);
    report.map_per_alpha.push_back(map_at(alpha, &scratch));
    for (std::size_t c = 0; c < C; ++c) {
      if (!gt_per_class[c].empty()) report.ap_per_class[c].push_back(scratch[c]);
    }
  }

  double avg = 0.0;
  const auto avg_alphas = standard_average_map_alphas();
  for (double alpha : avg_alphas) avg += map_at(alpha, nullptr);
  report.average_map = avg / static_cast<double>(avg_alphas.size());

  const auto inst = instance_metrics(proposals, dataset);
  if (inst.has_value()) {
    report.instance = *inst;
    report.has_instance_metrics = true;
  }
  return report;
}

// Table-style text report: one column per alpha, a row of mAP values, the
// average-mAP line, then instance metrics and proposal counts.
inline std::string format_report(const EvalReport& report) {
  std::string out;
  char buf[128];
  out += "alpha   ";
  for (double a : report.alphas) {
    std::snprintf(buf, sizeof(buf), " %8.2f", a);
    out += buf;
  }
  out += "\nmAP     ";
  for (double m : report.map_per_alpha) {
    std::snprintf(buf, sizeof(buf), " %8.4f", m);
    out += buf;
  }
  out += "\n";
  std::snprintf(buf, sizeof(buf), "average mAP (0.50:0.05:0.95) = %.4f\n", report.average_map);
  out += buf;
  if (report.has_instance_metrics) {
    std::snprintf(buf, sizeof(buf),
                  "instance precision = %.4f recall = %.4f f1 = %.4f\n",
                  report.instance.precision, report.instance.recall, report.instance.f1);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "proposals = %zu\n", report.proposal_count);
  out += buf;
  for (std::size_t c = 0; c < report.proposals_per_class.size(); ++c) {
    std::snprintf(buf, sizeof(buf), "  class %zu: %zu\n", c, report.proposals_per_class[c]);
    out += buf;
  }
  return out;
}

}  // namespace emmil
