#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "emmil/bags.hpp"
#include "emmil/dense_matrix.hpp"
#include "emmil/errors.hpp"

namespace emmil {

// Scored temporal segment; start/end are integer multiples of the clip
// duration by construction.
struct Proposal {
  std::string bag_id;
  std::size_t class_index = 0;
  double start_sec = 0.0;
  double end_sec = 0.0;
  double confidence = 0.0;
};

// L[t,c] = lambda * Q[t] + (1 - lambda) * P[t,c]
inline DenseMatrix fuse_scores(const std::vector<double>& Q, const DenseMatrix& P,
                               double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("fuse_scores: lambda must lie in [0, 1]");
  }
  if (Q.size() != P.rows()) {
    throw ConfigError("fuse_scores: Q length " + std::to_string(Q.size()) +
                      " != P rows " + std::to_string(P.rows()));
  }
  DenseMatrix L(P.rows(), P.cols());
  for (std::size_t t = 0; t < P.rows(); ++t) {
    for (std::size_t c = 0; c < P.cols(); ++c) {
      L(t, c) = lambda * Q[t] + (1.0 - lambda) * P(t, c);
    }
  }
  return L;
}

// Class c is predicted iff its best clip score clears 0.5.
inline std::vector<std::size_t> predict_classes(const DenseMatrix& P) {
  std::vector<std::size_t> classes;
  for (std::size_t c = 0; c < P.cols(); ++c) {
    double best = 0.0;
    for (std::size_t t = 0; t < P.rows(); ++t) best = std::max(best, P(t, c));
    if (best > 0.5) classes.push_back(c);
  }
  return classes;
}

enum class ConfidenceMode { kMean, kMax };

// Threshold each predicted class column at mean + gamma * (max - min), then
// turn maximal runs of strictly-above-threshold clips into proposals. A run
// may bridge up to gap_tolerance below-threshold clips (default: none).
inline std::vector<Proposal> propose(const DenseMatrix& L,
                                     const std::vector<std::size_t>& predicted_classes,
                                     double gamma, double clip_duration_sec,
                                     std::size_t gap_tolerance = 0,
                                     ConfidenceMode confidence_mode = ConfidenceMode::kMean) {
  if (gamma < 0.0) throw ConfigError("propose: gamma must be >= 0");
  if (clip_duration_sec <= 0.0) throw ConfigError("propose: clip duration must be > 0");
  const std::size_t T = L.rows();
  std::vector<Proposal> proposals;

  for (std::size_t c : predicted_classes) {
    if (c >= L.cols()) throw ConfigError("propose: predicted class out of range");
    double lo = L(0, c), hi = L(0, c), sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      lo = std::min(lo, L(t, c));
      hi = std::max(hi, L(t, c));
      sum += L(t, c);
    }
    const double threshold = sum / static_cast<double>(T) + gamma * (hi - lo);

    std::vector<std::uint8_t> above(T);
    for (std::size_t t = 0; t < T; ++t) above[t] = L(t, c) > threshold ? 1 : 0;
    if (gap_tolerance > 0) {
      // Fill short below-threshold gaps between above-threshold runs.
      std::size_t t = 0;
      while (t < T) {
        if (above[t]) { ++t; continue; }
        std::size_t gap_end = t;
        while (gap_end < T && !above[gap_end]) ++gap_end;
        const bool interior = t > 0 && gap_end < T;
        if (interior && gap_end - t <= gap_tolerance) {
          for (std::size_t g = t; g < gap_end; ++g) above[g] = 1;
        }
        t = gap_end;
      }
    }

    std::size_t t = 0;
    while (t < T) {
      if (!above[t]) { ++t; continue; }
      std::size_t end = t;
      while (end < T && above[end]) ++end;
      Proposal p;
      p.class_index = c;
      p.start_sec = static_cast<double>(t) * clip_duration_sec;
      p.end_sec = static_cast<double>(end) * clip_duration_sec;
      double conf = 0.0;
      for (std::size_t u = t; u < end; ++u) {
        conf = confidence_mode == ConfidenceMode::kMax ? std::max(conf, L(u, c))
                                                       : conf + L(u, c);
      }
      if (confidence_mode == ConfidenceMode::kMean) {
        conf /= static_cast<double>(end - t);
      }
      p.confidence = conf;
      proposals.push_back(p);
      t = end;
    }
  }
  return proposals;
}

// --- Proposal file: one record per line, 6-decimal fixed formatting -------
//   bag_id  class  start_sec  end_sec  confidence

inline std::string format_proposal_line(const Proposal& p) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s\t%zu\t%.6f\t%.6f\t%.6f", p.bag_id.c_str(), p.class_index,
                p.start_sec, p.end_sec, p.confidence);
  return buf;
}

inline void write_proposals(const std::vector<Proposal>& proposals,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("write_proposals: cannot open " + path.string());
  for (const auto& p : proposals) out << format_proposal_line(p) << "\n";
}

inline std::vector<Proposal> read_proposals(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("read_proposals: cannot open " + path.string());
  std::vector<Proposal> proposals;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Proposal p;
    if (!(ss >> p.bag_id >> p.class_index >> p.start_sec >> p.end_sec >> p.confidence)) {
      throw ConfigError("read_proposals: malformed line " + std::to_string(lineno) + " in " +
                        path.string());
    }
    proposals.push_back(p);
  }
  return proposals;
}

}  // namespace emmil
