#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "emmil/bags.hpp"
#include "emmil/dense_matrix.hpp"
#include "emmil/errors.hpp"

namespace emmil {

// Knobs for the planted-concept generator. Positive bags carry contiguous
// segments of clips drawn near a per-class concept point; everything else is
// background noise around the origin.
struct SynthSpec {
  std::size_t num_classes = 3;
  std::size_t feature_dim = 16;
  double concept_radius = 4.0;               // concepts sit at radius * e_c
  std::vector<std::vector<double>> concepts;  // optional explicit concept points
  double sigma_pos = 0.5;
  double sigma_neg = 0.5;
  std::size_t min_clips = 20;
  std::size_t max_clips = 60;
  std::size_t min_segments = 1;
  std::size_t max_segments = 3;
  std::size_t min_segment_len = 3;
  std::size_t max_segment_len = 8;
  double witness_rate = 0.5;        // cap on the positive-clip fraction per bag
  double co_occurrence_prob = 0.25;  // chance a positive bag carries a 2nd class
  std::size_t num_positive_bags = 40;
  std::size_t num_negative_bags = 20;
  double clip_duration_sec = 1.25;
  std::uint64_t seed = 1;
};

inline SynthSpec separable_default_spec() { return SynthSpec{}; }

inline void validate_spec(const SynthSpec& spec) {
  if (spec.num_classes == 0) throw ConfigError("SynthSpec: num_classes must be >= 1");
  if (spec.feature_dim == 0) throw ConfigError("SynthSpec: feature_dim must be >= 1");
  if (spec.min_clips == 0) throw ConfigError("SynthSpec: min_clips must be >= 1");
  if (spec.min_clips > spec.max_clips) throw ConfigError("SynthSpec: min_clips > max_clips");
  if (spec.min_segments == 0) throw ConfigError("SynthSpec: min_segments must be >= 1");
  if (spec.min_segments > spec.max_segments) {
    throw ConfigError("SynthSpec: min_segments > max_segments");
  }
  if (spec.min_segment_len == 0) throw ConfigError("SynthSpec: min_segment_len must be >= 1");
  if (spec.min_segment_len > spec.max_segment_len) {
    throw ConfigError("SynthSpec: min_segment_len > max_segment_len");
  }
  if (spec.max_segment_len > spec.min_clips) {
    throw ConfigError("SynthSpec: max_segment_len exceeds min_clips; segments may not fit");
  }
  if (spec.witness_rate <= 0.0 || spec.witness_rate > 1.0) {
    throw ConfigError("SynthSpec: witness_rate must be in (0, 1]");
  }
  if (spec.co_occurrence_prob < 0.0 || spec.co_occurrence_prob > 1.0) {
    throw ConfigError("SynthSpec: co_occurrence_prob must be in [0, 1]");
  }
  if (spec.num_positive_bags == 0) throw ConfigError("SynthSpec: need at least one positive bag");
  if (spec.clip_duration_sec <= 0.0) throw ConfigError("SynthSpec: clip_duration_sec must be > 0");
  if (!spec.concepts.empty()) {
    if (spec.concepts.size() != spec.num_classes) {
      throw ConfigError("SynthSpec: concepts list must have one point per class");
    }
    for (const auto& mu : spec.concepts) {
      if (mu.size() != spec.feature_dim) {
        throw ConfigError("SynthSpec: concept dimensionality mismatch");
      }
    }
  } else if (spec.num_classes > spec.feature_dim) {
    throw ConfigError("SynthSpec: default axis-aligned concepts need num_classes <= feature_dim");
  }
}

inline std::vector<std::vector<double>> concept_points(const SynthSpec& spec) {
  if (!spec.concepts.empty()) return spec.concepts;
  std::vector<std::vector<double>> mus(spec.num_classes,
                                       std::vector<double>(spec.feature_dim, 0.0));
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    mus[c][c] = spec.concept_radius;
  }
  return mus;
}

namespace detail {

// Features are stored on disk as float32, so quantize at generation time to
// make generate -> save -> load an exact round trip.
inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

struct PlannedSegment {
  std::size_t class_index;
  std::size_t length;
  std::size_t start_clip = 0;
};

}  // namespace detail

// Deterministic under spec.seed. Every positive bag carries at least one
// planted segment per labeled class; negative bags are pure background.
inline Dataset generate(const SynthSpec& spec) {
  validate_spec(spec);
  std::mt19937_64 rng(spec.seed);
  const auto mus = concept_points(spec);

  Dataset dataset;
  dataset.num_classes = spec.num_classes;
  dataset.feature_dim = spec.feature_dim;
  dataset.clip_duration_sec = spec.clip_duration_sec;

  std::normal_distribution<double> unit_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t total = spec.num_positive_bags + spec.num_negative_bags;

  for (std::size_t b = 0; b < total; ++b) {
    const bool positive = b < spec.num_positive_bags;
    LabeledBag bag;
    char name[32];
    std::snprintf(name, sizeof(name), "bag%04zu", b);
    bag.sequence.bag_id = name;
    bag.sequence.clip_duration_sec = spec.clip_duration_sec;
    bag.label.y.assign(spec.num_classes, 0);

    std::uniform_int_distribution<std::size_t> clips_dist(spec.min_clips, spec.max_clips);
    const std::size_t T = clips_dist(rng);

    std::vector<std::size_t> bag_classes;
    if (positive) {
      bag_classes.push_back(b % spec.num_classes);
      if (spec.num_classes > 1 && unit(rng) < spec.co_occurrence_prob) {
        std::uniform_int_distribution<std::size_t> extra(1, spec.num_classes - 1);
        bag_classes.push_back((bag_classes[0] + extra(rng)) % spec.num_classes);
      }
      for (std::size_t c : bag_classes) bag.label.y[c] = 1;
    }

    // Plan segments: lengths first, then trim to the witness-rate budget while
    // keeping at least one segment (of length >= 1) per labeled class.
    std::vector<detail::PlannedSegment> plan;
    if (positive) {
      std::uniform_int_distribution<std::size_t> nseg_dist(spec.min_segments, spec.max_segments);
      std::uniform_int_distribution<std::size_t> len_dist(spec.min_segment_len,
                                                          spec.max_segment_len);
      for (std::size_t c : bag_classes) {
        const std::size_t nseg = nseg_dist(rng);
        for (std::size_t s = 0; s < nseg; ++s) {
          plan.push_back({c, len_dist(rng)});
        }
      }
      const std::size_t budget = std::max(
          bag_classes.size(),
          static_cast<std::size_t>(std::floor(spec.witness_rate * static_cast<double>(T))));
      auto total_len = [&plan]() {
        std::size_t n = 0;
        for (const auto& s : plan) n += s.length;
        return n;
      };
      auto class_count = [&plan](std::size_t c) {
        std::size_t n = 0;
        for (const auto& s : plan) n += (s.class_index == c) ? 1 : 0;
        return n;
      };
      // Drop surplus segments from the back, then shave the longest ones.
      for (std::size_t i = plan.size(); i-- > 0 && total_len() > budget;) {
        if (class_count(plan[i].class_index) > 1) plan.erase(plan.begin() + i);
      }
      while (total_len() > budget) {
        auto longest = std::max_element(plan.begin(), plan.end(),
                                        [](const auto& a, const auto& b) {
                                          return a.length < b.length;
                                        });
        if (longest->length <= 1) break;
        longest->length -= 1;
      }
      std::shuffle(plan.begin(), plan.end(), rng);

      // Scatter the leftover background clips into gaps around the segments.
      std::size_t free_clips = T - std::min(T, total_len());
      std::size_t cursor = 0;
      for (auto& seg : plan) {
        std::uniform_int_distribution<std::size_t> gap_dist(0, free_clips);
        const std::size_t gap = gap_dist(rng);
        cursor += gap;
        free_clips -= gap;
        seg.start_clip = cursor;
        cursor += seg.length;
      }
    }

    bag.sequence.features = DenseMatrix(T, spec.feature_dim);
    std::vector<std::uint8_t> z(T, 0);
    std::vector<std::size_t> clip_class(T, spec.num_classes);  // num_classes = background
    for (const auto& seg : plan) {
      for (std::size_t t = seg.start_clip; t < seg.start_clip + seg.length; ++t) {
        z[t] = 1;
        clip_class[t] = seg.class_index;
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      const bool in_concept = clip_class[t] < spec.num_classes;
      const double sigma = in_concept ? spec.sigma_pos : spec.sigma_neg;
      for (std::size_t j = 0; j < spec.feature_dim; ++j) {
        const double center = in_concept ? mus[clip_class[t]][j] : 0.0;
        bag.sequence.features(t, j) = detail::quantize_f32(center + sigma * unit_normal(rng));
      }
    }

    std::vector<GroundTruthSegment> segments;
    for (const auto& seg : plan) {
      GroundTruthSegment gt;
      gt.class_index = seg.class_index;
      gt.start_sec = static_cast<double>(seg.start_clip) * spec.clip_duration_sec;
      gt.end_sec = static_cast<double>(seg.start_clip + seg.length) * spec.clip_duration_sec;
      segments.push_back(gt);
    }
    bag.segments = std::move(segments);
    bag.true_z = std::move(z);
    validate_bag(bag, spec.num_classes, spec.feature_dim);
    dataset.bags.push_back(std::move(bag));
  }
  return dataset;
}

// --- Dataset directory format -------------------------------------------
//
//   <dir>/index.json            bag ids, labels, clip duration, optional GT
//   <dir>/features/<id>.bin     16-byte header (u64 T, u64 d, little endian)
//                               followed by T*d float32, row-major
namespace detail {

inline void write_u64_le(std::ofstream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64_le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> z_from_segments(const std::vector<GroundTruthSegment>& segments,
                                                 std::size_t T, double clip_duration_sec) {
  std::vector<std::uint8_t> z(T, 0);
  for (const auto& seg : segments) {
    // A clip is inside the segment iff its center falls within [start, end).
    for (std::size_t t = 0; t < T; ++t) {
      const double center = (static_cast<double>(t) + 0.5) * clip_duration_sec;
      if (center >= seg.start_sec && center < seg.end_sec) z[t] = 1;
    }
  }
  return z;
}

inline void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  nlohmann::json index;
  index["format_version"] = 1;
  index["num_classes"] = dataset.num_classes;
  index["feature_dim"] = dataset.feature_dim;
  index["clip_duration_sec"] = dataset.clip_duration_sec;
  nlohmann::json bags = nlohmann::json::array();
  for (const auto& bag : dataset.bags) {
    nlohmann::json jb;
    jb["id"] = bag.sequence.bag_id;
    jb["num_clips"] = bag.sequence.num_clips();
    jb["labels"] = bag.label.positive_classes();
    if (bag.segments.has_value()) {
      nlohmann::json segs = nlohmann::json::array();
      for (const auto& seg : *bag.segments) {
        segs.push_back({{"class", seg.class_index},
                        {"start_sec", seg.start_sec},
                        {"end_sec", seg.end_sec}});
      }
      jb["segments"] = segs;
    }
    bags.push_back(jb);

    std::ofstream bin(dir / "features" / (bag.sequence.bag_id + ".bin"), std::ios::binary);
    if (!bin) throw ConfigError("save_dataset: cannot write feature file for " + bag.sequence.bag_id);
    detail::write_u64_le(bin, bag.sequence.num_clips());
    detail::write_u64_le(bin, bag.sequence.feature_dim());
    for (std::size_t t = 0; t < bag.sequence.num_clips(); ++t) {
      for (std::size_t j = 0; j < bag.sequence.feature_dim(); ++j) {
        const float f = static_cast<float>(bag.sequence.features(t, j));
        static_assert(sizeof(float) == 4);
        bin.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
  }
  index["bags"] = bags;
  std::ofstream out(dir / "index.json");
  if (!out) throw ConfigError("save_dataset: cannot write index.json");
  out << index.dump(2) << "\n";
}

inline Dataset load_features(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw ConfigError("load_features: missing " + (dir / "index.json").string());
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("load_features: malformed index.json: " + std::string(e.what()));
  }

  Dataset dataset;
  try {
    dataset.num_classes = index.at("num_classes").get<std::size_t>();
    dataset.feature_dim = index.at("feature_dim").get<std::size_t>();
    dataset.clip_duration_sec = index.at("clip_duration_sec").get<double>();
    for (const auto& jb : index.at("bags")) {
      LabeledBag bag;
      bag.sequence.bag_id = jb.at("id").get<std::string>();
      bag.sequence.clip_duration_sec = dataset.clip_duration_sec;
      const auto expected_clips = jb.at("num_clips").get<std::uint64_t>();

      bag.label.y.assign(dataset.num_classes, 0);
      for (const auto& c : jb.at("labels")) {
        const auto ci = c.get<std::size_t>();
        if (ci >= dataset.num_classes) {
          throw ConfigError("load_features: bag '" + bag.sequence.bag_id +
                            "' labels reference unknown class " + std::to_string(ci));
        }
        bag.label.y[ci] = 1;
      }

      const auto bin_path = dir / "features" / (bag.sequence.bag_id + ".bin");
      std::ifstream bin(bin_path, std::ios::binary);
      if (!bin) throw ConfigError("load_features: missing feature file " + bin_path.string());
      const std::uint64_t T = detail::read_u64_le(bin);
      const std::uint64_t d = detail::read_u64_le(bin);
      if (!bin) throw ConfigError("load_features: truncated header in " + bin_path.string());
      if (T == 0) {
        throw ConfigError("load_features: bag '" + bag.sequence.bag_id + "' declares T=0");
      }
      if (T != expected_clips) {
        throw ConfigError("load_features: bag '" + bag.sequence.bag_id +
                          "' clip count disagrees with index.json");
      }
      if (d != dataset.feature_dim) {
        throw ConfigError("load_features: bag '" + bag.sequence.bag_id + "' has feature dim " +
                          std::to_string(d) + ", dataset declares " +
                          std::to_string(dataset.feature_dim));
      }
      bag.sequence.features = DenseMatrix(T, d);
      std::vector<float> row(d);
      for (std::uint64_t t = 0; t < T; ++t) {
        bin.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(4 * d));
        if (!bin) {
          throw ConfigError("load_features: truncated feature file " + bin_path.string());
        }
        for (std::uint64_t j = 0; j < d; ++j) {
          bag.sequence.features(t, j) = static_cast<double>(row[j]);
        }
      }

      if (jb.contains("segments")) {
        std::vector<GroundTruthSegment> segments;
        for (const auto& js : jb.at("segments")) {
          GroundTruthSegment seg;
          seg.class_index = js.at("class").get<std::size_t>();
          seg.start_sec = js.at("start_sec").get<double>();
          seg.end_sec = js.at("end_sec").get<double>();
          segments.push_back(seg);
        }
        bag.segments = std::move(segments);
        bag.true_z = z_from_segments(*bag.segments, T, dataset.clip_duration_sec);
      }
      validate_bag(bag, dataset.num_classes, dataset.feature_dim);
      dataset.bags.push_back(std::move(bag));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("load_features: malformed index.json: " + std::string(e.what()));
  }
  return dataset;
}

// FNV-1a over index.json plus every feature file, in index order.
inline std::uint64_t dataset_fingerprint(const std::filesystem::path& dir) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_file = [&h](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("dataset_fingerprint: cannot read " + p.string());
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
      for (std::streamsize i = 0; i < in.gcount(); ++i) {
        h ^= static_cast<unsigned char>(buf[i]);
        h *= 1099511628211ull;
      }
    }
  };
  mix_file(dir / "index.json");
  std::ifstream in(dir / "index.json");
  nlohmann::json index;
  in >> index;
  for (const auto& jb : index.at("bags")) {
    mix_file(dir / "features" / (jb.at("id").get<std::string>() + ".bin"));
  }
  return h;
}

}  // namespace emmil
