#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "faultlens/attribution.hpp"
#include "faultlens/error.hpp"
#include "faultlens/io.hpp"
#include "faultlens/strict_json.hpp"
#include "faultlens/tensor.hpp"

namespace faultlens {

inline constexpr std::size_t kDefaultHorizon = 100;
inline constexpr std::size_t kDefaultTopK = 3;

/// An attribution map plus where its window sits in the source run.
struct WindowAttribution {
  AttributionMap map;
  std::size_t start = 0;
  std::size_t length = 0;
  std::optional<std::size_t> onset;
};

struct AggregatedScores {
  std::size_t fault_class = 0;
  Method method = Method::kIntegratedGradients;
  std::vector<double> mean_scores;
  std::size_t num_windows = 0;
  // [onset, onset + horizon) in samples, when the windows carried an onset.
  std::optional<std::pair<std::size_t, std::size_t>> window_span;
};

/// True when the window lies entirely inside [onset, onset + horizon).
/// Windows of runs without an onset are always inside.
inline bool within_horizon(const WindowAttribution& w, std::size_t horizon) {
  if (!w.onset) return true;
  return w.start >= *w.onset && w.start + w.length <= *w.onset + horizon;
}

/// Elementwise mean of the given maps. All must share method, target class
/// and width.
inline AggregatedScores aggregate(std::span<const AttributionMap> maps) {
  if (maps.empty()) throw InvalidArgument("aggregate needs at least 1 map");
  const AttributionMap& first = maps.front();
  AggregatedScores out;
  out.method = first.method;
  out.fault_class = first.target_class;
  out.mean_scores.assign(first.num_features(), 0.0);
  for (const AttributionMap& m : maps) {
    if (m.method != first.method) {
      throw InvalidArgument("aggregate: mixed methods " +
                            std::string(method_name(first.method)) + " and " +
                            std::string(method_name(m.method)));
    }
    if (m.target_class != first.target_class) {
      throw InvalidArgument("aggregate: mixed target classes");
    }
    if (m.num_features() != first.num_features()) {
      throw ShapeError("aggregate: maps have different feature counts");
    }
    for (std::size_t i = 0; i < m.scores.size(); ++i) {
      out.mean_scores[i] += m.scores[i];
    }
  }
  for (double& s : out.mean_scores) s /= static_cast<double>(maps.size());
  out.num_windows = maps.size();
  return out;
}

/// Mean over the windows that fall inside the first `horizon` post-onset
/// samples.
inline AggregatedScores aggregate(std::span<const WindowAttribution> windows,
                                  std::size_t horizon = kDefaultHorizon) {
  if (windows.empty()) throw InvalidArgument("aggregate needs at least 1 map");
  std::vector<AttributionMap> kept;
  std::optional<std::size_t> onset;
  for (const WindowAttribution& w : windows) {
    if (!within_horizon(w, horizon)) continue;
    kept.push_back(w.map);
    if (w.onset && !onset) onset = w.onset;
  }
  if (kept.empty()) {
    throw DataError("aggregate: no window lies within " +
                    std::to_string(horizon) + " samples after onset");
  }
  AggregatedScores out = aggregate(std::span<const AttributionMap>(kept));
  if (onset) out.window_span = std::make_pair(*onset, *onset + horizon);
  return out;
}

struct NormalizedScores {
  std::vector<double> values;
  bool zero_variance = false;
};

/// Population z-score across features. Constant input gives zeros with
/// `zero_variance` set.
inline NormalizedScores normalize(std::span<const double> s) {
  NormalizedScores out;
  out.values.assign(s.size(), 0.0);
  if (s.empty()) {
    out.zero_variance = true;
    return out;
  }
  for (double v : s) {
    if (!std::isfinite(v)) throw NumericError("normalize: non-finite score");
  }
  const double n = static_cast<double>(s.size());
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  double largest = 0.0;
  for (double v : s) largest = std::max(largest, std::abs(v));
  if (sd <= 1e-12 * largest) {
    out.zero_variance = true;
    return out;
  }
  for (std::size_t i = 0; i < s.size(); ++i) out.values[i] = (s[i] - mean) / sd;
  return out;
}

inline NormalizedScores normalize(const AggregatedScores& a) {
  return normalize(std::span<const double>(a.mean_scores));
}

/// Indices of the k largest scores, largest first. Ties go to the lower
/// index.
inline std::vector<std::size_t> top_k(std::span<const double> scores,
                                      std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw InvalidArgument("top_k: k must be in [1, " +
                          std::to_string(scores.size()) + "], got " +
                          std::to_string(k));
  }
  for (double v : scores) {
    if (std::isnan(v)) throw NumericError("top_k: NaN score");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  idx.resize(k);
  return idx;
}

inline std::vector<std::string> top_k_names(
    std::span<const double> scores, std::span<const std::string> features,
    std::size_t k) {
  if (features.size() != scores.size()) {
    throw ShapeError("top_k_names: " + std::to_string(features.size()) +
                     " names for " + std::to_string(scores.size()) + " scores");
  }
  std::vector<std::string> out;
  for (std::size_t i : top_k(scores, k)) out.push_back(features[i]);
  return out;
}

namespace detail {

/// 1-based ranks, ties get the average of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Spearman correlation with average ranks for ties. Defined as 0 when
/// either input has constant rank.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
  if (a.size() < 2) throw InvalidArgument("spearman needs at least 2 values");
  const auto ra = detail::average_ranks(a);
  const auto rb = detail::average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

struct AgreementResult {
  double top_k_overlap = 0.0;
  double rank_correlation = 0.0;
  std::vector<std::size_t> top_a;
  std::vector<std::size_t> top_b;
};

inline AgreementResult agreement(std::span<const double> a,
                                 std::span<const double> b,
                                 std::size_t k = kDefaultTopK) {
  if (a.size() != b.size()) {
    throw ShapeError("agreement: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + " features");
  }
  AgreementResult r;
  r.top_a = top_k(a, k);
  r.top_b = top_k(b, k);
  const std::set<std::size_t> sa(r.top_a.begin(), r.top_a.end());
  std::size_t common = 0;
  for (std::size_t i : r.top_b) common += sa.count(i);
  r.top_k_overlap = static_cast<double>(common) / static_cast<double>(k);
  r.rank_correlation = spearman(a, b);
  return r;
}

/// Expected-important channels per plant subsystem, and the subsystem each
/// fault class affects.
struct SubsystemMap {
  std::map<std::string, std::vector<std::string>> subsystems;
  std::map<std::string, std::string> faults;

  [[nodiscard]] bool has_fault(const std::string& fault) const {
    return faults.count(fault) > 0;
  }

  [[nodiscard]] const std::vector<std::string>& expected_channels(
      const std::string& fault) const {
    auto it = faults.find(fault);
    if (it == faults.end()) {
      throw InvalidArgument("fault class '" + fault +
                            "' is not in the subsystem map");
    }
    return subsystems.at(it->second);
  }

  /// Every fault points at a known subsystem and, when a schema is given,
  /// every channel exists in it.
  void validate(std::span<const std::string> schema = {}) const {
    for (const auto& [fault, sub] : faults) {
      if (!subsystems.count(sub)) {
        throw ConfigError("fault '" + fault + "' maps to unknown subsystem '" +
                          sub + "'");
      }
    }
    for (const auto& [name, channels] : subsystems) {
      if (channels.empty()) {
        throw ConfigError("subsystem '" + name + "' lists no channels");
      }
      if (schema.empty()) continue;
      for (const std::string& c : channels) {
        if (std::find(schema.begin(), schema.end(), c) == schema.end()) {
          throw ConfigError("subsystem '" + name + "' references channel '" +
                            c + "' that is not in the schema");
        }
      }
    }
  }

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"format", "faultlens-subsystems"},
            {"version", 1},
            {"subsystems", subsystems},
            {"faults", faults}};
  }

  static SubsystemMap from_json(const nlohmann::json& j) {
    json::reject_unknown_keys(j, {"format", "version", "description",
                                  "subsystems", "faults"},
                              "subsystem map");
    SubsystemMap m;
    try {
      if (j.at("format") != "faultlens-subsystems") {
        throw ConfigError("subsystem map: format must be faultlens-subsystems");
      }
      if (j.at("version") != 1) {
        throw ConfigError("subsystem map: unsupported version");
      }
      m.subsystems = j.at("subsystems")
                         .get<std::map<std::string, std::vector<std::string>>>();
      m.faults = j.at("faults").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("subsystem map: " + std::string(e.what()));
    }
    m.validate();
    return m;
  }
};

inline SubsystemMap load_subsystem_map(const std::filesystem::path& path) {
  try {
    return SubsystemMap::from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("subsystem map '" + path.string() + "': " + e.what());
  }
}

struct LocalizationResult {
  bool hit = false;
  double fraction = 0.0;  // |top-k ∩ expected| / k
  std::vector<std::string> top;
  std::vector<std::string> matched;
};

inline LocalizationResult localization_score(
    std::span<const double> normalized, std::span<const std::string> features,
    const SubsystemMap& map, const std::string& fault_class,
    std::size_t k = kDefaultTopK) {
  if (k == 0) throw InvalidArgument("localization_score: k must be >= 1");
  const auto& expected = map.expected_channels(fault_class);
  LocalizationResult r;
  r.top = top_k_names(normalized, features, k);
  for (const std::string& name : r.top) {
    if (std::find(expected.begin(), expected.end(), name) != expected.end()) {
      r.matched.push_back(name);
    }
  }
  r.hit = !r.matched.empty();
  r.fraction = static_cast<double>(r.matched.size()) / static_cast<double>(k);
  return r;
}

/// Per-channel |faulty - normal| over rows [from, to).
struct ChannelDeviation {
  double mean_abs = 0.0;
  double rms = 0.0;
  double max_abs = 0.0;
};

inline std::vector<ChannelDeviation> deviation_stats(const Tensor& faulty,
                                                     const Tensor& normal,
                                                     std::size_t from,
                                                     std::size_t to) {
  if (faulty.rank() != 2 || faulty.shape() != normal.shape()) {
    throw ShapeError("deviation_stats: traces must be matching [T x M]");
  }
  if (from >= to || to > faulty.dim(0)) {
    throw InvalidArgument("deviation_stats: bad row range [" +
                          std::to_string(from) + ", " + std::to_string(to) +
                          ")");
  }
  std::vector<ChannelDeviation> out(faulty.dim(1));
  const double n = static_cast<double>(to - from);
  for (std::size_t c = 0; c < out.size(); ++c) {
    double sum = 0.0, sq = 0.0, mx = 0.0;
    for (std::size_t t = from; t < to; ++t) {
      const double d = std::abs(faulty.at(t, c) - normal.at(t, c));
      sum += d;
      sq += d * d;
      mx = std::max(mx, d);
    }
    out[c] = {sum / n, std::sqrt(sq / n), mx};
  }
  return out;
}

}  // namespace faultlens
