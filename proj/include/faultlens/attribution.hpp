#pragma once

// Integrated Gradients and Shapley-value attribution over sensor channels.

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "faultlens/csv.hpp"
#include "faultlens/dataset.hpp"
#include "faultlens/error.hpp"
#include "faultlens/tensor.hpp"
#include "faultlens/window.hpp"

namespace faultlens {

/// Anything that scores batches of [T x M] windows: SequenceModel, or the
/// closed-form surrogates used in tests.
template <class M>
concept BatchScorer = requires(const M& m, const Tensor& batch,
                               std::size_t target) {
  { m.window_shape() } -> std::convertible_to<Shape>;
  { m.num_classes() } -> std::convertible_to<std::size_t>;
  { m.logit_batch(batch, target) } -> std::convertible_to<std::vector<double>>;
};

/// A scorer that also provides input gradients of the target logit.
template <class M>
concept DifferentiableScorer =
    BatchScorer<M> && requires(const M& m, const Tensor& batch,
                               std::size_t target, std::vector<double>* v) {
      { m.logit_gradient_batch(batch, target, v) } -> std::convertible_to<Tensor>;
    };

// ---------------------------------------------------------------------------
// Baselines

enum class BaselineKind { kZeros, kNormalMean, kCustom };

inline std::string_view baseline_kind_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::kZeros: return "zeros";
    case BaselineKind::kNormalMean: return "normal_mean";
    case BaselineKind::kCustom: return "custom";
  }
  return "?";
}

inline BaselineKind parse_baseline_kind(std::string_view s) {
  if (s == "zeros") return BaselineKind::kZeros;
  if (s == "normal_mean") return BaselineKind::kNormalMean;
  if (s == "custom") return BaselineKind::kCustom;
  throw InvalidArgument("unknown baseline kind '" + std::string(s) +
                        "' (expected zeros, normal_mean or custom)");
}

/// Reference input x' for IG paths and for absent channels in coalitions.
struct Baseline {
  Tensor values;  // [T x M]
  BaselineKind kind = BaselineKind::kZeros;
};

/// Builds a baseline of the given [T x M] shape. normal_mean averages every
/// entry of the normal-labeled windows per channel and tiles it over time.
inline Baseline make_baseline(std::span<const TimeSeriesWindow> windows,
                              BaselineKind kind, const Shape& shape,
                              const std::optional<Tensor>& custom = std::nullopt) {
  if (shape.size() != 2) throw ShapeError("baseline shape must be [T x M]");
  switch (kind) {
    case BaselineKind::kZeros:
      return {Tensor(shape, 0.0), kind};
    case BaselineKind::kCustom:
      if (!custom) throw InvalidArgument("custom baseline needs values");
      if (custom->shape() != shape) {
        throw ShapeError("custom baseline has shape " +
                         shape_string(custom->shape()) + ", expected " +
                         shape_string(shape));
      }
      return {*custom, kind};
    case BaselineKind::kNormalMean: {
      const std::size_t channels = shape[1];
      std::vector<double> sum(channels, 0.0);
      std::size_t count = 0;
      for (const TimeSeriesWindow& w : windows) {
        if (w.label != kNormalClass) continue;
        if (w.values.cols() != channels) {
          throw ShapeError("window width " + std::to_string(w.values.cols()) +
                           " does not match baseline width " +
                           std::to_string(channels));
        }
        for (std::size_t t = 0; t < w.length(); ++t) {
          for (std::size_t c = 0; c < channels; ++c) sum[c] += w.values.at(t, c);
        }
        count += w.length();
      }
      if (count == 0) {
        throw DataError("normal_mean baseline requested but there are no "
                        "normal-class windows");
      }
      Tensor out(shape);
      for (std::size_t t = 0; t < shape[0]; ++t) {
        for (std::size_t c = 0; c < channels; ++c) {
          out.at(t, c) = sum[c] / static_cast<double>(count);
        }
      }
      return {std::move(out), kind};
    }
  }
  throw InvalidArgument("unknown baseline kind");
}

/// Baseline over the training-split windows of a dataset, in the dataset's
/// standardized units.
inline Baseline make_baseline(const Dataset& ds, BaselineKind kind,
                              std::size_t window_len,
                              const std::optional<Tensor>& custom = std::nullopt) {
  const Shape shape{window_len, ds.num_channels()};
  if (kind != BaselineKind::kNormalMean) {
    return make_baseline(std::span<const TimeSeriesWindow>{}, kind, shape, custom);
  }
  const auto windows = make_windows(
      ds, WindowOptions{window_len, std::max<std::size_t>(ds.stride, 1),
                        Split::kTrain, std::nullopt});
  return make_baseline(windows, kind, shape);
}

// ---------------------------------------------------------------------------
// Attribution maps

enum class Method { kIntegratedGradients, kShapExact, kShapSampled };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kIntegratedGradients: return "IG";
    case Method::kShapExact: return "SHAP_exact";
    case Method::kShapSampled: return "SHAP_sampled";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "IG") return Method::kIntegratedGradients;
  if (s == "SHAP_exact") return Method::kShapExact;
  if (s == "SHAP_sampled") return Method::kShapSampled;
  throw ParseError("unknown attribution method '" + std::string(s) + "'");
}

/// IG and both Shapley estimators count as one family each when comparing.
inline bool is_shapley(Method m) { return m != Method::kIntegratedGradients; }

struct AttributionDiagnostics {
  double output = 0.0;           // F(x)
  double baseline_output = 0.0;  // F(x')
  std::optional<double> completeness_gap;
  std::optional<double> efficiency_gap;
  std::vector<double> standard_error;  // sampled Shapley only
  std::size_t steps = 0;               // IG quadrature points
  std::size_t permutations = 0;        // sampled permutations
  std::size_t evaluations = 0;         // model rows evaluated
};

struct AttributionMap {
  Method method = Method::kIntegratedGradients;
  std::size_t target_class = 0;
  std::vector<double> scores;         // one per channel
  std::optional<Tensor> per_timestep;  // [T x M], IG only
  AttributionDiagnostics diagnostics;

  [[nodiscard]] std::size_t num_features() const { return scores.size(); }
  [[nodiscard]] double total() const {
    return std::accumulate(scores.begin(), scores.end(), 0.0);
  }
};

namespace detail {

inline void check_inputs(const Shape& model_shape, const Tensor& window,
                         const Baseline& baseline) {
  if (window.shape() != model_shape) {
    throw ShapeError("window has shape " + shape_string(window.shape()) +
                     ", model expects " + shape_string(model_shape));
  }
  if (baseline.values.shape() != model_shape) {
    throw ShapeError("baseline has shape " +
                     shape_string(baseline.values.shape()) +
                     ", model expects " + shape_string(model_shape));
  }
}

template <BatchScorer M>
std::size_t resolve_target(const M& model, const Tensor& window,
                           std::optional<std::size_t> target) {
  if (target) {
    if (*target >= model.num_classes()) {
      throw InvalidArgument("target class " + std::to_string(*target) +
                            " out of range [0, " +
                            std::to_string(model.num_classes()) + ")");
    }
    return *target;
  }
  const Tensor batch = window.reshaped({1, window.dim(0), window.dim(1)});
  std::size_t best = 0;
  double best_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < model.num_classes(); ++k) {
    const double v = model.logit_batch(batch, k).at(0);
    if (v > best_logit) {
      best_logit = v;
      best = k;
    }
  }
  return best;
}

template <BatchScorer M>
std::pair<double, double> endpoint_outputs(const M& model, const Tensor& x,
                                           const Tensor& base,
                                           std::size_t target) {
  const std::size_t n = x.size();
  Tensor batch({2, x.dim(0), x.dim(1)});
  std::copy(x.values().begin(), x.values().end(), batch.data().begin());
  std::copy(base.values().begin(), base.values().end(),
            batch.data().begin() + static_cast<std::ptrdiff_t>(n));
  const auto out = model.logit_batch(batch, target);
  return {out.at(0), out.at(1)};
}

inline constexpr std::size_t kRowsPerBatch = 256;

}  // namespace detail

// ---------------------------------------------------------------------------
// Integrated Gradients

/// Midpoint Riemann approximation of the path integral from the baseline to
/// the window, attributed per entry and summed per channel.
template <DifferentiableScorer M>
AttributionMap integrated_gradients(const M& model, const Tensor& window,
                                    const Baseline& baseline,
                                    std::optional<std::size_t> target,
                                    std::size_t steps) {
  if (steps < 1) throw InvalidArgument("IG needs steps >= 1");
  const Shape shape = model.window_shape();
  detail::check_inputs(shape, window, baseline);
  const std::size_t cls = detail::resolve_target(model, window, target);
  const std::size_t t_len = shape[0], m = shape[1], n = t_len * m;
  const auto x = window.data();
  const auto b = baseline.values.data();

  std::vector<double> grad_sum(n, 0.0);
  const std::size_t chunk = std::max<std::size_t>(1, detail::kRowsPerBatch);
  for (std::size_t s0 = 0; s0 < steps; s0 += chunk) {
    const std::size_t rows = std::min(chunk, steps - s0);
    Tensor batch({rows, t_len, m});
    auto d = batch.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double alpha = (static_cast<double>(s0 + r) + 0.5) /
                           static_cast<double>(steps);
      for (std::size_t i = 0; i < n; ++i) {
        d[r * n + i] = b[i] + alpha * (x[i] - b[i]);
      }
    }
    const Tensor g = model.logit_gradient_batch(batch, cls, nullptr);
    const auto gv = g.values();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < n; ++i) grad_sum[i] += gv[r * n + i];
    }
  }

  AttributionMap out;
  out.method = Method::kIntegratedGradients;
  out.target_class = cls;
  out.scores.assign(m, 0.0);
  Tensor per({t_len, m});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = (x[i] - b[i]) * grad_sum[i] / static_cast<double>(steps);
    if (!std::isfinite(a)) {
      throw NumericError("integrated gradients produced a non-finite value "
                         "at entry " + std::to_string(i));
    }
    per.data()[i] = a;
    total += a;
  }
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t t = 0; t < t_len; ++t) out.scores[c] += per.at(t, c);
  }
  const auto [fx, fb] = detail::endpoint_outputs(model, window, baseline.values, cls);
  out.per_timestep = std::move(per);
  out.diagnostics.output = fx;
  out.diagnostics.baseline_output = fb;
  out.diagnostics.completeness_gap = std::abs(total - (fx - fb));
  out.diagnostics.steps = steps;
  out.diagnostics.evaluations = steps + 2;
  return out;
}

struct IgOptions {
  std::size_t steps = 64;
  std::size_t max_steps = 256;
  double relative_tolerance = 1e-3;
  double absolute_tolerance = 1e-6;
};

inline bool completeness_ok(const AttributionMap& m, const IgOptions& opt) {
  const double delta =
      std::abs(m.diagnostics.output - m.diagnostics.baseline_output);
  return m.diagnostics.completeness_gap.value_or(0.0) <=
         opt.relative_tolerance * delta + opt.absolute_tolerance;
}

/// IG at opt.steps, repeated at opt.max_steps when the completeness gap is
/// above tolerance.
template <DifferentiableScorer M>
AttributionMap integrated_gradients(const M& model, const Tensor& window,
                                    const Baseline& baseline,
                                    std::optional<std::size_t> target,
                                    const IgOptions& opt = {}) {
  AttributionMap m = integrated_gradients(model, window, baseline, target, opt.steps);
  if (!completeness_ok(m, opt) && opt.max_steps > opt.steps) {
    m = integrated_gradients(model, window, baseline, m.target_class, opt.max_steps);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Shapley values

inline constexpr std::size_t kMaxExactShapleyFeatures = 16;

/// Writes the window with absent channels replaced by the baseline.
inline void materialize(std::span<const double> x, std::span<const double> b,
                        std::size_t channels, std::span<const bool> present,
                        std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = present[i % channels] ? x[i] : b[i];
  }
}

/// Exact Shapley values by enumerating all 2^M channel coalitions.
template <BatchScorer M>
AttributionMap shapley_exact(const M& model, const Tensor& window,
                             const Baseline& baseline,
                             std::optional<std::size_t> target) {
  const Shape shape = model.window_shape();
  detail::check_inputs(shape, window, baseline);
  const std::size_t m = shape[1], n = shape[0] * m;
  if (m > kMaxExactShapleyFeatures) {
    throw InvalidArgument(
        "exact Shapley enumeration needs 2^" + std::to_string(m) +
        " model evaluations; it is limited to " +
        std::to_string(kMaxExactShapleyFeatures) +
        " features. Use the sampled estimator (shapley_sampled) instead");
  }
  const std::size_t cls = detail::resolve_target(model, window, target);
  const std::size_t subsets = std::size_t{1} << m;
  const auto x = window.data();
  const auto b = baseline.values.data();

  std::vector<double> value(subsets);
  std::vector<bool> flags(m);
  std::unique_ptr<bool[]> present(new bool[m]);
  for (std::size_t s0 = 0; s0 < subsets; s0 += detail::kRowsPerBatch) {
    const std::size_t rows = std::min(detail::kRowsPerBatch, subsets - s0);
    Tensor batch({rows, shape[0], m});
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t mask = s0 + r;
      for (std::size_t c = 0; c < m; ++c) present[c] = (mask >> c) & 1u;
      materialize(x, b, m, std::span<const bool>(present.get(), m),
                  batch.data().subspan(r * n, n));
    }
    const auto out = model.logit_batch(batch, cls);
    std::copy(out.begin(), out.end(), value.begin() + static_cast<std::ptrdiff_t>(s0));
  }

  // weight[s] = s! (M - s - 1)! / M!
  std::vector<double> weight(m);
  for (std::size_t s = 0; s < m; ++s) {
    weight[s] = std::exp(std::lgamma(static_cast<double>(s + 1)) +
                         std::lgamma(static_cast<double>(m - s)) -
                         std::lgamma(static_cast<double>(m + 1)));
  }
  AttributionMap out;
  out.method = Method::kShapExact;
  out.target_class = cls;
  out.scores.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    double phi = 0.0;
    for (std::size_t mask = 0; mask < subsets; ++mask) {
      if (mask & bit) continue;
      const auto size = static_cast<std::size_t>(std::popcount(mask));
      phi += weight[size] * (value[mask | bit] - value[mask]);
    }
    out.scores[i] = phi;
  }
  out.diagnostics.output = value[subsets - 1];
  out.diagnostics.baseline_output = value[0];
  out.diagnostics.efficiency_gap =
      std::abs(out.total() - (value[subsets - 1] - value[0]));
  out.diagnostics.evaluations = subsets;
  return out;
}

/// Permutation estimate of the Shapley values. Each of `num_permutations`
/// random channel orders is evaluated together with its reverse; the pair
/// average is one sample for the standard error.
template <BatchScorer M>
AttributionMap shapley_sampled(const M& model, const Tensor& window,
                               const Baseline& baseline,
                               std::optional<std::size_t> target,
                               std::size_t num_permutations,
                               std::uint64_t rng_seed) {
  if (num_permutations < 1) {
    throw InvalidArgument("shapley_sampled needs num_permutations >= 1");
  }
  const Shape shape = model.window_shape();
  detail::check_inputs(shape, window, baseline);
  const std::size_t m = shape[1], n = shape[0] * m;
  const std::size_t cls = detail::resolve_target(model, window, target);
  const auto x = window.data();
  const auto b = baseline.values.data();
  const auto [f_full, f_empty] =
      detail::endpoint_outputs(model, window, baseline.values, cls);

  std::mt19937_64 rng(rng_seed);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);

  // Interior coalitions of a permutation: prefixes of length 1..M-1.
  const std::size_t interior = m - 1;
  const std::size_t rows_per_pair = 2 * interior;
  const std::size_t pairs_per_batch =
      std::max<std::size_t>(1, detail::kRowsPerBatch / std::max<std::size_t>(rows_per_pair, 1));

  std::vector<double> sum(m, 0.0), sum_sq(m, 0.0);
  std::vector<std::vector<std::size_t>> perms;
  std::unique_ptr<bool[]> present(new bool[m]);
  std::vector<double> pair_phi(m);
  std::size_t evaluations = 2;

  for (std::size_t p0 = 0; p0 < num_permutations; p0 += pairs_per_batch) {
    const std::size_t np = std::min(pairs_per_batch, num_permutations - p0);
    perms.clear();
    for (std::size_t p = 0; p < np; ++p) {
      std::shuffle(order.begin(), order.end(), rng);
      perms.push_back(order);
      perms.emplace_back(order.rbegin(), order.rend());
    }
    std::vector<double> values;
    if (interior > 0) {
      Tensor batch({perms.size() * interior, shape[0], m});
      for (std::size_t q = 0; q < perms.size(); ++q) {
        std::fill(present.get(), present.get() + m, false);
        for (std::size_t j = 0; j < interior; ++j) {
          present[perms[q][j]] = true;
          materialize(x, b, m, std::span<const bool>(present.get(), m),
                      batch.data().subspan((q * interior + j) * n, n));
        }
      }
      values = model.logit_batch(batch, cls);
      evaluations += batch.dim(0);
    }
    for (std::size_t p = 0; p < np; ++p) {
      std::fill(pair_phi.begin(), pair_phi.end(), 0.0);
      for (std::size_t h = 0; h < 2; ++h) {
        const std::size_t q = 2 * p + h;
        double prev = f_empty;
        for (std::size_t j = 0; j < m; ++j) {
          const double cur = j + 1 == m ? f_full : values[q * interior + j];
          pair_phi[perms[q][j]] += 0.5 * (cur - prev);
          prev = cur;
        }
      }
      for (std::size_t i = 0; i < m; ++i) {
        sum[i] += pair_phi[i];
        sum_sq[i] += pair_phi[i] * pair_phi[i];
      }
    }
  }

  const double count = static_cast<double>(num_permutations);
  AttributionMap out;
  out.method = Method::kShapSampled;
  out.target_class = cls;
  out.scores.resize(m);
  out.diagnostics.standard_error.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double mean = sum[i] / count;
    out.scores[i] = mean;
    if (num_permutations > 1) {
      const double var =
          std::max(0.0, (sum_sq[i] - count * mean * mean) / (count - 1.0));
      out.diagnostics.standard_error[i] = std::sqrt(var / count);
    }
  }
  out.diagnostics.output = f_full;
  out.diagnostics.baseline_output = f_empty;
  out.diagnostics.efficiency_gap = std::abs(out.total() - (f_full - f_empty));
  out.diagnostics.permutations = num_permutations;
  out.diagnostics.evaluations = evaluations;
  return out;
}

// ---------------------------------------------------------------------------
// CSV form: one row per channel.

inline const std::vector<std::string>& attribution_csv_header() {
  static const std::vector<std::string> h = {
      "feature",          "method",          "target_class",
      "score",            "per_timestep_sum", "standard_error",
      "output",           "baseline_output",  "completeness_gap",
      "efficiency_gap",   "steps",            "permutations"};
  return h;
}

inline std::string attribution_to_csv(const AttributionMap& map,
                                      const std::vector<std::string>& features) {
  if (features.size() != map.num_features()) {
    throw ShapeError("feature names do not match the attribution width");
  }
  auto opt = [](const std::optional<double>& v) {
    return v ? csv::format_exact(*v) : std::string();
  };
  std::string out = csv::join(attribution_csv_header()) + "\n";
  for (std::size_t i = 0; i < features.size(); ++i) {
    std::string per_sum;
    if (map.per_timestep) {
      double s = 0.0;
      for (std::size_t t = 0; t < map.per_timestep->dim(0); ++t) {
        s += map.per_timestep->at(t, i);
      }
      per_sum = csv::format_exact(s);
    }
    const std::string se = map.diagnostics.standard_error.empty()
                               ? std::string()
                               : csv::format_exact(map.diagnostics.standard_error[i]);
    out += csv::join({features[i], std::string(method_name(map.method)),
                      std::to_string(map.target_class),
                      csv::format_exact(map.scores[i]), per_sum, se,
                      csv::format_exact(map.diagnostics.output),
                      csv::format_exact(map.diagnostics.baseline_output),
                      opt(map.diagnostics.completeness_gap),
                      opt(map.diagnostics.efficiency_gap),
                      std::to_string(map.diagnostics.steps),
                      std::to_string(map.diagnostics.permutations)});
    out += "\n";
  }
  return out;
}

/// Parses attribution_to_csv output back (per-timestep detail is not kept).
inline std::pair<AttributionMap, std::vector<std::string>> attribution_from_csv(
    const std::string& text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    if (nl > pos) lines.emplace_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty() || csv::split_record(lines[0]) != attribution_csv_header()) {
    throw ParseError("attribution CSV header is missing or unexpected", 1, 0);
  }
  AttributionMap map;
  std::vector<std::string> features;
  auto num = [&](const std::string& s, std::size_t row, std::size_t col) {
    const auto v = csv::parse_double(s);
    if (!v) {
      throw ParseError("bad number '" + s + "' in attribution CSV at row " +
                           std::to_string(row) + ", column " + std::to_string(col),
                       row, col);
    }
    return *v;
  };
  auto opt = [&](const std::string& s, std::size_t row, std::size_t col) {
    return s.empty() ? std::optional<double>() : num(s, row, col);
  };
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto f = csv::split_record(lines[r]);
    const std::size_t row = r + 1;
    if (f.size() != attribution_csv_header().size()) {
      throw ParseError("attribution CSV row " + std::to_string(row) +
                           " has the wrong number of fields",
                       row, 0);
    }
    features.push_back(f[0]);
    map.method = parse_method(f[1]);
    map.target_class = static_cast<std::size_t>(num(f[2], row, 3));
    map.scores.push_back(num(f[3], row, 4));
    if (!f[5].empty()) map.diagnostics.standard_error.push_back(num(f[5], row, 6));
    map.diagnostics.output = num(f[6], row, 7);
    map.diagnostics.baseline_output = num(f[7], row, 8);
    map.diagnostics.completeness_gap = opt(f[8], row, 9);
    map.diagnostics.efficiency_gap = opt(f[9], row, 10);
    map.diagnostics.steps = static_cast<std::size_t>(num(f[10], row, 11));
    map.diagnostics.permutations = static_cast<std::size_t>(num(f[11], row, 12));
  }
  return {std::move(map), std::move(features)};
}

}  // namespace faultlens
