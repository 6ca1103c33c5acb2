#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "faultlens/error.hpp"
#include "faultlens/tensor.hpp"

namespace faultlens {

/// Class id 0 is reserved for normal operation; faults are 1..K.
inline constexpr std::size_t kNormalClass = 0;

/// Fixed-length slice of a multivariate run: values is [window_len x
/// num_features] in standardized units.
struct TimeSeriesWindow {
  Tensor values;
  std::optional<std::size_t> label;
  std::optional<std::size_t> onset_index;
  // Provenance inside the source dataset, when known.
  std::optional<std::size_t> run;
  std::optional<std::size_t> start;

  [[nodiscard]] std::size_t length() const { return values.dim(0); }
  [[nodiscard]] std::size_t features() const { return values.dim(1); }
};

/// Per-channel z-score parameters estimated on normal-operation samples.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;

  [[nodiscard]] std::size_t size() const { return mean.size(); }

  static Standardization identity(std::size_t channels) {
    return {std::vector<double>(channels, 0.0),
            std::vector<double>(channels, 1.0)};
  }

  /// Population statistics of the given rows. Channels with (near) zero
  /// spread get unit scale so they stay finite after standardization.
  static Standardization fit(std::span<const std::span<const double>> rows,
                             std::size_t channels) {
    if (rows.empty()) throw DataError("standardization needs at least 1 row");
    Standardization s{std::vector<double>(channels, 0.0),
                      std::vector<double>(channels, 0.0)};
    for (auto r : rows) {
      for (std::size_t c = 0; c < channels; ++c) s.mean[c] += r[c];
    }
    const double n = static_cast<double>(rows.size());
    for (double& m : s.mean) m /= n;
    for (auto r : rows) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = r[c] - s.mean[c];
        s.stddev[c] += d * d;
      }
    }
    for (double& v : s.stddev) {
      v = std::sqrt(v / n);
      if (!(v > 1e-12)) v = 1.0;
    }
    return s;
  }

  [[nodiscard]] Tensor apply(const Tensor& raw) const {
    if (raw.cols() != size()) {
      throw ShapeError("standardization has " + std::to_string(size()) +
                       " channels, data has " + std::to_string(raw.cols()));
    }
    Tensor out = raw;
    auto d = out.data();
    const std::size_t cols = size();
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = (d[i] - mean[i % cols]) / stddev[i % cols];
    }
    return out;
  }
};

}  // namespace faultlens
