#pragma once

// Closed-form scorers with analytically known attributions. Class 0 scores
// f(x), class 1 scores -f(x).

#include <cmath>
#include <random>
#include <vector>

#include "faultlens/tensor.hpp"

namespace faultlens::testing {

class SurrogateBase {
 public:
  SurrogateBase(std::size_t t, std::size_t m) : t_(t), m_(m) {}
  [[nodiscard]] Shape window_shape() const { return {t_, m_}; }
  [[nodiscard]] std::size_t num_classes() const { return 2; }

 protected:
  [[nodiscard]] std::size_t width() const { return t_ * m_; }
  [[nodiscard]] static double sign(std::size_t target) {
    return target == 0 ? 1.0 : -1.0;
  }
  std::size_t t_, m_;
};

/// f(x) = sum_{t,c} w[c] x[t,c] + bias.
class LinearSurrogate : public SurrogateBase {
 public:
  LinearSurrogate(std::vector<double> w, std::size_t t = 1, double bias = 0.0)
      : SurrogateBase(t, w.size()), w_(std::move(w)), bias_(bias) {}

  [[nodiscard]] std::vector<double> logit_batch(const Tensor& batch,
                                                std::size_t target) const {
    std::vector<double> out(batch.dim(0));
    const auto d = batch.values();
    for (std::size_t r = 0; r < out.size(); ++r) {
      double s = bias_;
      for (std::size_t i = 0; i < width(); ++i) s += w_[i % m_] * d[r * width() + i];
      out[r] = sign(target) * s;
    }
    return out;
  }

  [[nodiscard]] Tensor logit_gradient_batch(const Tensor& batch,
                                            std::size_t target,
                                            std::vector<double>* values) const {
    if (values) *values = logit_batch(batch, target);
    Tensor g({batch.dim(0), t_, m_});
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = sign(target) * w_[i % m_];
    return g;
  }

 private:
  std::vector<double> w_;
  double bias_;
};

/// f(x) = prod over the listed channels of x[0, c] (single timestep).
class ProductSurrogate : public SurrogateBase {
 public:
  ProductSurrogate(std::size_t m, std::vector<std::size_t> factors)
      : SurrogateBase(1, m), factors_(std::move(factors)) {}

  [[nodiscard]] std::vector<double> logit_batch(const Tensor& batch,
                                                std::size_t target) const {
    std::vector<double> out(batch.dim(0));
    for (std::size_t r = 0; r < out.size(); ++r) {
      double p = 1.0;
      for (std::size_t c : factors_) p *= batch.values()[r * m_ + c];
      out[r] = sign(target) * p;
    }
    return out;
  }

 private:
  std::vector<std::size_t> factors_;
};

/// f(x) = v . tanh(W x + c) over the flattened window.
class MlpSurrogate : public SurrogateBase {
 public:
  MlpSurrogate(std::size_t t, std::size_t m, std::size_t hidden,
               std::uint64_t seed)
      : SurrogateBase(t, m), hidden_(hidden) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    w_.resize(hidden * width());
    for (double& x : w_) x = n(rng) / std::sqrt(static_cast<double>(width()));
    c_.resize(hidden);
    for (double& x : c_) x = 0.3 * n(rng);
    v_.resize(hidden);
    for (double& x : v_) x = n(rng);
  }

  /// Zeroes every weight reading channel `c`, making it a dummy player.
  void ignore_channel(std::size_t c) {
    for (std::size_t h = 0; h < hidden_; ++h) {
      for (std::size_t t = 0; t < t_; ++t) w_[h * width() + t * m_ + c] = 0.0;
    }
  }

  [[nodiscard]] std::vector<double> logit_batch(const Tensor& batch,
                                                std::size_t target) const {
    std::vector<double> out(batch.dim(0));
    for (std::size_t r = 0; r < out.size(); ++r) {
      out[r] = sign(target) * eval(batch.data().subspan(r * width(), width()), {});
    }
    return out;
  }

  [[nodiscard]] Tensor logit_gradient_batch(const Tensor& batch,
                                            std::size_t target,
                                            std::vector<double>* values) const {
    Tensor g({batch.dim(0), t_, m_});
    if (values) values->resize(batch.dim(0));
    for (std::size_t r = 0; r < batch.dim(0); ++r) {
      const double f = eval(batch.data().subspan(r * width(), width()),
                            g.data().subspan(r * width(), width()));
      for (std::size_t i = 0; i < width(); ++i) g[r * width() + i] *= sign(target);
      if (values) (*values)[r] = sign(target) * f;
    }
    return g;
  }

 private:
  double eval(std::span<const double> x, std::span<double> grad) const {
    double f = 0.0;
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t h = 0; h < hidden_; ++h) {
      double a = c_[h];
      for (std::size_t i = 0; i < width(); ++i) a += w_[h * width() + i] * x[i];
      const double th = std::tanh(a);
      f += v_[h] * th;
      if (!grad.empty()) {
        const double d = v_[h] * (1.0 - th * th);
        for (std::size_t i = 0; i < width(); ++i) grad[i] += d * w_[h * width() + i];
      }
    }
    return f;
  }

  std::size_t hidden_;
  std::vector<double> w_, c_, v_;
};

}  // namespace faultlens::testing
