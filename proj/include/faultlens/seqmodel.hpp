#pragma once

// Single-layer LSTM classifier over fixed-length windows, trained with
// backpropagation through time and Adam.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "faultlens/autodiff.hpp"
#include "faultlens/error.hpp"
#include "faultlens/tensor.hpp"
#include "faultlens/window.hpp"

namespace faultlens {

struct ModelConfig {
  std::size_t num_features = 0;
  std::size_t window_len = 0;
  std::size_t hidden_size = 64;
  std::size_t num_classes = 2;
  double learning_rate = 1e-2;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t rng_seed = 1;
  double grad_clip = 5.0;

  void validate() const {
    if (num_features < 1) throw InvalidArgument("num_features must be >= 1");
    if (window_len < 2) throw InvalidArgument("window_len must be >= 2");
    if (num_classes < 2) throw InvalidArgument("num_classes must be >= 2");
    if (hidden_size < 1) throw InvalidArgument("hidden_size must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) {
      throw InvalidArgument("learning_rate must be positive");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Gate blocks are laid out [input, forget, cell, output] along the 4H axis.
struct LstmParameters {
  Tensor input_weights;      // [M x 4H]
  Tensor recurrent_weights;  // [H x 4H]
  Tensor bias;               // [4H]
  Tensor output_weights;     // [H x K]
  Tensor output_bias;        // [K]

  static LstmParameters zeros(const ModelConfig& c) {
    const std::size_t g = 4 * c.hidden_size;
    return {Tensor({c.num_features, g}), Tensor({c.hidden_size, g}),
            Tensor({g}), Tensor({c.hidden_size, c.num_classes}),
            Tensor({c.num_classes})};
  }

  /// Glorot-uniform weights, zero biases except forget gate (1.0).
  static LstmParameters initialize(const ModelConfig& c, std::mt19937_64& rng) {
    LstmParameters p = zeros(c);
    auto glorot = [&rng](Tensor& t, std::size_t fan_in, std::size_t fan_out) {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-a, a);
      for (double& v : t.data()) v = dist(rng);
    };
    const std::size_t h = c.hidden_size;
    glorot(p.input_weights, c.num_features, h);
    glorot(p.recurrent_weights, h, h);
    glorot(p.output_weights, h, c.num_classes);
    for (std::size_t j = h; j < 2 * h; ++j) p.bias[j] = 1.0;
    return p;
  }

  [[nodiscard]] std::vector<Tensor*> tensors() {
    return {&input_weights, &recurrent_weights, &bias, &output_weights,
            &output_bias};
  }
  [[nodiscard]] std::vector<const Tensor*> tensors() const {
    return {&input_weights, &recurrent_weights, &bias, &output_weights,
            &output_bias};
  }

  static constexpr std::array<const char*, 5> kNames = {
      "input_weights", "recurrent_weights", "bias", "output_weights",
      "output_bias"};

  friend bool operator==(const LstmParameters&,
                         const LstmParameters&) = default;
};

/// Node handles of the unrolled LSTM graph.
struct LstmGraph {
  ad::Graph graph;
  ad::NodeId inputs;     // [B x T*M], one flattened window per row
  ad::NodeId selector;   // [B x K] weights applied to logits
  std::array<ad::NodeId, 5> params;
  ad::NodeId logits;     // [B x K]
  ad::NodeId selected;   // sum(logits * selector)
  ad::NodeId loss;       // -sum(log_softmax(logits) * selector)
};

inline LstmGraph build_lstm_graph(const ModelConfig& c) {
  LstmGraph lg;
  auto& g = lg.graph;
  const std::size_t m = c.num_features, h = c.hidden_size;
  const std::size_t k = c.num_classes, t_len = c.window_len;
  lg.inputs = g.input("inputs", {1, t_len * m}, true);
  lg.selector = g.input("selector", {1, k}, true);
  const ad::NodeId wx = g.parameter("input_weights", {m, 4 * h});
  const ad::NodeId wh = g.parameter("recurrent_weights", {h, 4 * h});
  const ad::NodeId b = g.parameter("bias", {4 * h});
  const ad::NodeId wo = g.parameter("output_weights", {h, k});
  const ad::NodeId bo = g.parameter("output_bias", {k});
  lg.params = {wx, wh, b, wo, bo};

  ad::NodeId hidden{}, cell{};
  for (std::size_t t = 0; t < t_len; ++t) {
    const ad::NodeId xt = g.slice(lg.inputs, t * m, (t + 1) * m);
    ad::NodeId z = g.matmul(xt, wx);
    if (t > 0) z = g.add(z, g.matmul(hidden, wh));
    z = g.bias_add(z, b);
    g.set_name(z, "gates_t" + std::to_string(t));
    const ad::NodeId in_gate = g.sigmoid(g.slice(z, 0, h));
    const ad::NodeId forget = g.sigmoid(g.slice(z, h, 2 * h));
    const ad::NodeId cand = g.tanh(g.slice(z, 2 * h, 3 * h));
    const ad::NodeId out_gate = g.sigmoid(g.slice(z, 3 * h, 4 * h));
    const ad::NodeId fresh = g.mul(in_gate, cand);
    cell = t == 0 ? fresh : g.add(g.mul(forget, cell), fresh);
    hidden = g.mul(out_gate, g.tanh(cell));
  }
  lg.logits = g.bias_add(g.matmul(hidden, wo), bo);
  g.set_name(lg.logits, "logits");
  lg.selected = g.sum(g.mul(lg.logits, lg.selector));
  lg.loss = g.scale(g.sum(g.mul(g.log_softmax(lg.logits), lg.selector)), -1.0);
  return lg;
}

/// Row-wise stack of windows into the [B x T*M] layout the graph consumes.
inline Tensor stack_windows(std::span<const Tensor> windows) {
  if (windows.empty()) throw InvalidArgument("stack_windows: empty batch");
  const std::size_t width = windows.front().size();
  std::vector<double> data;
  data.reserve(windows.size() * width);
  for (const Tensor& w : windows) {
    if (w.shape() != windows.front().shape()) {
      throw ShapeError("stack_windows: window shapes differ");
    }
    data.insert(data.end(), w.values().begin(), w.values().end());
  }
  return Tensor({windows.size(), width}, std::move(data));
}

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainingLog {
  double initial_loss = 0.0;
  std::vector<EpochRecord> epochs;

  [[nodiscard]] double final_loss() const {
    return epochs.empty() ? initial_loss : epochs.back().mean_loss;
  }
};

class SequenceModel {
 public:
  static constexpr int kFormatVersion = 1;

  SequenceModel(ModelConfig config, std::vector<std::string> class_labels,
                LstmParameters params,
                std::optional<Standardization> standardization = std::nullopt)
      : config_(std::move(config)),
        labels_(std::move(class_labels)),
        params_(std::move(params)),
        standardization_(standardization.value_or(
            Standardization::identity(config_.num_features))) {
    config_.validate();
    if (labels_.empty()) {
      for (std::size_t i = 0; i < config_.num_classes; ++i) {
        labels_.push_back(i == kNormalClass ? "normal"
                                            : "class_" + std::to_string(i));
      }
    }
    if (labels_.size() != config_.num_classes) {
      throw ShapeError("model has " + std::to_string(config_.num_classes) +
                       " classes but " + std::to_string(labels_.size()) +
                       " labels");
    }
    const LstmParameters expect = LstmParameters::zeros(config_);
    const auto want = expect.tensors();
    const auto have = params_.tensors();
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (want[i]->shape() != have[i]->shape()) {
        throw ShapeError(std::string("parameter '") +
                         LstmParameters::kNames[i] + "' has shape " +
                         shape_string(have[i]->shape()) + ", expected " +
                         shape_string(want[i]->shape()));
      }
    }
    if (standardization_.size() != config_.num_features) {
      throw ShapeError("standardization width does not match num_features");
    }
    graph_ = std::make_shared<const LstmGraph>(build_lstm_graph(config_));
  }

  /// Freshly initialized (untrained) model.
  static SequenceModel initialized(const ModelConfig& config,
                                   std::vector<std::string> labels = {}) {
    config.validate();
    std::mt19937_64 rng(config.rng_seed);
    return SequenceModel(config, std::move(labels),
                         LstmParameters::initialize(config, rng));
  }

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] const std::vector<std::string>& class_labels() const {
    return labels_;
  }
  [[nodiscard]] const LstmParameters& parameters() const { return params_; }
  [[nodiscard]] const Standardization& standardization() const {
    return standardization_;
  }
  [[nodiscard]] std::size_t num_classes() const { return config_.num_classes; }
  [[nodiscard]] Shape window_shape() const {
    return {config_.window_len, config_.num_features};
  }
  [[nodiscard]] const LstmGraph& graph() const { return *graph_; }

  /// Pre-softmax outputs for a batch [B x T x M] (or [B x T*M]); [B x K].
  /// Runs the unrolled recurrence directly with reused buffers; every
  /// operation matches the graph's order, so the result is bit-identical to
  /// graph_logits_batch.
  [[nodiscard]] Tensor logits_batch(const Tensor& batch) const {
    const Tensor flat = flatten(batch);
    const std::size_t rows = flat.dim(0), m = config_.num_features;
    const std::size_t h = config_.hidden_size, k = config_.num_classes;
    const std::size_t g = 4 * h, t_len = config_.window_len;
    const auto wx = params_.input_weights.data();
    const auto wh = params_.recurrent_weights.data();
    const auto b = params_.bias.data();
    std::vector<double> z(g), zr(g), hidden(h), cell(h);
    Tensor out({rows, k});
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = flat.data().data() + r * t_len * m;
      for (std::size_t t = 0; t < t_len; ++t) {
        gemm_nn(std::span<const double>(x + t * m, m), wx, z, 1, m, g);
        if (t > 0) {
          gemm_nn(hidden, wh, zr, 1, h, g);
          for (std::size_t j = 0; j < g; ++j) z[j] = z[j] + zr[j];
        }
        for (std::size_t j = 0; j < g; ++j) z[j] += b[j];
        for (std::size_t j = 0; j < h; ++j) {
          const double in_gate = ad::detail::stable_sigmoid(z[j]);
          const double forget = ad::detail::stable_sigmoid(z[h + j]);
          const double cand = std::tanh(z[2 * h + j]);
          const double out_gate = ad::detail::stable_sigmoid(z[3 * h + j]);
          const double fresh = in_gate * cand;
          cell[j] = t == 0 ? fresh : forget * cell[j] + fresh;
          hidden[j] = out_gate * std::tanh(cell[j]);
        }
      }
      auto o = out.data().subspan(r * k, k);
      gemm_nn(hidden, params_.output_weights.data(), o, 1, h, k);
      for (std::size_t j = 0; j < k; ++j) o[j] += params_.output_bias[j];
    }
    return out;
  }

  /// Logits evaluated through the autodiff graph.
  [[nodiscard]] Tensor graph_logits_batch(const Tensor& batch) const {
    const Tensor flat = flatten(batch);
    ad::Bindings bind = bind_params();
    bind.bind(graph_->inputs, flat);
    const ad::NodeId out[] = {graph_->logits};
    auto ev = ad::forward(graph_->graph, bind, out);
    return ev[graph_->logits];
  }

  [[nodiscard]] std::vector<double> logits(const Tensor& window) const {
    check_window(window);
    const Tensor out = logits_batch(window.reshaped({1, window.size()}));
    return out.values();
  }

  /// Class probabilities (softmax of the logits).
  [[nodiscard]] std::vector<double> predict(const Tensor& window) const {
    return softmax(logits(window));
  }
  [[nodiscard]] std::vector<double> predict(const TimeSeriesWindow& w) const {
    return predict(w.values);
  }

  [[nodiscard]] std::size_t predict_class(const Tensor& window) const {
    const auto l = logits(window);
    return static_cast<std::size_t>(
        std::max_element(l.begin(), l.end()) - l.begin());
  }

  [[nodiscard]] std::vector<std::size_t> predict_classes(
      std::span<const Tensor> windows) const {
    std::vector<std::size_t> out;
    out.reserve(windows.size());
    constexpr std::size_t kChunk = 256;
    for (std::size_t s = 0; s < windows.size(); s += kChunk) {
      const auto part = windows.subspan(s, std::min(kChunk, windows.size() - s));
      for (const Tensor& w : part) check_window(w);
      const Tensor l = logits_batch(stack_windows(part));
      for (std::size_t r = 0; r < l.rows(); ++r) {
        auto row = l.row(r);
        out.push_back(static_cast<std::size_t>(
            std::max_element(row.begin(), row.end()) - row.begin()));
      }
    }
    return out;
  }

  /// Target-class logits for each row of a batch.
  [[nodiscard]] std::vector<double> logit_batch(const Tensor& batch,
                                                std::size_t target) const {
    check_class(target);
    const Tensor l = logits_batch(batch);
    std::vector<double> out(l.rows());
    for (std::size_t r = 0; r < l.rows(); ++r) out[r] = l.at(r, target);
    return out;
  }

  /// d logit[target] / d input for every row of a batch; returns [B x T x M]
  /// and fills `values` with the target logits when requested.
  [[nodiscard]] Tensor logit_gradient_batch(
      const Tensor& batch, std::size_t target,
      std::vector<double>* values = nullptr) const {
    check_class(target);
    const Tensor flat = flatten(batch);
    const std::size_t rows = flat.dim(0);
    Tensor selector({rows, config_.num_classes});
    for (std::size_t r = 0; r < rows; ++r) selector.at(r, target) = 1.0;
    ad::Bindings bind = bind_params();
    bind.bind(graph_->inputs, flat).bind(graph_->selector, selector);
    const ad::NodeId out[] = {graph_->selected};
    auto ev = ad::forward(graph_->graph, bind, out);
    if (values != nullptr) {
      const Tensor& l = ev[graph_->logits];
      values->resize(rows);
      for (std::size_t r = 0; r < rows; ++r) (*values)[r] = l.at(r, target);
    }
    const ad::NodeId wrt[] = {graph_->inputs};
    auto grads = ad::backward(graph_->graph, ev, graph_->selected, wrt);
    Tensor g = std::move(grads.at(graph_->inputs));
    g.reshape({rows, config_.window_len, config_.num_features});
    if (!g.all_finite()) throw NumericError("input gradient is not finite");
    return g;
  }

  /// Gradient of the target-class logit w.r.t. every window entry [T x M].
  [[nodiscard]] Tensor input_gradient(const Tensor& window,
                                      std::size_t target) const {
    check_window(window);
    Tensor g = logit_gradient_batch(window.reshaped({1, window.size()}),
                                    target);
    g.reshape(window.shape());
    return g;
  }

  void check_window(const Tensor& window) const {
    if (window.rank() != 2 || window.dim(0) != config_.window_len ||
        window.dim(1) != config_.num_features) {
      throw ShapeError("window has shape " + shape_string(window.shape()) +
                       ", model expects " + shape_string(window_shape()));
    }
  }

  void check_class(std::size_t target) const {
    if (target >= config_.num_classes) {
      throw InvalidArgument("target class " + std::to_string(target) +
                            " out of range [0, " +
                            std::to_string(config_.num_classes) + ")");
    }
  }

  static std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    ad::detail::softmax_rows(logits, p, 1, logits.size(), false);
    return p;
  }

  [[nodiscard]] nlohmann::json to_json() const;
  static SequenceModel from_json(const nlohmann::json& j);

 private:
  [[nodiscard]] ad::Bindings bind_params() const {
    ad::Bindings b;
    const auto ts = params_.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      b.bind(graph_->params[i], *ts[i]);
    }
    return b;
  }

  [[nodiscard]] Tensor flatten(const Tensor& batch) const {
    const std::size_t width = config_.window_len * config_.num_features;
    const bool ok3 = batch.rank() == 3 && batch.dim(1) == config_.window_len &&
                     batch.dim(2) == config_.num_features;
    const bool ok2 = batch.rank() == 2 && batch.dim(1) == width;
    if (!ok3 && !ok2) {
      throw ShapeError("batch has shape " + shape_string(batch.shape()) +
                       ", model expects [B x " +
                       std::to_string(config_.window_len) + " x " +
                       std::to_string(config_.num_features) + "]");
    }
    return batch.reshaped({batch.dim(0), width});
  }

  ModelConfig config_;
  std::vector<std::string> labels_;
  LstmParameters params_;
  Standardization standardization_;
  std::shared_ptr<const LstmGraph> graph_;
};

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json SequenceModel::to_json() const {
  using nlohmann::json;
  json j;
  j["format"] = "faultlens-model";
  j["version"] = kFormatVersion;
  j["config"] = {{"num_features", config_.num_features},
                 {"window_len", config_.window_len},
                 {"hidden_size", config_.hidden_size},
                 {"num_classes", config_.num_classes},
                 {"learning_rate", config_.learning_rate},
                 {"epochs", config_.epochs},
                 {"batch_size", config_.batch_size},
                 {"rng_seed", config_.rng_seed},
                 {"grad_clip", config_.grad_clip}};
  j["class_labels"] = labels_;
  j["standardization"] = {{"mean", standardization_.mean},
                          {"stddev", standardization_.stddev}};
  json params = json::object();
  const auto ts = params_.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    params[LstmParameters::kNames[i]] = {{"shape", ts[i]->shape()},
                                         {"data", ts[i]->values()}};
  }
  j["parameters"] = std::move(params);
  return j;
}

inline SequenceModel SequenceModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "faultlens-model") {
      throw DataError("not a faultlens model file");
    }
    const int version = j.at("version").get<int>();
    if (version != kFormatVersion) {
      throw DataError("unsupported model format version " +
                      std::to_string(version) + " (expected " +
                      std::to_string(kFormatVersion) + ")");
    }
    const auto& c = j.at("config");
    ModelConfig cfg;
    cfg.num_features = c.at("num_features").get<std::size_t>();
    cfg.window_len = c.at("window_len").get<std::size_t>();
    cfg.hidden_size = c.at("hidden_size").get<std::size_t>();
    cfg.num_classes = c.at("num_classes").get<std::size_t>();
    cfg.learning_rate = c.at("learning_rate").get<double>();
    cfg.epochs = c.at("epochs").get<std::size_t>();
    cfg.batch_size = c.at("batch_size").get<std::size_t>();
    cfg.rng_seed = c.at("rng_seed").get<std::uint64_t>();
    cfg.grad_clip = c.at("grad_clip").get<double>();
    Standardization st{j.at("standardization").at("mean"),
                       j.at("standardization").at("stddev")};
    LstmParameters p = LstmParameters::zeros(cfg);
    const auto ts = p.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const auto& e = j.at("parameters").at(LstmParameters::kNames[i]);
      *ts[i] = Tensor(e.at("shape").get<Shape>(),
                      e.at("data").get<std::vector<double>>());
    }
    return SequenceModel(cfg, j.at("class_labels"), std::move(p), st);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  }
}

inline std::string save_model(const SequenceModel& model) {
  return model.to_json().dump(1);
}

inline SequenceModel load_model(std::string_view bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file is not valid JSON: ") + e.what());
  }
  return SequenceModel::from_json(j);
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

class Adam {
 public:
  explicit Adam(const LstmParameters& shape_like, double lr)
      : lr_(lr) {
    for (const Tensor* t : shape_like.tensors()) {
      m_.emplace_back(t->shape());
      v_.emplace_back(t->shape());
    }
  }

  void step(LstmParameters& params, const std::vector<Tensor>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto ts = params.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      auto p = ts[i]->data();
      auto g = grads[i].data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
        v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
        p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace detail

struct TrainResult {
  SequenceModel model;
  TrainingLog log;
};

/// Mean cross-entropy and accuracy of `model` on labeled windows.
inline std::pair<double, double> evaluate_loss(
    const SequenceModel& model, std::span<const TimeSeriesWindow> data) {
  const auto& lg = model.graph();
  double loss = 0.0;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t s = 0; s < data.size(); s += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - s);
    std::vector<Tensor> xs;
    Tensor sel({n, model.num_classes()});
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(data[s + i].values);
      sel.at(i, *data[s + i].label) = 1.0;
    }
    const Tensor flat = stack_windows(xs);
    ad::Bindings b;
    const auto ts = model.parameters().tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) b.bind(lg.params[i], *ts[i]);
    b.bind(lg.inputs, flat).bind(lg.selector, sel);
    const ad::NodeId out[] = {lg.loss};
    auto ev = ad::forward(lg.graph, b, out);
    loss += ev[lg.loss][0];
    const Tensor& logits = ev[lg.logits];
    for (std::size_t i = 0; i < n; ++i) {
      auto row = logits.row(i);
      const auto arg = static_cast<std::size_t>(
          std::max_element(row.begin(), row.end()) - row.begin());
      if (arg == *data[s + i].label) ++correct;
    }
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

/// Trains a fresh model. Deterministic for a fixed config.rng_seed.
/// `on_epoch` (optional) observes each epoch record as it is produced.
inline TrainResult train(
    std::span<const TimeSeriesWindow> data, const ModelConfig& config,
    std::vector<std::string> class_labels = {},
    std::optional<Standardization> standardization = std::nullopt,
    const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  if (data.empty()) throw InvalidArgument("train: empty dataset");
  std::set<std::size_t> classes;
  for (const auto& w : data) {
    if (!w.label) throw InvalidArgument("train: window without label");
    if (*w.label >= config.num_classes) {
      throw InvalidArgument("train: label " + std::to_string(*w.label) +
                            " >= num_classes");
    }
    if (w.values.rank() != 2 || w.values.dim(0) != config.window_len ||
        w.values.dim(1) != config.num_features) {
      throw ShapeError("train: window shape " +
                       shape_string(w.values.shape()) +
                       " inconsistent with config");
    }
    classes.insert(*w.label);
  }
  if (classes.size() < 2) {
    throw InvalidArgument("train: dataset contains a single class");
  }

  std::mt19937_64 rng(config.rng_seed);
  LstmParameters params = LstmParameters::initialize(config, rng);
  SequenceModel model(config, class_labels, params, standardization);
  const LstmGraph& lg = model.graph();

  TrainingLog log;
  log.initial_loss = evaluate_loss(model, data).first;

  detail::Adam adam(params, config.learning_rate);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<ad::NodeId> wrt(lg.params.begin(), lg.params.end());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < order.size(); s += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - s);
      std::vector<Tensor> xs;
      xs.reserve(n);
      Tensor sel({n, config.num_classes});
      for (std::size_t i = 0; i < n; ++i) {
        const auto& w = data[order[s + i]];
        xs.push_back(w.values);
        sel.at(i, *w.label) = 1.0 / static_cast<double>(n);
      }
      const Tensor flat = stack_windows(xs);
      ad::Bindings b;
      const auto ts = params.tensors();
      for (std::size_t i = 0; i < ts.size(); ++i) b.bind(lg.params[i], *ts[i]);
      b.bind(lg.inputs, flat).bind(lg.selector, sel);
      const ad::NodeId out[] = {lg.loss};
      auto ev = ad::forward(lg.graph, b, out);
      const double batch_loss = ev[lg.loss][0];
      if (!std::isfinite(batch_loss)) {
        throw NumericError("training diverged: loss is " +
                           std::to_string(batch_loss) + " at epoch " +
                           std::to_string(epoch) + ", batch starting at " +
                           std::to_string(s) + " (learning_rate " +
                           std::to_string(config.learning_rate) + ")");
      }
      loss_sum += batch_loss * static_cast<double>(n);
      const Tensor& logits = ev[lg.logits];
      for (std::size_t i = 0; i < n; ++i) {
        auto row = logits.row(i);
        const auto arg = static_cast<std::size_t>(
            std::max_element(row.begin(), row.end()) - row.begin());
        if (arg == *data[order[s + i]].label) ++correct;
      }

      auto grads = ad::backward(lg.graph, ev, lg.loss, wrt);
      std::vector<Tensor> g;
      double norm2 = 0.0;
      for (ad::NodeId p : lg.params) {
        g.push_back(std::move(grads.at(p)));
        for (double v : g.back().data()) norm2 += v * v;
      }
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) {
        throw NumericError("training diverged: non-finite gradient at epoch " +
                           std::to_string(epoch));
      }
      if (config.grad_clip > 0.0 && norm > config.grad_clip) {
        const double f = config.grad_clip / norm;
        for (Tensor& t : g) {
          for (double& v : t.data()) v *= f;
        }
      }
      adam.step(params, g);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(data.size()),
                    static_cast<double>(correct) /
                        static_cast<double>(data.size())};
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return {SequenceModel(config, std::move(class_labels), std::move(params),
                        standardization),
          std::move(log)};
}

inline double accuracy(const SequenceModel& model,
                       std::span<const TimeSeriesWindow> data) {
  if (data.empty()) throw InvalidArgument("accuracy: empty dataset");
  std::vector<Tensor> xs;
  xs.reserve(data.size());
  for (const auto& w : data) xs.push_back(w.values);
  const auto pred = model.predict_classes(xs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].label && pred[i] == *data[i].label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

}  // namespace faultlens
