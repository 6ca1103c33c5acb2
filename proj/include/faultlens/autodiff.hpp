#pragma once

// Static computation graph with reverse-mode differentiation.
//
// A Graph is built once per architecture and is immutable afterwards. Shapes
// are inferred when the graph is evaluated, so the same graph serves every
// batch size. `forward` returns an Evaluation that owns all intermediate
// values, which makes concurrent evaluations of one graph safe.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faultlens/error.hpp"
#include "faultlens/tensor.hpp"

namespace faultlens::ad {

struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class Op : std::uint8_t {
  kInput,
  kParameter,
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kBiasAdd,
  kSigmoid,
  kTanh,
  kSoftmax,
  kLogSoftmax,
  kSliceCols,
  kConcatCols,
  kSum,
  kScale,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParameter: return "parameter";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatMul: return "matmul";
    case Op::kBiasAdd: return "bias_add";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kSliceCols: return "slice";
    case Op::kConcatCols: return "concat";
    case Op::kSum: return "sum";
    case Op::kScale: return "scale";
  }
  return "?";
}

struct Node {
  Op op = Op::kInput;
  std::uint32_t lhs = 0;
  std::uint32_t rhs = 0;
  std::size_t begin = 0;  // slice
  std::size_t end = 0;    // slice
  double factor = 1.0;    // scale
  std::string name;
  // Leaves only. With dynamic_rows the leading dimension is free.
  Shape shape;
  bool dynamic_rows = false;

  [[nodiscard]] bool is_leaf() const {
    return op == Op::kInput || op == Op::kParameter;
  }
  [[nodiscard]] int arity() const {
    switch (op) {
      case Op::kInput:
      case Op::kParameter: return 0;
      case Op::kSigmoid:
      case Op::kTanh:
      case Op::kSoftmax:
      case Op::kLogSoftmax:
      case Op::kSliceCols:
      case Op::kSum:
      case Op::kScale: return 1;
      default: return 2;
    }
  }
};

class Graph {
 public:
  NodeId input(std::string name, Shape shape, bool dynamic_rows = false) {
    return leaf(Op::kInput, std::move(name), std::move(shape), dynamic_rows);
  }
  NodeId parameter(std::string name, Shape shape) {
    return leaf(Op::kParameter, std::move(name), std::move(shape), false);
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }
  NodeId matmul(NodeId a, NodeId b) { return binary(Op::kMatMul, a, b); }
  /// a [n x m] plus bias b [m] added to every row.
  NodeId bias_add(NodeId a, NodeId b) { return binary(Op::kBiasAdd, a, b); }
  NodeId concat(NodeId a, NodeId b) { return binary(Op::kConcatCols, a, b); }
  NodeId sigmoid(NodeId a) { return unary(Op::kSigmoid, a); }
  NodeId tanh(NodeId a) { return unary(Op::kTanh, a); }
  NodeId softmax(NodeId a) { return unary(Op::kSoftmax, a); }
  NodeId log_softmax(NodeId a) { return unary(Op::kLogSoftmax, a); }
  NodeId sum(NodeId a) { return unary(Op::kSum, a); }

  NodeId scale(NodeId a, double factor) {
    NodeId id = unary(Op::kScale, a);
    nodes_.back().factor = factor;
    return id;
  }

  /// Columns [begin, end) of a matrix (or elements of a vector).
  NodeId slice(NodeId a, std::size_t begin, std::size_t end) {
    if (end <= begin) throw ShapeError("slice: empty column range");
    NodeId id = unary(Op::kSliceCols, a);
    nodes_.back().begin = begin;
    nodes_.back().end = end;
    return id;
  }

  void set_name(NodeId id, std::string name) {
    nodes_.at(id.index).name = std::move(name);
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const Node& node(NodeId id) const {
    return nodes_.at(id.index);
  }
  [[nodiscard]] const std::vector<Node>& nodes() const { return nodes_; }

  [[nodiscard]] std::string describe(NodeId id) const {
    const Node& n = node(id);
    std::string out = "node #" + std::to_string(id.index) + " (" +
                      op_name(n.op);
    if (!n.name.empty()) out += " '" + n.name + "'";
    return out + ")";
  }

 private:
  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }
  void check(NodeId id) const {
    if (id.index >= nodes_.size()) {
      throw InvalidArgument("graph: reference to unknown node #" +
                            std::to_string(id.index));
    }
  }
  NodeId leaf(Op op, std::string name, Shape shape, bool dynamic_rows) {
    if (shape.empty()) throw ShapeError("leaf '" + name + "' has empty shape");
    Node n;
    n.op = op;
    n.name = std::move(name);
    n.shape = std::move(shape);
    n.dynamic_rows = dynamic_rows;
    return push(std::move(n));
  }
  NodeId unary(Op op, NodeId a) {
    check(a);
    Node n;
    n.op = op;
    n.lhs = a.index;
    return push(std::move(n));
  }
  NodeId binary(Op op, NodeId a, NodeId b) {
    check(a);
    check(b);
    Node n;
    n.op = op;
    n.lhs = a.index;
    n.rhs = b.index;
    return push(std::move(n));
  }

  std::vector<Node> nodes_;
};

/// Leaf values for one evaluation. Bound tensors are referenced, not copied,
/// and must outlive any Evaluation produced from these bindings.
class Bindings {
 public:
  Bindings& bind(NodeId leaf, const Tensor& value) {
    if (slots_.size() <= leaf.index) slots_.resize(leaf.index + 1, nullptr);
    slots_[leaf.index] = &value;
    return *this;
  }
  [[nodiscard]] const Tensor* find(NodeId leaf) const {
    return leaf.index < slots_.size() ? slots_[leaf.index] : nullptr;
  }

 private:
  std::vector<const Tensor*> slots_;
};

/// Per-call workspace holding every evaluated node value.
class Evaluation {
 public:
  [[nodiscard]] const Tensor& operator[](NodeId id) const& {
    const Tensor* t = view_.at(id.index);
    if (t == nullptr) {
      throw InvalidArgument("node #" + std::to_string(id.index) +
                            " was not evaluated");
    }
    return *t;
  }
  // A temporary evaluation hands out copies, never dangling references.
  [[nodiscard]] Tensor operator[](NodeId id) const&& {
    return static_cast<const Evaluation&>(*this)[id];
  }
  [[nodiscard]] bool evaluated(NodeId id) const {
    return id.index < view_.size() && view_[id.index] != nullptr;
  }

 private:
  friend Evaluation forward(const Graph&, const Bindings&,
                            std::span<const NodeId>);
  std::vector<Tensor> owned_;
  std::vector<const Tensor*> view_;
};

using Gradients = std::map<NodeId, Tensor>;

namespace detail {

inline double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline void softmax_rows(std::span<const double> in, std::span<double> out,
                         std::size_t rows, std::size_t cols, bool log_space) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    if (log_space) {
      const double lz = std::log(z) + mx;
      for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - lz;
    } else {
      for (std::size_t j = 0; j < cols; ++j) y[j] = std::exp(x[j] - mx) / z;
    }
  }
}

inline Tensor evaluate_node(const Graph& g, std::uint32_t idx,
                            const Tensor* a, const Tensor* b) {
  const Node& n = g.nodes()[idx];
  auto fail = [&](const std::string& why) -> ShapeError {
    return ShapeError(g.describe(NodeId{idx}) + ": " + why);
  };
  auto same_shape = [&]() {
    if (a->shape() != b->shape()) {
      throw fail("operand shapes differ: " + shape_string(a->shape()) +
                 " vs " + shape_string(b->shape()));
    }
  };
  switch (n.op) {
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      same_shape();
      Tensor out(a->shape());
      auto x = a->data();
      auto y = b->data();
      auto o = out.data();
      if (n.op == Op::kAdd) {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      } else if (n.op == Op::kSub) {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      } else {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      }
      return out;
    }
    case Op::kMatMul: {
      if (a->rank() != 2 || b->rank() != 2) {
        throw fail("matmul needs rank-2 operands, got " +
                   shape_string(a->shape()) + " and " +
                   shape_string(b->shape()));
      }
      if (a->dim(1) != b->dim(0)) {
        throw fail("inner dimensions differ: " + shape_string(a->shape()) +
                   " x " + shape_string(b->shape()));
      }
      Tensor out({a->dim(0), b->dim(1)});
      gemm_nn(a->data(), b->data(), out.data(), a->dim(0), a->dim(1),
              b->dim(1));
      return out;
    }
    case Op::kBiasAdd: {
      if (a->rank() != 2 || b->size() != a->dim(1)) {
        throw fail("bias of shape " + shape_string(b->shape()) +
                   " does not fit " + shape_string(a->shape()));
      }
      Tensor out = *a;
      const std::size_t cols = a->dim(1);
      auto o = out.data();
      auto bias = b->data();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += bias[i % cols];
      return out;
    }
    case Op::kSigmoid:
    case Op::kTanh: {
      Tensor out(a->shape());
      auto x = a->data();
      auto o = out.data();
      if (n.op == Op::kSigmoid) {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_sigmoid(x[i]);
      } else {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
      }
      return out;
    }
    case Op::kSoftmax:
    case Op::kLogSoftmax: {
      if (a->rank() > 2) throw fail("softmax needs rank 1 or 2");
      Tensor out(a->shape());
      softmax_rows(a->data(), out.data(), a->rows(), a->cols(),
                   n.op == Op::kLogSoftmax);
      return out;
    }
    case Op::kSliceCols: {
      if (a->rank() > 2 || n.end > a->cols()) {
        throw fail("slice [" + std::to_string(n.begin) + "," +
                   std::to_string(n.end) + ") out of range for " +
                   shape_string(a->shape()));
      }
      const std::size_t width = n.end - n.begin;
      Shape s = a->rank() == 1 ? Shape{width} : Shape{a->rows(), width};
      Tensor out(s);
      for (std::size_t r = 0; r < a->rows(); ++r) {
        auto src = a->row(r).subspan(n.begin, width);
        std::copy(src.begin(), src.end(), out.row(r).begin());
      }
      return out;
    }
    case Op::kConcatCols: {
      if (a->rank() != 2 || b->rank() != 2 || a->dim(0) != b->dim(0)) {
        throw fail("concat needs matrices with equal rows, got " +
                   shape_string(a->shape()) + " and " +
                   shape_string(b->shape()));
      }
      Tensor out({a->dim(0), a->dim(1) + b->dim(1)});
      for (std::size_t r = 0; r < a->dim(0); ++r) {
        auto o = out.row(r);
        std::copy(a->row(r).begin(), a->row(r).end(), o.begin());
        std::copy(b->row(r).begin(), b->row(r).end(),
                  o.begin() + static_cast<std::ptrdiff_t>(a->dim(1)));
      }
      return out;
    }
    case Op::kSum:
      return Tensor::scalar(a->sum());
    case Op::kScale: {
      Tensor out(a->shape());
      auto x = a->data();
      auto o = out.data();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = n.factor * x[i];
      return out;
    }
    case Op::kInput:
    case Op::kParameter:
      break;
  }
  throw fail("leaf evaluated as an operation");
}

inline void accumulate(Tensor& dst, std::span<const double> src,
                       double factor = 1.0) {
  auto d = dst.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * src[i];
}

}  // namespace detail

/// Evaluates the graph. With a non-empty `outputs`, only the ancestors of
/// those nodes are computed (and only their leaves need bindings).
inline Evaluation forward(const Graph& graph, const Bindings& bindings,
                          std::span<const NodeId> outputs = {}) {
  const auto& nodes = graph.nodes();
  const std::size_t count = nodes.size();
  std::vector<char> needed(count, outputs.empty() ? 1 : 0);
  for (NodeId o : outputs) needed.at(o.index) = 1;
  for (std::size_t i = count; i-- > 0;) {
    if (!needed[i]) continue;
    const Node& n = nodes[i];
    if (n.arity() >= 1) needed[n.lhs] = 1;
    if (n.arity() == 2) needed[n.rhs] = 1;
  }

  Evaluation ev;
  ev.owned_.resize(count);
  ev.view_.assign(count, nullptr);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!needed[i]) continue;
    const Node& n = nodes[i];
    if (n.is_leaf()) {
      const Tensor* t = bindings.find(NodeId{i});
      if (t == nullptr) {
        throw InvalidArgument(graph.describe(NodeId{i}) + " is not bound");
      }
      const bool rows_ok = n.dynamic_rows
                               ? t->rank() == n.shape.size() &&
                                     std::equal(n.shape.begin() + 1,
                                                n.shape.end(),
                                                t->shape().begin() + 1)
                               : t->shape() == n.shape;
      if (!rows_ok) {
        throw ShapeError(graph.describe(NodeId{i}) + ": bound tensor " +
                         shape_string(t->shape()) + " does not match " +
                         shape_string(n.shape));
      }
      ev.view_[i] = t;
      continue;
    }
    const Tensor* a = ev.view_[n.lhs];
    const Tensor* b = n.arity() == 2 ? ev.view_[n.rhs] : nullptr;
    ev.owned_[i] = detail::evaluate_node(graph, i, a, b);
    ev.view_[i] = &ev.owned_[i];
  }
  return ev;
}

/// Reverse pass from a scalar `seed` node. Returns d(seed)/d(leaf) for each
/// requested leaf; contributions through fan-out are summed.
inline Gradients backward(const Graph& graph, const Evaluation& ev,
                          NodeId seed, std::span<const NodeId> wrt) {
  const auto& nodes = graph.nodes();
  const Tensor& seed_value = ev[seed];
  if (seed_value.size() != 1) {
    throw ShapeError(graph.describe(seed) + ": backward seed must be scalar, "
                     "got " + shape_string(seed_value.shape()));
  }
  // Only nodes with a path to a requested leaf need an adjoint.
  std::vector<char> wanted(nodes.size(), 0);
  for (NodeId w : wrt) {
    if (!nodes.at(w.index).is_leaf()) {
      throw InvalidArgument(graph.describe(w) + " is not a leaf");
    }
    wanted[w.index] = 1;
  }
  for (std::size_t i = 0; i <= seed.index; ++i) {
    const Node& n = nodes[i];
    if (n.arity() >= 1 && wanted[n.lhs]) wanted[i] = 1;
    if (n.arity() == 2 && wanted[n.rhs]) wanted[i] = 1;
  }

  std::vector<std::optional<Tensor>> adj(seed.index + 1);
  auto adjoint = [&](std::uint32_t i) -> Tensor& {
    if (!adj[i]) adj[i].emplace(ev[NodeId{i}].shape());
    return *adj[i];
  };
  adjoint(seed.index)[0] = 1.0;

  for (std::uint32_t i = seed.index + 1; i-- > 0;) {
    const Node& n = nodes[i];
    if (n.is_leaf() || !adj[i] || !wanted[i]) continue;
    const Tensor& g = *adj[i];
    const Tensor& y = ev[NodeId{i}];
    const bool need_a = n.arity() >= 1 && wanted[n.lhs];
    const bool need_b = n.arity() == 2 && wanted[n.rhs];
    auto gd = g.data();
    switch (n.op) {
      case Op::kAdd:
        if (need_a) detail::accumulate(adjoint(n.lhs), gd);
        if (need_b) detail::accumulate(adjoint(n.rhs), gd);
        break;
      case Op::kSub:
        if (need_a) detail::accumulate(adjoint(n.lhs), gd);
        if (need_b) detail::accumulate(adjoint(n.rhs), gd, -1.0);
        break;
      case Op::kMul: {
        auto av = ev[NodeId{n.lhs}].data();
        auto bv = ev[NodeId{n.rhs}].data();
        if (need_a) {
          auto d = adjoint(n.lhs).data();
          for (std::size_t k = 0; k < d.size(); ++k) d[k] += gd[k] * bv[k];
        }
        if (need_b) {
          auto d = adjoint(n.rhs).data();
          for (std::size_t k = 0; k < d.size(); ++k) d[k] += gd[k] * av[k];
        }
        break;
      }
      case Op::kMatMul: {
        const Tensor& a = ev[NodeId{n.lhs}];
        const Tensor& b = ev[NodeId{n.rhs}];
        const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
        if (need_a) {
          gemm_nt_acc(gd, b.data(), adjoint(n.lhs).data(), rows, inner, cols);
        }
        if (need_b) {
          gemm_tn_acc(a.data(), gd, adjoint(n.rhs).data(), rows, inner, cols);
        }
        break;
      }
      case Op::kBiasAdd: {
        if (need_a) detail::accumulate(adjoint(n.lhs), gd);
        if (need_b) {
          auto d = adjoint(n.rhs).data();
          const std::size_t cols = d.size();
          for (std::size_t k = 0; k < gd.size(); ++k) d[k % cols] += gd[k];
        }
        break;
      }
      case Op::kSigmoid: {
        if (!need_a) break;
        auto d = adjoint(n.lhs).data();
        auto yv = y.data();
        for (std::size_t k = 0; k < d.size(); ++k) {
          d[k] += gd[k] * yv[k] * (1.0 - yv[k]);
        }
        break;
      }
      case Op::kTanh: {
        if (!need_a) break;
        auto d = adjoint(n.lhs).data();
        auto yv = y.data();
        for (std::size_t k = 0; k < d.size(); ++k) {
          d[k] += gd[k] * (1.0 - yv[k] * yv[k]);
        }
        break;
      }
      case Op::kSoftmax:
      case Op::kLogSoftmax: {
        if (!need_a) break;
        auto d = adjoint(n.lhs).data();
        auto yv = y.data();
        const std::size_t cols = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const std::size_t off = r * cols;
          if (n.op == Op::kSoftmax) {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
              dot += gd[off + j] * yv[off + j];
            }
            for (std::size_t j = 0; j < cols; ++j) {
              d[off + j] += yv[off + j] * (gd[off + j] - dot);
            }
          } else {
            double gsum = 0.0;
            for (std::size_t j = 0; j < cols; ++j) gsum += gd[off + j];
            for (std::size_t j = 0; j < cols; ++j) {
              d[off + j] += gd[off + j] - std::exp(yv[off + j]) * gsum;
            }
          }
        }
        break;
      }
      case Op::kSliceCols: {
        if (!need_a) break;
        Tensor& d = adjoint(n.lhs);
        const std::size_t width = n.end - n.begin;
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto src = g.row(r);
          auto dst = d.row(r).subspan(n.begin, width);
          for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::kConcatCols: {
        const std::size_t wa = ev[NodeId{n.lhs}].dim(1);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto src = g.row(r);
          if (need_a) {
            auto dst = adjoint(n.lhs).row(r);
            for (std::size_t j = 0; j < wa; ++j) dst[j] += src[j];
          }
          if (need_b) {
            auto dst = adjoint(n.rhs).row(r);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[wa + j];
          }
        }
        break;
      }
      case Op::kSum: {
        if (!need_a) break;
        auto d = adjoint(n.lhs).data();
        for (double& v : d) v += gd[0];
        break;
      }
      case Op::kScale:
        if (need_a) detail::accumulate(adjoint(n.lhs), gd, n.factor);
        break;
      case Op::kInput:
      case Op::kParameter:
        break;
    }
    adj[i].reset();  // interior adjoints are dead once propagated
  }

  Gradients out;
  for (NodeId w : wrt) {
    if (w.index <= seed.index && adj[w.index]) {
      out.emplace(w, std::move(*adj[w.index]));
      adj[w.index].reset();
    } else if (!out.contains(w)) {
      const Tensor* t = ev.evaluated(w) ? &ev[w] : nullptr;
      if (t == nullptr) {
        throw InvalidArgument(graph.describe(w) + " was not evaluated");
      }
      out.emplace(w, Tensor(t->shape()));
    }
  }
  return out;
}

}  // namespace faultlens::ad
