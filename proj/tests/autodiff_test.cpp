#include "faultlens/autodiff.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <thread>

#include "faultlens/seqmodel.hpp"
#include "support/gradcheck.hpp"

namespace faultlens::ad {
namespace {

using faultlens::testing::central_difference;
using faultlens::testing::random_tensor;
using faultlens::testing::relative_error;

TEST(Forward, SigmoidOfZeroIsHalf) {
  Graph g;
  const NodeId x = g.input("x", {1});
  const NodeId y = g.sigmoid(x);
  const Tensor zero = Tensor::scalar(0.0);
  Bindings b;
  b.bind(x, zero);
  EXPECT_DOUBLE_EQ(forward(g, b)[y][0], 0.5);
}

TEST(Forward, MatmulByHand) {
  Graph g;
  const NodeId a = g.input("a", {2, 2});
  const NodeId c = g.input("c", {2, 1});
  const NodeId y = g.matmul(a, c);
  const Tensor av = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor cv = Tensor::from_rows({{1}, {1}});
  Bindings b;
  b.bind(a, av).bind(c, cv);
  const Tensor& out = forward(g, b)[y];
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_EQ(out[0], 3.0);
  EXPECT_EQ(out[1], 7.0);
}

TEST(Forward, SoftmaxOfEqualLogitsIsUniform) {
  Graph g;
  const NodeId x = g.input("x", {3});
  const NodeId y = g.softmax(x);
  const Tensor v({3}, 0.0);
  Bindings b;
  b.bind(x, v);
  const Tensor& out = forward(g, b)[y];
  for (double p : out.data()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(Forward, ShapeMismatchNamesTheNode) {
  Graph g;
  const NodeId a = g.input("a", {2, 3});
  const NodeId c = g.input("c", {2, 3});
  const NodeId y = g.matmul(a, c);
  g.set_name(y, "projection");
  const Tensor av({2, 3}, 1.0), cv({2, 3}, 1.0);
  Bindings b;
  b.bind(a, av).bind(c, cv);
  try {
    (void)forward(g, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("projection"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
}

TEST(Forward, BoundLeafShapeIsChecked) {
  Graph g;
  const NodeId a = g.input("a", {2, 3});
  g.sum(a);
  const Tensor wrong({3, 2}, 1.0);
  Bindings b;
  b.bind(a, wrong);
  EXPECT_THROW((void)forward(g, b), ShapeError);
}

TEST(Forward, UnboundLeafIsRejected) {
  Graph g;
  const NodeId a = g.input("a", {1});
  g.sum(a);
  EXPECT_THROW((void)forward(g, Bindings{}), InvalidArgument);
}

TEST(Forward, OnlyAncestorsOfRequestedOutputsAreEvaluated) {
  Graph g;
  const NodeId a = g.input("a", {1});
  const NodeId unused = g.input("unused", {1});
  const NodeId y = g.tanh(a);
  const NodeId z = g.add(a, unused);
  const Tensor av = Tensor::scalar(0.3);
  Bindings b;
  b.bind(a, av);
  const NodeId out[] = {y};
  const Evaluation ev = forward(g, b, out);
  EXPECT_TRUE(ev.evaluated(y));
  EXPECT_FALSE(ev.evaluated(z));
}

TEST(Backward, SquareAtThree) {
  Graph g;
  const NodeId x = g.input("x", {1});
  const NodeId y = g.sum(g.mul(x, x));
  const Tensor three = Tensor::scalar(3.0);
  Bindings b;
  b.bind(x, three);
  const NodeId wrt[] = {x};
  auto grads = backward(g, forward(g, b), y, wrt);
  EXPECT_DOUBLE_EQ(grads.at(x)[0], 6.0);
}

TEST(Backward, ProductRule) {
  Graph g;
  const NodeId x = g.input("x", {1});
  const NodeId y = g.input("y", {1});
  const NodeId f = g.sum(g.mul(x, y));
  const Tensor xv = Tensor::scalar(2.0), yv = Tensor::scalar(5.0);
  Bindings b;
  b.bind(x, xv).bind(y, yv);
  const NodeId wrt[] = {x, y};
  auto grads = backward(g, forward(g, b), f, wrt);
  EXPECT_DOUBLE_EQ(grads.at(x)[0], 5.0);
  EXPECT_DOUBLE_EQ(grads.at(y)[0], 2.0);
}

TEST(Backward, NonScalarSeedIsRejected) {
  Graph g;
  const NodeId x = g.input("x", {3});
  const NodeId y = g.tanh(x);
  const Tensor xv({3}, 0.1);
  Bindings b;
  b.bind(x, xv);
  const NodeId wrt[] = {x};
  EXPECT_THROW((void)backward(g, forward(g, b), y, wrt), ShapeError);
}

TEST(Backward, UnreachableLeafGetsZeroGradient) {
  Graph g;
  const NodeId x = g.input("x", {2});
  const NodeId other = g.input("other", {2});
  const NodeId y = g.sum(g.tanh(x));
  g.sum(other);
  const Tensor xv({2}, 0.5), ov({2}, 1.0);
  Bindings b;
  b.bind(x, xv).bind(other, ov);
  const NodeId wrt[] = {other};
  auto grads = backward(g, forward(g, b), y, wrt);
  EXPECT_EQ(grads.at(other), Tensor({2}, 0.0));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks for every primitive.

struct PrimitiveCase {
  std::string name;
  Shape a_shape;
  Shape b_shape;  // empty for unary ops
  std::function<NodeId(Graph&, NodeId, NodeId)> build;
};

std::vector<PrimitiveCase> primitive_cases() {
  return {
      {"add", {3, 4}, {3, 4}, [](Graph& g, NodeId a, NodeId b) { return g.add(a, b); }},
      {"sub", {3, 4}, {3, 4}, [](Graph& g, NodeId a, NodeId b) { return g.sub(a, b); }},
      {"mul", {3, 4}, {3, 4}, [](Graph& g, NodeId a, NodeId b) { return g.mul(a, b); }},
      {"matmul", {3, 4}, {4, 2}, [](Graph& g, NodeId a, NodeId b) { return g.matmul(a, b); }},
      {"bias_add", {3, 4}, {4}, [](Graph& g, NodeId a, NodeId b) { return g.bias_add(a, b); }},
      {"concat", {3, 2}, {3, 5}, [](Graph& g, NodeId a, NodeId b) { return g.concat(a, b); }},
      {"sigmoid", {3, 4}, {}, [](Graph& g, NodeId a, NodeId) { return g.sigmoid(a); }},
      {"tanh", {3, 4}, {}, [](Graph& g, NodeId a, NodeId) { return g.tanh(a); }},
      {"softmax", {3, 4}, {}, [](Graph& g, NodeId a, NodeId) { return g.softmax(a); }},
      {"log_softmax", {3, 4}, {}, [](Graph& g, NodeId a, NodeId) { return g.log_softmax(a); }},
      {"slice", {3, 6}, {}, [](Graph& g, NodeId a, NodeId) { return g.slice(a, 1, 4); }},
      {"sum", {3, 4}, {}, [](Graph& g, NodeId a, NodeId) { return g.sum(a); }},
      {"scale", {3, 4}, {}, [](Graph& g, NodeId a, NodeId) { return g.scale(a, -2.5); }},
  };
}

class PrimitiveGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const PrimitiveCase pc = primitive_cases()[GetParam()];
  std::mt19937_64 rng(1000 + GetParam());
  // Scalar objective: sum(op(a, b) * r) with a fixed random projection r.
  Graph g;
  const NodeId a = g.input("a", pc.a_shape);
  const NodeId b = pc.b_shape.empty() ? a : g.input("b", pc.b_shape);
  const NodeId y = pc.build(g, a, b);
  // Probe the output shape once to size the projection.
  Tensor av = random_tensor(pc.a_shape, rng);
  Tensor bv = pc.b_shape.empty() ? av : random_tensor(pc.b_shape, rng);
  Bindings probe;
  probe.bind(a, av).bind(b, bv);
  const NodeId y_only[] = {y};
  const Shape out_shape = forward(g, probe, y_only)[y].shape();
  const NodeId r = g.input("r", out_shape);
  const NodeId f = g.sum(g.mul(y, r));

  for (int point = 0; point < 100; ++point) {
    av = random_tensor(pc.a_shape, rng, -2.0, 2.0);
    if (!pc.b_shape.empty()) bv = random_tensor(pc.b_shape, rng, -2.0, 2.0);
    const Tensor rv = random_tensor(out_shape, rng);
    Bindings bind;
    bind.bind(a, av).bind(r, rv);
    if (!pc.b_shape.empty()) bind.bind(b, bv);
    std::vector<NodeId> wrt{a};
    if (!pc.b_shape.empty()) wrt.push_back(b);
    const auto grads = backward(g, forward(g, bind), f, wrt);

    auto objective_a = [&](const Tensor& x) {
      Bindings bb;
      bb.bind(a, x).bind(r, rv);
      if (!pc.b_shape.empty()) bb.bind(b, bv);
      return forward(g, bb)[f][0];
    };
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double fd = central_difference(objective_a, av, i);
      EXPECT_LE(relative_error(grads.at(a)[i], fd), 1e-4)
          << pc.name << " d/da[" << i << "] ad=" << grads.at(a)[i]
          << " fd=" << fd;
    }
    if (pc.b_shape.empty()) continue;
    auto objective_b = [&](const Tensor& x) {
      Bindings bb;
      bb.bind(a, av).bind(b, x).bind(r, rv);
      return forward(g, bb)[f][0];
    };
    for (std::size_t i = 0; i < bv.size(); ++i) {
      const double fd = central_difference(objective_b, bv, i);
      EXPECT_LE(relative_error(grads.at(b)[i], fd), 1e-4)
          << pc.name << " d/db[" << i << "]";
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient,
                         ::testing::Range<std::size_t>(0, 13),
                         [](const auto& info) {
                           return primitive_cases()[info.param].name;
                         });

TEST(GradientCheck, FullLstmCellAtRandomPoints) {
  ModelConfig cfg;
  cfg.num_features = 3;
  cfg.window_len = 2;
  cfg.hidden_size = 4;
  cfg.num_classes = 3;
  const LstmGraph lg = build_lstm_graph(cfg);
  std::mt19937_64 rng(77);
  for (int point = 0; point < 100; ++point) {
    LstmParameters p = LstmParameters::zeros(cfg);
    for (Tensor* t : p.tensors()) *t = random_tensor(t->shape(), rng);
    const Tensor x = random_tensor({2, 6}, rng, -2.0, 2.0);
    const Tensor sel = random_tensor({2, 3}, rng);
    auto bind_all = [&](const LstmParameters& params, const Tensor& xs) {
      Bindings b;
      const auto ts = params.tensors();
      for (std::size_t i = 0; i < ts.size(); ++i) b.bind(lg.params[i], *ts[i]);
      b.bind(lg.inputs, xs).bind(lg.selector, sel);
      return b;
    };
    std::vector<NodeId> wrt(lg.params.begin(), lg.params.end());
    wrt.push_back(lg.inputs);
    const auto grads =
        backward(lg.graph, forward(lg.graph, bind_all(p, x)), lg.loss, wrt);

    // One random coordinate per parameter tensor plus one input coordinate.
    for (std::size_t k = 0; k < 6; ++k) {
      const bool is_input = k == 5;
      const Tensor& base = is_input ? x : *p.tensors()[k];
      std::uniform_int_distribution<std::size_t> pick(0, base.size() - 1);
      const std::size_t idx = pick(rng);
      auto objective = [&](const Tensor& v) {
        LstmParameters q = p;
        if (is_input) return forward(lg.graph, bind_all(q, v))[lg.loss][0];
        *q.tensors()[k] = v;
        return forward(lg.graph, bind_all(q, x))[lg.loss][0];
      };
      const double fd = central_difference(objective, base, idx);
      const double got = grads.at(wrt[k])[idx];
      EXPECT_LE(relative_error(got, fd), 1e-4)
          << "tensor " << k << " index " << idx << " ad=" << got
          << " fd=" << fd;
    }
  }
}

// ---------------------------------------------------------------------------
// Properties

TEST(Properties, BackwardIsLinear) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_real_distribution<double> coef(-3.0, 3.0);
    const double alpha = coef(rng), beta = coef(rng);
    Graph g;
    const NodeId x = g.input("x", {2, 3});
    const NodeId w = g.input("w", {3, 2});
    const NodeId f = g.sum(g.tanh(g.matmul(x, w)));
    const NodeId h = g.sum(g.mul(g.sigmoid(x), x));
    const NodeId comb = g.add(g.scale(f, alpha), g.scale(h, beta));
    const Tensor xv = random_tensor({2, 3}, rng);
    const Tensor wv = random_tensor({3, 2}, rng);
    Bindings b;
    b.bind(x, xv).bind(w, wv);
    const Evaluation ev = forward(g, b);
    const NodeId wrt[] = {x, w};
    const auto gf = backward(g, ev, f, wrt);
    const auto gh = backward(g, ev, h, wrt);
    const auto gc = backward(g, ev, comb, wrt);
    for (NodeId leaf : wrt) {
      for (std::size_t i = 0; i < gc.at(leaf).size(); ++i) {
        EXPECT_NEAR(gc.at(leaf)[i],
                    alpha * gf.at(leaf)[i] + beta * gh.at(leaf)[i], 1e-12);
      }
    }
  }
}

TEST(Properties, ForwardAndBackwardAreBitDeterministic) {
  ModelConfig cfg;
  cfg.num_features = 4;
  cfg.window_len = 5;
  cfg.hidden_size = 6;
  cfg.num_classes = 3;
  const SequenceModel model = SequenceModel::initialized(cfg);
  std::mt19937_64 rng(9);
  const Tensor w = random_tensor({5, 4}, rng);
  const auto l1 = model.logits(w);
  const auto l2 = model.logits(w);
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(model.input_gradient(w, 1), model.input_gradient(w, 1));
}

TEST(Properties, ConcurrentEvaluationsMatchSequential) {
  ModelConfig cfg;
  cfg.num_features = 3;
  cfg.window_len = 6;
  cfg.hidden_size = 8;
  cfg.num_classes = 4;
  const SequenceModel model = SequenceModel::initialized(cfg);
  std::mt19937_64 rng(10);
  std::vector<Tensor> windows;
  for (int i = 0; i < 8; ++i) windows.push_back(random_tensor({6, 3}, rng));
  std::vector<Tensor> expected;
  for (const auto& w : windows) expected.push_back(model.input_gradient(w, 2));

  std::vector<Tensor> got(windows.size());
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    pool.emplace_back([&, i] { got[i] = model.input_gradient(windows[i], 2); });
  }
  for (auto& t : pool) t.join();
  EXPECT_EQ(got, expected);
}

TEST(Properties, FiniteInputsGiveFiniteOutputs) {
  std::mt19937_64 rng(11);
  Graph g;
  const NodeId x = g.input("x", {4, 5});
  const NodeId y = g.sum(g.log_softmax(g.mul(g.tanh(x), g.sigmoid(x))));
  for (int i = 0; i < 50; ++i) {
    const Tensor xv = random_tensor({4, 5}, rng, -800.0, 800.0);
    Bindings b;
    b.bind(x, xv);
    const Evaluation ev = forward(g, b);
    EXPECT_TRUE(ev[y].all_finite());
    const NodeId wrt[] = {x};
    EXPECT_TRUE(backward(g, ev, y, wrt).at(x).all_finite());
  }
}

}  // namespace
}  // namespace faultlens::ad
