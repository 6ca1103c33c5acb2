#include "faultlens/seqmodel.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/gradcheck.hpp"
#include "support/toy_data.hpp"

namespace faultlens {
namespace {

using testing::central_difference;
using testing::random_tensor;
using testing::relative_error;
using testing::sine_vs_step;
using testing::small_config;

class TrainedSineModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    train_set_ = new std::vector<TimeSeriesWindow>(sine_vs_step(200, 1));
    result_ = new TrainResult(train(*train_set_, small_config()));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete train_set_;
  }
  static std::vector<TimeSeriesWindow>* train_set_;
  static TrainResult* result_;
};
std::vector<TimeSeriesWindow>* TrainedSineModel::train_set_ = nullptr;
TrainResult* TrainedSineModel::result_ = nullptr;

TEST_F(TrainedSineModel, HoldoutAccuracyOnSeparableData) {
  const auto holdout = sine_vs_step(200, 2);
  EXPECT_GE(accuracy(result_->model, holdout), 0.98);
}

TEST_F(TrainedSineModel, FitsItsTrainingSet) {
  EXPECT_GE(accuracy(result_->model, *train_set_), 0.95);
}

TEST_F(TrainedSineModel, LossDecreases) {
  ASSERT_EQ(result_->log.epochs.size(), small_config().epochs);
  EXPECT_LT(result_->log.final_loss(), result_->log.initial_loss);
}

TEST_F(TrainedSineModel, PredictIsAProbabilityVector) {
  for (const auto& w : *train_set_) {
    const auto p = result_->model.predict(w);
    double s = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST_F(TrainedSineModel, InputGradientMatchesFiniteDifferences) {
  const SequenceModel& m = result_->model;
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> pick_window(0, 199);
  std::uniform_int_distribution<std::size_t> pick_entry(0, 39);
  for (int k = 0; k < 20; ++k) {
    const Tensor& w = (*train_set_)[pick_window(rng)].values;
    const std::size_t target = static_cast<std::size_t>(k % 2);
    const Tensor grad = m.input_gradient(w, target);
    const std::size_t idx = pick_entry(rng);
    const double fd = central_difference(
        [&](const Tensor& x) { return m.logits(x)[target]; }, w, idx);
    EXPECT_LE(relative_error(grad[idx], fd), 1e-4)
        << "entry " << idx << " ad=" << grad[idx] << " fd=" << fd;
  }
}

TEST_F(TrainedSineModel, DirectForwardMatchesGraphBitwise) {
  std::mt19937_64 rng(21);
  const Tensor batch = random_tensor({37, 20, 2}, rng, -4.0, 4.0);
  EXPECT_EQ(result_->model.logits_batch(batch).values(),
            result_->model.graph_logits_batch(batch).values());
  std::vector<Tensor> xs;
  for (const auto& w : *train_set_) xs.push_back(w.values);
  const Tensor stacked = stack_windows(xs);
  EXPECT_EQ(result_->model.logits_batch(stacked).values(),
            result_->model.graph_logits_batch(stacked).values());
}

TEST_F(TrainedSineModel, SaveLoadPredictsBitIdentically) {
  const std::string bytes = save_model(result_->model);
  const SequenceModel back = load_model(bytes);
  EXPECT_EQ(back.parameters(), result_->model.parameters());
  EXPECT_EQ(back.config(), result_->model.config());
  std::mt19937_64 rng(12);
  for (int i = 0; i < 20; ++i) {
    const Tensor w = random_tensor({20, 2}, rng, -3.0, 3.0);
    EXPECT_EQ(back.logits(w), result_->model.logits(w));
    EXPECT_EQ(back.predict(w), result_->model.predict(w));
  }
}

TEST(Train, IsDeterministicForAFixedSeed) {
  const auto data = sine_vs_step(60, 5);
  ModelConfig c = small_config();
  c.epochs = 3;
  const auto a = train(data, c);
  const auto b = train(data, c);
  EXPECT_EQ(a.model.parameters(), b.model.parameters());
  c.rng_seed = 4;
  const auto d = train(data, c);
  EXPECT_NE(a.model.parameters(), d.model.parameters());
}

TEST(Train, RejectsEmptyDataset) {
  std::vector<TimeSeriesWindow> none;
  EXPECT_THROW((void)train(none, small_config()), InvalidArgument);
}

TEST(Train, RejectsSingleClassDataset) {
  auto data = sine_vs_step(10, 6);
  for (auto& w : data) w.label = 1;
  EXPECT_THROW((void)train(data, small_config()), InvalidArgument);
}

TEST(Train, RejectsMismatchedWindowShape) {
  auto data = sine_vs_step(10, 6);
  data[3].values = Tensor({20, 3});
  EXPECT_THROW((void)train(data, small_config()), ShapeError);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
  auto data = sine_vs_step(10, 6);
  data[0].values.at(0, 0) = std::numeric_limits<double>::infinity();
  try {
    (void)train(data, small_config());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Predict, ZeroOutputLayerGivesUniformProbabilities) {
  ModelConfig c = small_config();
  c.num_classes = 5;
  SequenceModel init = SequenceModel::initialized(c);
  LstmParameters p = init.parameters();
  p.output_weights.fill(0.0);
  p.output_bias.fill(0.0);
  const SequenceModel m(c, {}, p);
  std::mt19937_64 rng(1);
  const auto probs = m.predict(random_tensor({20, 2}, rng));
  for (double v : probs) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Predict, WrongWindowWidthIsRejected) {
  const SequenceModel m = SequenceModel::initialized(small_config());
  EXPECT_THROW((void)m.predict(Tensor({20, 3})), ShapeError);
  EXPECT_THROW((void)m.predict(Tensor({19, 2})), ShapeError);
}

TEST(InputGradient, ConstantFunctionHasZeroGradient) {
  const ModelConfig c = small_config();
  LstmParameters p = SequenceModel::initialized(c).parameters();
  p.input_weights.fill(0.0);
  p.recurrent_weights.fill(0.0);
  const SequenceModel m(c, {}, p);
  std::mt19937_64 rng(2);
  const Tensor g = m.input_gradient(random_tensor({20, 2}, rng), 1);
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(InputGradient, InvalidClassIsRejected) {
  const SequenceModel m = SequenceModel::initialized(small_config());
  EXPECT_THROW((void)m.input_gradient(Tensor({20, 2}), 2), InvalidArgument);
}

TEST(InputGradient, LargeInputsStayFinite) {
  const SequenceModel m = SequenceModel::initialized(small_config());
  std::mt19937_64 rng(8);
  Tensor w = random_tensor({20, 2}, rng);
  w.at(5, 1) *= 2.0;
  w.at(7, 0) = 1e6;
  EXPECT_TRUE(m.input_gradient(w, 0).all_finite());
}

TEST(Persistence, VersionMismatchIsRejected) {
  const SequenceModel m = SequenceModel::initialized(small_config());
  auto j = m.to_json();
  j["version"] = 99;
  EXPECT_THROW((void)SequenceModel::from_json(j), DataError);
}

TEST(Persistence, ShapeMismatchIsRejected) {
  const SequenceModel m = SequenceModel::initialized(small_config());
  auto j = m.to_json();
  j["config"]["hidden_size"] = 9;
  EXPECT_THROW((void)SequenceModel::from_json(j), ShapeError);
}

TEST(Persistence, GarbageIsRejected) {
  EXPECT_THROW((void)load_model("not json"), DataError);
  EXPECT_THROW((void)load_model("{\"format\": \"other\"}"), DataError);
}

}  // namespace
}  // namespace faultlens
