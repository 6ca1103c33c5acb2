#include "faultlens/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

namespace faultlens {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("faultlens_ds_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::size_t count_label(const std::vector<TimeSeriesWindow>& w, std::size_t label) {
  std::size_t n = 0;
  for (const auto& x : w) n += x.label == label;
  return n;
}

Dataset one_scenario(std::size_t onset, std::size_t window, std::size_t stride) {
  sim::ProcessSpec spec = sim::ProcessSpec::standard();
  const auto sc = std::vector{sim::builtin_scenario("IDV4-analogue")};
  GenerateOptions opt;
  opt.runs_per_scenario = 1;
  opt.holdout_runs = 0;
  opt.window_len = window;
  opt.stride = stride;
  opt.onset = onset;
  return generate_dataset(spec, sc, opt);
}

std::string tep_fixture(std::size_t rows, std::size_t cols, unsigned seed,
                        bool header = false, const std::string& bad = "") {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::string out;
  if (header) {
    for (std::size_t c = 0; c < cols; ++c) out += (c ? ",v" : "v") + std::to_string(c);
    out += "\n";
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) out += ",";
      if (!bad.empty() && r == 3 && c == 7) {
        out += bad;
      } else {
        out += csv::format_exact(u(rng));
      }
    }
    out += "\n";
  }
  return out;
}

TEST(Windowing, StraddlingWindowsAreDiscarded) {
  const Dataset ds = one_scenario(200, 50, 50);
  const auto w = make_windows(ds);
  EXPECT_EQ(count_label(w, kNormalClass), 4u);
  EXPECT_EQ(count_label(w, 1), 6u);

  const Dataset ds2 = one_scenario(210, 50, 50);
  const auto w2 = make_windows(ds2);
  EXPECT_EQ(count_label(w2, kNormalClass), 4u);
  EXPECT_EQ(count_label(w2, 1), 5u);
  for (const auto& x : w2) {
    const bool before = *x.start + 50 <= 210;
    const bool after = *x.start >= 210;
    ASSERT_TRUE(before || after);
    EXPECT_EQ(*x.label, before ? kNormalClass : 1u);
  }
}

TEST(Windowing, WindowLabelRule) {
  faultlens::Run run;
  run.values = Tensor({100, 1});
  run.label = 2;
  run.onset = 40;
  EXPECT_EQ(window_label(run, 0, 40), kNormalClass);
  EXPECT_EQ(window_label(run, 1, 40), std::nullopt);
  EXPECT_EQ(window_label(run, 40, 10), 2u);
  run.label = kNormalClass;
  EXPECT_EQ(window_label(run, 1, 40), kNormalClass);
}

TEST(Windowing, WindowsAreStandardizedSlices) {
  const Dataset ds = one_scenario(200, 50, 50);
  const auto w = make_windows(ds);
  const auto& x = w[2];
  const faultlens::Run& run = ds.runs[*x.run];
  for (std::size_t t = 0; t < 50; ++t) {
    for (std::size_t c = 0; c < ds.num_channels(); ++c) {
      const double raw = run.values.at(*x.start + t, c);
      const double z = (raw - ds.standardization.mean[c]) / ds.standardization.stddev[c];
      ASSERT_EQ(x.values.at(t, c), z);
    }
  }
}

TEST(Windowing, HorizonKeepsEarlyFaultWindowsOnly) {
  const Dataset ds = one_scenario(200, 50, 50);
  WindowOptions opt{50, 50, std::nullopt, 100};
  const auto w = make_windows(ds, opt);
  ASSERT_EQ(w.size(), 2u);
  for (const auto& x : w) {
    EXPECT_GE(*x.start, 200u);
    EXPECT_LE(*x.start + 50, 300u);
  }
}

TEST(GenerateDataset, TwoScenariosGiveThreeClasses) {
  sim::ProcessSpec spec = sim::ProcessSpec::standard();
  spec.duration = 300;
  const std::vector<sim::FaultScenario> sc = {sim::builtin_scenario("IDV3-analogue"),
                                              sim::builtin_scenario("IDV14-analogue")};
  GenerateOptions opt;
  opt.runs_per_scenario = 2;
  opt.holdout_runs = 1;
  const Dataset ds = generate_dataset(spec, sc, opt);
  EXPECT_EQ(ds.num_classes(), 3u);
  EXPECT_EQ(ds.class_labels[0], "normal");
  EXPECT_EQ(ds.class_labels[2], "IDV14-analogue");
  EXPECT_EQ(ds.runs.size(), 4u);
  EXPECT_EQ(ds.runs[0].split, Split::kTrain);
  EXPECT_EQ(ds.runs[1].split, Split::kTest);
  EXPECT_NE(ds.runs[0].seed, ds.runs[1].seed);
  const auto train = make_windows(ds, Split::kTrain);
  const auto test = make_windows(ds, Split::kTest);
  EXPECT_EQ(train.size() + test.size(), make_windows(ds).size());
}

TEST(GenerateDataset, Errors) {
  sim::ProcessSpec spec = sim::ProcessSpec::standard();
  const auto sc = std::vector{sim::builtin_scenario("IDV4-analogue")};
  GenerateOptions opt;
  opt.stride = 501;
  EXPECT_THROW(generate_dataset(spec, sc, opt), InvalidArgument);
  opt.stride = 5;
  opt.window_len = 501;
  EXPECT_THROW(generate_dataset(spec, sc, opt), InvalidArgument);
  opt.window_len = 500;
  opt.onset = 250;
  EXPECT_THROW(generate_dataset(spec, sc, opt), DataError);
  EXPECT_THROW(generate_dataset(spec, std::vector<sim::FaultScenario>{}, GenerateOptions{}),
               InvalidArgument);
}

TEST(GenerateDataset, StandardizationUsesNormalRowsOnly) {
  const Dataset ds = one_scenario(200, 50, 50);
  const faultlens::Run& run = ds.runs[0];
  double mean = 0.0;
  for (std::size_t k = 0; k < 200; ++k) mean += run.values.at(k, sim::kCoolantValve);
  mean /= 200.0;
  EXPECT_NEAR(ds.standardization.mean[sim::kCoolantValve], mean, 1e-9);
}

TEST(GenerateDataset, Deterministic) {
  const Dataset a = one_scenario(200, 50, 50);
  const Dataset b = one_scenario(200, 50, 50);
  EXPECT_EQ(a.runs[0].values, b.runs[0].values);
  EXPECT_EQ(a.standardization.mean, b.standardization.mean);
}

TEST(DatasetFiles, SaveLoadRoundTrip) {
  TempDir tmp;
  const Dataset ds = one_scenario(200, 50, 25);
  save_dataset(ds, tmp.path);
  EXPECT_TRUE(fs::exists(tmp.path / "manifest.json"));
  EXPECT_TRUE(fs::exists(tmp.path / "run_000.csv"));
  const Dataset back = load_dataset(tmp.path);
  EXPECT_EQ(back.schema, ds.schema);
  EXPECT_EQ(back.class_labels, ds.class_labels);
  ASSERT_EQ(back.runs.size(), 1u);
  EXPECT_EQ(back.runs[0].values, ds.runs[0].values);
  EXPECT_EQ(back.runs[0].onset, ds.runs[0].onset);
  EXPECT_EQ(back.runs[0].seed, ds.runs[0].seed);
  EXPECT_EQ(back.standardization.mean, ds.standardization.mean);
  EXPECT_EQ(back.standardization.stddev, ds.standardization.stddev);
  EXPECT_EQ(back.window_len, 50u);
  EXPECT_EQ(back.stride, 25u);
}

TEST(DatasetFiles, MissingDirectory) {
  EXPECT_THROW(load_dataset("/nonexistent/faultlens"), IoError);
}

TEST(IngestTep, HeaderlessFiftyTwoColumns) {
  const Dataset ds = ingest_tep_csv_text(tep_fixture(960, 52, 1), {});
  ASSERT_EQ(ds.runs.size(), 1u);
  EXPECT_EQ(ds.runs[0].length(), 960u);
  ASSERT_EQ(ds.schema.size(), 52u);
  EXPECT_EQ(ds.schema.front(), "xmeas_1");
  EXPECT_EQ(ds.schema[40], "xmeas_41");
  EXPECT_EQ(ds.schema[41], "xmv_1");
  EXPECT_EQ(ds.schema.back(), "xmv_11");
  EXPECT_EQ(ds.num_classes(), 1u);
}

TEST(IngestTep, FiftyThreeColumnsWithHeader) {
  TepCsvOptions opt;
  opt.schema = TepSchema::k53;
  opt.fault_label = "IDV11";
  opt.onset = 160;
  const Dataset ds = ingest_tep_csv_text(tep_fixture(500, 53, 2, true), opt);
  EXPECT_EQ(ds.schema.back(), "xmv_12");
  EXPECT_EQ(ds.runs[0].length(), 500u);
  EXPECT_EQ(ds.runs[0].onset, 160u);
  EXPECT_EQ(ds.class_labels, (std::vector<std::string>{"normal", "IDV11"}));
}

TEST(IngestTep, LabelColumnGivesOnset) {
  std::string text;
  for (int r = 0; r < 30; ++r) {
    for (int c = 0; c < 52; ++c) text += std::to_string(r + c) + ",";
    text += r >= 12 ? "8\n" : "0\n";
  }
  TepCsvOptions opt;
  opt.label_column = true;
  const Dataset ds = ingest_tep_csv_text(text, opt);
  EXPECT_EQ(ds.runs[0].onset, 12u);
  EXPECT_EQ(ds.class_labels[1], "IDV8");
  EXPECT_EQ(ds.runs[0].values.cols(), 52u);
  EXPECT_EQ(ds.runs[0].values.at(2, 51), 53.0);
}

TEST(IngestTep, WrongWidthListsExpectedSchemas) {
  try {
    ingest_tep_csv_text(tep_fixture(20, 10, 3), {});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("52"), std::string::npos);
    EXPECT_NE(msg.find("53"), std::string::npos);
    EXPECT_NE(msg.find("10"), std::string::npos);
  }
}

TEST(IngestTep, NonNumericCellReportsCoordinates) {
  try {
    ingest_tep_csv_text(tep_fixture(20, 52, 4, false, "NA"), {});
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 4u);
    EXPECT_EQ(e.col(), 8u);
    EXPECT_NE(std::string(e.what()).find("NA"), std::string::npos);
  }
}

TEST(IngestTep, RaggedRowIsRejected) {
  std::string text = tep_fixture(5, 52, 5);
  text += "1,2,3\n";
  EXPECT_THROW(ingest_tep_csv_text(text, {}), ParseError);
}

TEST(IngestTep, FromFile) {
  TempDir tmp;
  io::write_file_atomic(tmp.path / "d00.csv", tep_fixture(100, 52, 6));
  const Dataset ds = ingest_tep_csv(tmp.path / "d00.csv", {});
  EXPECT_EQ(ds.runs[0].length(), 100u);
  EXPECT_THROW(ingest_tep_csv(tmp.path / "missing.csv", {}), IoError);
}

TEST(MergeDatasets, UnifiesLabelsByName) {
  TepCsvOptions a;
  a.fault_label = "IDV4";
  a.onset = 10;
  TepCsvOptions b;
  b.fault_label = "IDV11";
  b.onset = 10;
  const std::vector<Dataset> parts = {
      ingest_tep_csv_text(tep_fixture(50, 52, 7), {}),
      ingest_tep_csv_text(tep_fixture(50, 52, 8), a),
      ingest_tep_csv_text(tep_fixture(50, 52, 9), b),
      ingest_tep_csv_text(tep_fixture(50, 52, 10), a)};
  const Dataset m = merge_datasets(parts);
  EXPECT_EQ(m.class_labels, (std::vector<std::string>{"normal", "IDV4", "IDV11"}));
  ASSERT_EQ(m.runs.size(), 4u);
  EXPECT_EQ(m.runs[0].label, 0u);
  EXPECT_EQ(m.runs[1].label, 1u);
  EXPECT_EQ(m.runs[2].label, 2u);
  EXPECT_EQ(m.runs[3].label, 1u);
}

}  // namespace
}  // namespace faultlens
