#include "faultlens/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace faultlens::pipeline {
namespace {

namespace fs = std::filesystem;

Context quick(const std::string& name) {
  Context ctx;
  ctx.config = load_config(fs::path(FAULTLENS_SOURCE_DIR) / "configs" / "quick.json");
  ctx.config.output_dir = fs::temp_directory_path() / ("faultlens_pipeline_" + name);
  fs::remove_all(ctx.config.output_dir);
  return ctx;
}

TEST(Pipeline, MissingPrerequisitesNameTheStage) {
  const Context ctx = quick("missing");
  try {
    cmd_train(ctx);
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_EQ(e.prerequisite(), "simulate");
    EXPECT_EQ(e.kind(), "missing_artifact");
  }
  cmd_simulate(ctx);
  try {
    cmd_attribute(ctx);
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_EQ(e.prerequisite(), "train");
  }
  try {
    cmd_analyze(ctx);
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_EQ(e.prerequisite(), "attribute");
  }
  try {
    cmd_report(ctx);
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_EQ(e.prerequisite(), "analyze");
  }
}

TEST(Pipeline, WrongStageForSource) {
  Context ctx = quick("source");
  EXPECT_THROW(cmd_ingest(ctx), ConfigError);
}

class PipelineRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ctx_ = new Context(quick("full"));
    result_ = new ReproResult(cmd_repro(*ctx_));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete ctx_;
  }
  static Context* ctx_;
  static ReproResult* result_;
};

Context* PipelineRun::ctx_ = nullptr;
ReproResult* PipelineRun::result_ = nullptr;

TEST_F(PipelineRun, LayoutAndManifests) {
  const Layout lay = ctx_->layout();
  for (const fs::path& p :
       {lay.dataset() / "manifest.json", lay.model() / "model.json",
        lay.model() / "metrics.json", lay.attributions() / "index.json",
        lay.analysis() / "summary.json", lay.report() / "heatmap.svg",
        lay.manifest()}) {
    EXPECT_TRUE(fs::exists(p)) << p;
  }
  for (const fs::path& d : {lay.dataset(), lay.model(), lay.attributions(),
                            lay.analysis(), lay.report()}) {
    const Manifest m = Manifest::load(d / kStageManifest);
    EXPECT_FALSE(m.entries().empty()) << d;
    EXPECT_TRUE(m.verify(d).empty()) << d;
  }
  const Manifest all = Manifest::load(lay.manifest());
  EXPECT_EQ(all, result_->manifest);
  EXPECT_TRUE(all.verify(lay.root).empty());
  EXPECT_TRUE(all.entries().count("report/heatmap.svg"));
  EXPECT_TRUE(all.entries().count("model/model.json"));
}

TEST_F(PipelineRun, AttributionIndexMatchesFiles) {
  const Layout lay = ctx_->layout();
  const auto index = nlohmann::json::parse(io::read_file(lay.attributions() / "index.json"));
  ASSERT_FALSE(index.at("entries").empty());
  std::set<std::string> methods;
  for (const auto& ej : index.at("entries")) {
    const AttributionEntry e = entry_from_json(ej);
    methods.insert(std::string(method_name(e.method)));
    ASSERT_TRUE(e.onset.has_value());
    EXPECT_GE(e.start, *e.onset);
    EXPECT_LE(e.start + e.length, *e.onset + ctx_->config.attribution.horizon);
    EXPECT_NE(e.class_index, kNormalClass);
    const auto [map, features] =
        attribution_from_csv(io::read_file(lay.attributions() / e.file));
    EXPECT_EQ(map.method, e.method);
    EXPECT_EQ(map.target_class, e.class_index);
    EXPECT_EQ(features.size(), sim::kNumChannels);
  }
  EXPECT_EQ(methods, (std::set<std::string>{"IG", "SHAP_sampled"}));
}

TEST_F(PipelineRun, SummaryRowsPerFault) {
  ASSERT_EQ(result_->rows.size(), 2u);
  EXPECT_EQ(result_->rows[0].fault, "IDV4-analogue");
  EXPECT_EQ(result_->rows[1].fault, "IDV6-analogue");
  for (const SummaryRow& r : result_->rows) {
    EXPECT_EQ(r.ig_top.size(), 3u);
    EXPECT_EQ(r.shap_top.size(), 3u);
    ASSERT_TRUE(r.overlap.has_value());
    EXPECT_GE(*r.overlap, 0.0);
    EXPECT_LE(*r.overlap, 1.0);
    ASSERT_TRUE(r.accuracy.has_value());
    EXPECT_TRUE(r.localization_hit.has_value());
  }
  const std::string table = format_summary(result_->rows);
  EXPECT_NE(table.find("IDV4-analogue"), std::string::npos);
  EXPECT_NE(table.find("SHAP top-k"), std::string::npos);
}

TEST_F(PipelineRun, SummaryRoundTripsAndMatchesTopK) {
  const Layout lay = ctx_->layout();
  const AnalysisResult r = analysis_from_json(
      nlohmann::json::parse(io::read_file(lay.analysis() / "summary.json")));
  for (const FaultAnalysis& f : r.faults) {
    for (const auto& [m, res] : f.methods) {
      EXPECT_EQ(res.top, top_k_names(res.normalized.values, r.features, r.k));
      EXPECT_EQ(res.normalized.values.size(), r.features.size());
    }
    EXPECT_EQ(f.deviation.size(), r.features.size());
  }
  const std::string csv = io::read_file(lay.report() / "tables" / "IDV4-analogue.csv");
  const report::ScoreTable parsed = report::parse_score_table(csv);
  EXPECT_EQ(parsed.features, r.features);
}

TEST_F(PipelineRun, PlotsForTopChannels) {
  const fs::path plots = ctx_->layout().report() / "plots" / "IDV4-analogue";
  ASSERT_TRUE(fs::exists(plots));
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(plots)) {
    EXPECT_EQ(e.path().extension(), ".svg");
    ++n;
  }
  EXPECT_GE(n, 3u);
  EXPECT_LE(n, 6u);
}

TEST_F(PipelineRun, RerunningAStageIsByteIdentical) {
  const Layout lay = ctx_->layout();
  const std::string before = io::read_file(lay.attributions() / kStageManifest);
  const Manifest again = cmd_attribute(*ctx_);
  EXPECT_EQ(again.dump(), before);
  const std::string model_before = io::read_file(lay.model() / "model.json");
  cmd_train(*ctx_);
  EXPECT_EQ(io::read_file(lay.model() / "model.json"), model_before);
}

TEST_F(PipelineRun, DifferentSeedChangesArtifacts) {
  Context other = quick("seed");
  other.config.seed += 1;
  const Manifest m = cmd_simulate(other);
  const Manifest base = Manifest::load(ctx_->layout().dataset() / kStageManifest);
  EXPECT_NE(m.entries().at("run_000.csv").sha256, base.entries().at("run_000.csv").sha256);
}

TEST(Pipeline, AnalyzeGroupsByClassAndMethod) {
  const std::vector<std::string> features{"a", "b", "c", "d"};
  std::vector<AttributionEntry> entries;
  std::vector<AttributionMap> maps;
  for (Method m : {Method::kIntegratedGradients, Method::kShapExact}) {
    for (std::size_t s : {10u, 15u}) {
      AttributionEntry e;
      e.class_label = "F1";
      e.class_index = 1;
      e.method = m;
      e.start = s;
      e.length = 5;
      e.onset = 10;
      entries.push_back(e);
      AttributionMap map;
      map.method = m;
      map.target_class = 1;
      map.scores = {4.0, s == 10u ? 2.0 : 0.0, 1.0, 0.0};
      maps.push_back(map);
    }
  }
  SubsystemMap sm;
  sm.subsystems["unit"] = {"a", "b"};
  sm.faults["F1"] = "unit";
  const AnalysisResult r = analyze(features, entries, maps, 2, 20, sm);
  ASSERT_EQ(r.faults.size(), 1u);
  const FaultAnalysis& f = r.faults[0];
  ASSERT_EQ(f.methods.size(), 2u);
  const MethodResult& ig = f.methods.at(Method::kIntegratedGradients);
  EXPECT_EQ(ig.aggregated.num_windows, 2u);
  EXPECT_EQ(ig.aggregated.mean_scores, (std::vector<double>{4.0, 1.0, 1.0, 0.0}));
  EXPECT_EQ(ig.top, (std::vector<std::string>{"a", "b"}));
  ASSERT_TRUE(ig.localization);
  EXPECT_TRUE(ig.localization->hit);
  ASSERT_TRUE(f.agreement);
  EXPECT_DOUBLE_EQ(f.agreement->top_k_overlap, 1.0);
  EXPECT_DOUBLE_EQ(f.agreement->rank_correlation, 1.0);

  // Windows past the horizon are excluded.
  const AnalysisResult narrow = analyze(features, entries, maps, 2, 5, std::nullopt);
  EXPECT_EQ(narrow.faults[0].methods.at(Method::kShapExact).aggregated.num_windows, 1u);
  EXPECT_FALSE(narrow.faults[0].methods.at(Method::kShapExact).localization);
}

}  // namespace
}  // namespace faultlens::pipeline
