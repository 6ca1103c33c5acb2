#pragma once

// The experiment pipeline: simulate/ingest -> train -> attribute -> analyze
// -> report. Every stage reads its inputs from and writes its outputs to a
// fixed directory layout under one output root, and records the content
// hash of each file it wrote in <stage>/artifacts.json.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "faultlens/analysis.hpp"
#include "faultlens/attribution.hpp"
#include "faultlens/config.hpp"
#include "faultlens/dataset.hpp"
#include "faultlens/error.hpp"
#include "faultlens/io.hpp"
#include "faultlens/manifest.hpp"
#include "faultlens/procsim.hpp"
#include "faultlens/report.hpp"
#include "faultlens/seed.hpp"
#include "faultlens/seqmodel.hpp"

namespace faultlens::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kStageManifest = "artifacts.json";

enum class LogLevel { kDebug, kInfo, kWarn };

using LogFn = std::function<void(LogLevel, const std::string&)>;

struct Layout {
  fs::path root;

  [[nodiscard]] fs::path dataset() const { return root / "dataset"; }
  [[nodiscard]] fs::path model() const { return root / "model"; }
  [[nodiscard]] fs::path attributions() const { return root / "attributions"; }
  [[nodiscard]] fs::path analysis() const { return root / "analysis"; }
  [[nodiscard]] fs::path report() const { return root / "report"; }
  [[nodiscard]] fs::path manifest() const { return root / "manifest.json"; }
};

struct Context {
  ExperimentConfig config;
  LogFn log;

  [[nodiscard]] Layout layout() const { return {config.output_dir}; }

  void debug(const std::string& m) const {
    if (log) log(LogLevel::kDebug, m);
  }
  void info(const std::string& m) const {
    if (log) log(LogLevel::kInfo, m);
  }
  void warn(const std::string& m) const {
    if (log) log(LogLevel::kWarn, m);
  }

  /// Per-stage seed split from the root seed.
  [[nodiscard]] std::uint64_t stage_seed(std::string_view stage) const {
    return derive_seed(config.seed, {label_hash(stage)});
  }
};

namespace detail {

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline void require(const fs::path& path, std::string_view what,
                    std::string_view command) {
  if (!fs::exists(path)) {
    throw MissingArtifact("no " + std::string(what) + " at '" + path.string() +
                              "'; run `faultlens " + std::string(command) +
                              "` first",
                          std::string(command));
  }
}

inline Dataset require_dataset(const Context& ctx) {
  const fs::path dir = ctx.layout().dataset();
  const std::string producer =
      ctx.config.source == DatasetSource::kCsv ? "ingest" : "simulate";
  require(dir / "manifest.json", "dataset", producer);
  return load_dataset(dir);
}

inline SequenceModel require_model(const Context& ctx) {
  const fs::path path = ctx.layout().model() / "model.json";
  require(path, "trained model", "train");
  return load_model(io::read_file(path));
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed '" + path.string() + "': " + e.what());
  }
}

/// File-system safe form of a class or channel name.
inline std::string safe_name(std::string_view s) {
  std::string out;
  for (char ch : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' ||
                    ch == '-' || ch == '.';
    out.push_back(ok ? ch : '_');
  }
  return out.empty() ? "_" : out;
}

inline std::string padded(std::size_t v, int width) {
  std::string s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) {
    s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  }
  return s;
}

inline Manifest finish_stage(const fs::path& dir, Manifest m) {
  m.save(dir, kStageManifest);
  return m;
}

inline Manifest record_dataset(const fs::path& dir, const Dataset& ds) {
  save_dataset(ds, dir);
  Manifest m("dataset");
  m.add(dir, "manifest.json");
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("run_", 0) == 0 && entry.path().extension() == ".csv") {
      m.add(dir, name);
    }
  }
  return finish_stage(dir, std::move(m));
}

}  // namespace detail

// ------------------------------------------------------------------ data

inline Manifest cmd_simulate(const Context& ctx) {
  const ExperimentConfig& c = ctx.config;
  if (c.source != DatasetSource::kSimulator) {
    throw ConfigError("dataset.source is 'csv'; use `faultlens ingest`");
  }
  sim::ProcessSpec spec = sim::ProcessSpec::standard();
  spec.duration = c.simulator.duration;
  spec.rng_seed = ctx.stage_seed("simulate");
  GenerateOptions opt;
  opt.runs_per_scenario = c.simulator.runs_per_scenario;
  opt.holdout_runs = c.simulator.holdout_runs;
  opt.normal_runs = c.simulator.normal_runs;
  opt.window_len = c.window_len;
  opt.stride = c.stride;
  opt.onset = c.simulator.onset;
  ctx.info("simulating " + std::to_string(c.simulator.scenarios.size()) +
           " fault scenarios x " + std::to_string(opt.runs_per_scenario) +
           " runs + " + std::to_string(opt.normal_runs) + " normal runs");
  const Dataset ds = generate_dataset(spec, c.simulator.scenarios, opt);
  return detail::record_dataset(ctx.layout().dataset(), ds);
}

inline Manifest cmd_ingest(const Context& ctx) {
  const ExperimentConfig& c = ctx.config;
  if (c.source != DatasetSource::kCsv) {
    throw ConfigError("dataset.source is 'simulator'; use `faultlens simulate`");
  }
  std::vector<Dataset> parts;
  for (const CsvFile& f : c.csv.files) {
    TepCsvOptions opt;
    opt.schema = c.csv.schema;
    opt.label_column = c.csv.label_column;
    opt.fault_label = f.fault_label;
    opt.onset = f.onset;
    opt.split = f.split;
    ctx.info("ingesting " + f.path.string());
    parts.push_back(ingest_tep_csv(f.path, opt));
  }
  Dataset ds = merge_datasets(parts);
  ds.window_len = c.window_len;
  ds.stride = c.stride;
  if (make_windows(ds).empty()) throw DataError("ingested data yields no windows");
  return detail::record_dataset(ctx.layout().dataset(), ds);
}

// ----------------------------------------------------------------- train

struct TrainMetrics {
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> recall;                       // per class
  std::vector<std::size_t> support;                 // per class
  std::string evaluated_on;                         // "test" or "train"
};

inline TrainMetrics evaluate(const SequenceModel& model,
                             std::span<const TimeSeriesWindow> train,
                             std::span<const TimeSeriesWindow> test) {
  TrainMetrics m;
  m.train_accuracy = accuracy(model, train);
  std::span<const TimeSeriesWindow> eval = test.empty() ? train : test;
  m.evaluated_on = test.empty() ? "train" : "test";
  if (!test.empty()) m.test_accuracy = accuracy(model, test);
  const std::size_t k = model.num_classes();
  m.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::vector<Tensor> xs;
  for (const auto& w : eval) xs.push_back(w.values);
  const auto pred = model.predict_classes(xs);
  for (std::size_t i = 0; i < eval.size(); ++i) ++m.confusion[*eval[i].label][pred[i]];
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t n = 0;
    for (std::size_t p = 0; p < k; ++p) n += m.confusion[c][p];
    m.support.push_back(n);
    m.recall.push_back(n ? static_cast<double>(m.confusion[c][c]) / n : 0.0);
  }
  return m;
}

inline Manifest cmd_train(const Context& ctx) {
  const Dataset ds = detail::require_dataset(ctx);
  const auto train_w = make_windows(ds, Split::kTrain);
  const auto test_w = make_windows(ds, Split::kTest);
  ModelConfig mc = ctx.config.model;
  mc.num_features = ds.num_channels();
  mc.window_len = ds.window_len;
  mc.num_classes = ds.num_classes();
  mc.rng_seed = ctx.stage_seed("train");
  ctx.info("training on " + std::to_string(train_w.size()) + " windows (" +
           std::to_string(mc.num_classes) + " classes, hidden " +
           std::to_string(mc.hidden_size) + ", " + std::to_string(mc.epochs) +
           " epochs)");
  TrainResult tr = train(train_w, mc, ds.class_labels, ds.standardization,
                         [&](const EpochRecord& r) {
                           ctx.debug("epoch " + std::to_string(r.epoch + 1) +
                                     " loss " + std::to_string(r.mean_loss) +
                                     " acc " + std::to_string(r.train_accuracy));
                         });
  const TrainMetrics m = evaluate(tr.model, train_w, test_w);
  ctx.info("train accuracy " + std::to_string(m.train_accuracy) +
           (m.test_accuracy ? ", test accuracy " + std::to_string(*m.test_accuracy)
                            : std::string()));

  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    per_class.push_back({{"class", ds.class_labels[c]},
                         {"recall", m.recall[c]},
                         {"support", m.support[c]}});
  }
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& r : tr.log.epochs) {
    epochs.push_back({{"epoch", r.epoch + 1},
                      {"loss", r.mean_loss},
                      {"train_accuracy", r.train_accuracy}});
  }
  const nlohmann::json metrics = {
      {"format", "faultlens-metrics"},
      {"version", 1},
      {"train_windows", train_w.size()},
      {"test_windows", test_w.size()},
      {"train_accuracy", m.train_accuracy},
      {"test_accuracy", m.test_accuracy ? nlohmann::json(*m.test_accuracy)
                                        : nlohmann::json()},
      {"evaluated_on", m.evaluated_on},
      {"class_labels", ds.class_labels},
      {"confusion", m.confusion},
      {"per_class", per_class},
      {"epochs", epochs}};

  const fs::path dir = ctx.layout().model();
  Manifest man("train");
  man.write(dir, "model.json", save_model(tr.model));
  man.write(dir, "metrics.json", detail::dump(metrics));
  return detail::finish_stage(dir, std::move(man));
}

// ------------------------------------------------------------- attribute

struct AttributionEntry {
  std::string file;  // relative to the attributions directory
  std::string class_label;
  std::size_t class_index = 0;
  Method method = Method::kIntegratedGradients;
  std::size_t run = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  std::optional<std::size_t> onset;
};

inline nlohmann::json to_json(const AttributionEntry& e) {
  return {{"file", e.file},
          {"class", e.class_label},
          {"class_index", e.class_index},
          {"method", method_name(e.method)},
          {"run", e.run},
          {"start", e.start},
          {"length", e.length},
          {"onset", e.onset ? nlohmann::json(*e.onset) : nlohmann::json()}};
}

inline AttributionEntry entry_from_json(const nlohmann::json& j) {
  AttributionEntry e;
  e.file = j.at("file").get<std::string>();
  e.class_label = j.at("class").get<std::string>();
  e.class_index = j.at("class_index").get<std::size_t>();
  e.method = parse_method(j.at("method").get<std::string>());
  e.run = j.at("run").get<std::size_t>();
  e.start = j.at("start").get<std::size_t>();
  e.length = j.at("length").get<std::size_t>();
  if (!j.at("onset").is_null()) e.onset = j.at("onset").get<std::size_t>();
  return e;
}

/// Attributes one window with the configured methods. Shared by the CLI
/// stage and by callers that attribute windows outside a dataset directory.
inline std::vector<AttributionMap> attribute_window(const SequenceModel& model,
                                                    const Tensor& window,
                                                    const Baseline& baseline,
                                                    std::size_t target,
                                                    const AttributionSettings& a,
                                                    std::uint64_t seed) {
  std::vector<AttributionMap> out;
  if (a.ig) {
    IgOptions opt;
    opt.steps = a.ig_steps;
    opt.max_steps = a.ig_max_steps;
    out.push_back(integrated_gradients(model, window, baseline, target, opt));
  }
  if (a.shap) {
    if (a.shap_method(window.dim(1)) == Method::kShapExact) {
      out.push_back(shapley_exact(model, window, baseline, target));
    } else {
      out.push_back(
          shapley_sampled(model, window, baseline, target, a.permutations, seed));
    }
  }
  return out;
}

inline Manifest cmd_attribute(const Context& ctx) {
  const Dataset ds = detail::require_dataset(ctx);
  const SequenceModel model = detail::require_model(ctx);
  const AttributionSettings& a = ctx.config.attribution;
  if (model.config().window_len != ds.window_len ||
      model.config().num_features != ds.num_channels()) {
    throw DataError("model shape does not match the dataset; rerun `faultlens train`");
  }
  const Baseline baseline = make_baseline(ds, a.baseline, ds.window_len);
  WindowOptions wo{ds.window_len, ds.stride, a.split, a.horizon};
  const auto windows = make_windows(ds, wo);
  if (windows.empty()) {
    throw DataError("no fault windows in the " + std::string(split_name(a.split)) +
                    " split within " + std::to_string(a.horizon) +
                    " samples after onset");
  }
  const std::uint64_t seed = ctx.stage_seed("attribute");
  const fs::path dir = ctx.layout().attributions();
  Manifest man("attribute");
  nlohmann::json entries = nlohmann::json::array();
  std::size_t incomplete = 0;
  std::map<std::size_t, std::size_t> per_class;
  for (const TimeSeriesWindow& w : windows) {
    const std::size_t target = *w.label;
    const std::string label = ds.class_labels[target];
    const std::uint64_t wseed = derive_seed(seed, {*w.run, *w.start});
    for (const AttributionMap& map :
         attribute_window(model, w.values, baseline, target, a, wseed)) {
      AttributionEntry e;
      e.class_label = label;
      e.class_index = target;
      e.method = map.method;
      e.run = *w.run;
      e.start = *w.start;
      e.length = w.length();
      e.onset = w.onset_index;
      e.file = detail::safe_name(label) + "/" +
               std::string(method_name(map.method)) + "/run_" +
               detail::padded(e.run, 3) + "_t" + detail::padded(e.start, 5) +
               ".csv";
      if (map.method == Method::kIntegratedGradients) {
        IgOptions tol;
        if (!completeness_ok(map, tol)) ++incomplete;
      }
      man.write(dir, e.file, attribution_to_csv(map, ds.schema));
      entries.push_back(to_json(e));
    }
    ++per_class[target];
  }
  for (const auto& [cls, n] : per_class) {
    ctx.info("attributed " + std::to_string(n) + " windows of " +
             ds.class_labels[cls]);
  }
  if (incomplete) {
    ctx.warn(std::to_string(incomplete) +
             " IG maps miss the completeness tolerance at max steps; see "
             "completeness_gap in their CSVs");
  }
  const nlohmann::json index = {
      {"format", "faultlens-attributions"},
      {"version", 1},
      {"baseline", baseline_kind_name(baseline.kind)},
      {"split", split_name(a.split)},
      {"horizon", a.horizon},
      {"features", ds.schema},
      {"entries", entries}};
  man.write(dir, "index.json", detail::dump(index));
  return detail::finish_stage(dir, std::move(man));
}

// --------------------------------------------------------------- analyze

struct MethodResult {
  AggregatedScores aggregated;
  NormalizedScores normalized;
  std::vector<std::string> top;
  std::optional<LocalizationResult> localization;
};

struct FaultAnalysis {
  std::string class_label;
  std::size_t class_index = 0;
  std::size_t run = 0;  // first attributed run, used for plots
  std::optional<std::size_t> onset;
  std::map<Method, MethodResult> methods;
  std::optional<AgreementResult> agreement;
  std::vector<ChannelDeviation> deviation;  // standardized units
};

struct AnalysisResult {
  std::vector<std::string> features;
  std::size_t k = kDefaultTopK;
  std::size_t horizon = kDefaultHorizon;
  std::vector<FaultAnalysis> faults;
};

namespace detail {

inline nlohmann::json localization_json(const LocalizationResult& l) {
  return {{"hit", l.hit}, {"fraction", l.fraction}, {"top", l.top},
          {"matched", l.matched}};
}

inline nlohmann::json analysis_to_json(const AnalysisResult& r) {
  nlohmann::json faults = nlohmann::json::array();
  for (const FaultAnalysis& f : r.faults) {
    nlohmann::json methods = nlohmann::json::object();
    for (const auto& [m, res] : f.methods) {
      nlohmann::json j = {{"num_windows", res.aggregated.num_windows},
                          {"mean_scores", res.aggregated.mean_scores},
                          {"normalized", res.normalized.values},
                          {"zero_variance", res.normalized.zero_variance},
                          {"top_k", res.top}};
      if (res.aggregated.window_span) {
        j["window_span"] = {res.aggregated.window_span->first,
                            res.aggregated.window_span->second};
      }
      j["localization"] = res.localization ? localization_json(*res.localization)
                                           : nlohmann::json();
      methods[std::string(method_name(m))] = j;
    }
    nlohmann::json fj = {{"class", f.class_label},
                         {"class_index", f.class_index},
                         {"run", f.run},
                         {"onset", f.onset ? nlohmann::json(*f.onset) : nlohmann::json()},
                         {"methods", methods}};
    if (f.agreement) {
      fj["agreement"] = {{"top_k_overlap", f.agreement->top_k_overlap},
                         {"rank_correlation", f.agreement->rank_correlation}};
    } else {
      fj["agreement"] = nullptr;
    }
    nlohmann::json dev = nlohmann::json::array();
    for (std::size_t c = 0; c < f.deviation.size(); ++c) {
      dev.push_back({{"channel", r.features[c]},
                     {"mean_abs", f.deviation[c].mean_abs},
                     {"rms", f.deviation[c].rms},
                     {"max_abs", f.deviation[c].max_abs}});
    }
    fj["deviation"] = dev;
    faults.push_back(fj);
  }
  return {{"format", "faultlens-analysis"},
          {"version", 1},
          {"k", r.k},
          {"horizon", r.horizon},
          {"features", r.features},
          {"faults", faults}};
}

}  // namespace detail

inline AnalysisResult analysis_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "faultlens-analysis") {
      throw DataError("not a faultlens analysis summary");
    }
    AnalysisResult r;
    r.features = j.at("features").get<std::vector<std::string>>();
    r.k = j.at("k").get<std::size_t>();
    r.horizon = j.at("horizon").get<std::size_t>();
    for (const auto& fj : j.at("faults")) {
      FaultAnalysis f;
      f.class_label = fj.at("class").get<std::string>();
      f.class_index = fj.at("class_index").get<std::size_t>();
      f.run = fj.at("run").get<std::size_t>();
      if (!fj.at("onset").is_null()) f.onset = fj.at("onset").get<std::size_t>();
      for (const auto& [name, mj] : fj.at("methods").items()) {
        MethodResult res;
        res.aggregated.method = parse_method(name);
        res.aggregated.fault_class = f.class_index;
        res.aggregated.mean_scores = mj.at("mean_scores").get<std::vector<double>>();
        res.aggregated.num_windows = mj.at("num_windows").get<std::size_t>();
        res.normalized.values = mj.at("normalized").get<std::vector<double>>();
        res.normalized.zero_variance = mj.at("zero_variance").get<bool>();
        res.top = mj.at("top_k").get<std::vector<std::string>>();
        if (!mj.at("localization").is_null()) {
          const auto& l = mj.at("localization");
          res.localization = LocalizationResult{
              l.at("hit").get<bool>(), l.at("fraction").get<double>(),
              l.at("top").get<std::vector<std::string>>(),
              l.at("matched").get<std::vector<std::string>>()};
        }
        f.methods[res.aggregated.method] = std::move(res);
      }
      if (!fj.at("agreement").is_null()) {
        AgreementResult a;
        a.top_k_overlap = fj.at("agreement").at("top_k_overlap").get<double>();
        a.rank_correlation = fj.at("agreement").at("rank_correlation").get<double>();
        f.agreement = a;
      }
      for (const auto& d : fj.at("deviation")) {
        f.deviation.push_back({d.at("mean_abs").get<double>(), d.at("rms").get<double>(),
                               d.at("max_abs").get<double>()});
      }
      r.faults.push_back(std::move(f));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed analysis summary: " + std::string(e.what()));
  }
}

/// Aggregates, normalizes and compares already computed attributions.
inline AnalysisResult analyze(const std::vector<std::string>& features,
                              const std::vector<AttributionEntry>& entries,
                              const std::vector<AttributionMap>& maps,
                              std::size_t k, std::size_t horizon,
                              const std::optional<SubsystemMap>& subsystems) {
  AnalysisResult r;
  r.features = features;
  r.k = std::min(k, features.size());
  r.horizon = horizon;
  std::map<std::size_t, std::map<Method, std::vector<WindowAttribution>>> groups;
  std::map<std::size_t, std::pair<std::string, const AttributionEntry*>> first;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const AttributionEntry& e = entries[i];
    groups[e.class_index][e.method].push_back({maps[i], e.start, e.length, e.onset});
    if (!first.count(e.class_index)) first[e.class_index] = {e.class_label, &e};
  }
  for (const auto& [cls, by_method] : groups) {
    FaultAnalysis f;
    f.class_index = cls;
    f.class_label = first.at(cls).first;
    f.run = first.at(cls).second->run;
    f.onset = first.at(cls).second->onset;
    for (const auto& [method, ws] : by_method) {
      MethodResult res;
      res.aggregated = aggregate(std::span<const WindowAttribution>(ws), horizon);
      res.normalized = normalize(res.aggregated);
      res.top = top_k_names(res.normalized.values, features, r.k);
      if (subsystems && subsystems->has_fault(f.class_label)) {
        res.localization = localization_score(res.normalized.values, features,
                                              *subsystems, f.class_label, r.k);
      }
      f.methods[method] = std::move(res);
    }
    const MethodResult* ig = nullptr;
    const MethodResult* shap = nullptr;
    for (const auto& [method, res] : f.methods) {
      if (method == Method::kIntegratedGradients) ig = &res;
      else shap = &res;
    }
    if (ig && shap && features.size() >= 2) {
      f.agreement = agreement(ig->normalized.values, shap->normalized.values, r.k);
    }
    r.faults.push_back(std::move(f));
  }
  return r;
}

inline Manifest cmd_analyze(const Context& ctx) {
  const Layout lay = ctx.layout();
  detail::require(lay.attributions() / "index.json", "attribution index", "attribute");
  const nlohmann::json index = detail::read_json(lay.attributions() / "index.json");
  std::vector<AttributionEntry> entries;
  std::vector<AttributionMap> maps;
  std::vector<std::string> features;
  try {
    features = index.at("features").get<std::vector<std::string>>();
    for (const auto& ej : index.at("entries")) entries.push_back(entry_from_json(ej));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed attribution index: " + std::string(e.what()));
  }
  for (const AttributionEntry& e : entries) {
    const fs::path p = lay.attributions() / e.file;
    detail::require(p, "attribution file", "attribute");
    maps.push_back(attribution_from_csv(io::read_file(p)).first);
  }
  std::optional<SubsystemMap> subsystems;
  if (ctx.config.analysis.subsystem_map) {
    subsystems = load_subsystem_map(*ctx.config.analysis.subsystem_map);
    subsystems->validate(features);
  }
  AnalysisResult r = analyze(features, entries, maps, ctx.config.analysis.k,
                             ctx.config.analysis.horizon, subsystems);

  // Deviation of each attributed run from the normal reference, in
  // standardized units, over the analysis horizon.
  if (fs::exists(lay.dataset() / "manifest.json")) {
    const Dataset ds = load_dataset(lay.dataset());
    std::optional<std::size_t> normal;
    try {
      normal = report::default_normal_run(ds);
    } catch (const DataError&) {
      ctx.warn("dataset has no fault-free run; skipping deviation statistics");
    }
    if (normal) {
      const Tensor ref = ds.standardization.apply(ds.runs[*normal].values);
      for (FaultAnalysis& f : r.faults) {
        if (!f.onset || f.run >= ds.runs.size()) continue;
        const Tensor faulty = ds.standardization.apply(ds.runs[f.run].values);
        const std::size_t len = std::min(faulty.dim(0), ref.dim(0));
        const std::size_t to = std::min(len, *f.onset + r.horizon);
        if (*f.onset >= to) continue;
        if (faulty.dim(0) != ref.dim(0)) continue;
        f.deviation = deviation_stats(faulty, ref, *f.onset, to);
      }
    }
  }

  for (const FaultAnalysis& f : r.faults) {
    for (const auto& [m, res] : f.methods) {
      if (res.normalized.zero_variance) {
        ctx.warn(f.class_label + " " + std::string(method_name(m)) +
                 ": attribution scores have zero variance; normalized to zeros");
      }
    }
  }

  Manifest man("analyze");
  man.write(lay.analysis(), "summary.json", detail::dump(detail::analysis_to_json(r)));
  for (const FaultAnalysis& f : r.faults) {
    report::ScoreTable t;
    t.features = r.features;
    t.k = r.k;
    for (const auto& [m, res] : f.methods) {
      t.methods.emplace_back(method_name(m));
      t.values.push_back(res.normalized.values);
    }
    man.write(lay.analysis(), "scores_" + detail::safe_name(f.class_label) + ".csv",
              report::render_score_table(t, 6));
  }
  return detail::finish_stage(lay.analysis(), std::move(man));
}

// ---------------------------------------------------------------- report

inline Manifest cmd_report(const Context& ctx) {
  const Layout lay = ctx.layout();
  detail::require(lay.analysis() / "summary.json", "analysis summary", "analyze");
  const AnalysisResult r = analysis_from_json(detail::read_json(lay.analysis() / "summary.json"));
  if (r.faults.empty()) throw DataError("analysis summary lists no faults");
  const fs::path dir = lay.report();
  Manifest man("report");

  std::vector<Method> methods;
  for (const FaultAnalysis& f : r.faults) {
    for (const auto& [m, res] : f.methods) {
      if (std::find(methods.begin(), methods.end(), m) == methods.end()) {
        methods.push_back(m);
      }
    }
  }
  std::sort(methods.begin(), methods.end());
  report::HeatmapData hm;
  hm.features = r.features;
  for (Method m : methods) hm.methods.emplace_back(method_name(m));
  for (const FaultAnalysis& f : r.faults) {
    hm.faults.push_back(f.class_label);
    std::vector<std::vector<double>> cols;
    for (Method m : methods) {
      auto it = f.methods.find(m);
      cols.push_back(it == f.methods.end()
                         ? std::vector<double>(r.features.size(), 0.0)
                         : it->second.normalized.values);
    }
    hm.scores.push_back(std::move(cols));
  }
  report::HeatmapOptions hopt;
  hopt.threshold = ctx.config.report.threshold;
  man.write(dir, "heatmap.svg", report::render_heatmap(hm, hopt));

  for (const FaultAnalysis& f : r.faults) {
    report::ScoreTable t;
    t.features = r.features;
    t.k = r.k;
    for (const auto& [m, res] : f.methods) {
      t.methods.emplace_back(method_name(m));
      t.values.push_back(res.normalized.values);
    }
    man.write(dir, "tables/" + detail::safe_name(f.class_label) + ".csv",
              report::render_score_table(t, ctx.config.report.decimals));
  }

  if (ctx.config.report.plots) {
    if (!fs::exists(lay.dataset() / "manifest.json")) {
      ctx.warn("no dataset found; skipping variable plots");
    } else {
      const Dataset ds = load_dataset(lay.dataset());
      std::optional<std::size_t> normal;
      try {
        normal = report::default_normal_run(ds);
      } catch (const DataError&) {
        ctx.warn("dataset has no fault-free run; skipping variable plots");
      }
      for (const FaultAnalysis& f : r.faults) {
        if (!normal || f.run >= ds.runs.size()) break;
        std::vector<std::string> channels;
        for (const auto& [m, res] : f.methods) {
          for (const auto& c : res.top) {
            if (std::find(channels.begin(), channels.end(), c) == channels.end()) {
              channels.push_back(c);
            }
          }
        }
        const std::string sub = "plots/" + detail::safe_name(f.class_label);
        report::VariablePlotOptions vopt;
        vopt.normal_run = normal;
        const auto paths =
            report::emit_variable_plots(ds, f.run, channels, f.onset, dir / sub, vopt);
        for (const auto& p : paths) man.add(dir, sub + "/" + p.filename().string());
      }
    }
  }
  return detail::finish_stage(dir, std::move(man));
}

// ----------------------------------------------------------------- repro

struct SummaryRow {
  std::string fault;
  std::optional<double> accuracy;  // per-class recall on the evaluation split
  std::vector<std::string> ig_top;
  std::vector<std::string> shap_top;
  std::optional<double> overlap;
  std::optional<bool> localization_hit;  // both methods hit
};

struct ReproResult {
  Manifest manifest{"repro"};
  std::optional<double> test_accuracy;
  std::vector<SummaryRow> rows;
};

inline std::vector<SummaryRow> summarize(const AnalysisResult& r,
                                         const nlohmann::json& metrics) {
  std::map<std::string, double> recall;
  for (const auto& pc : metrics.at("per_class")) {
    recall[pc.at("class").get<std::string>()] = pc.at("recall").get<double>();
  }
  std::vector<SummaryRow> rows;
  for (const FaultAnalysis& f : r.faults) {
    SummaryRow row;
    row.fault = f.class_label;
    if (recall.count(f.class_label)) row.accuracy = recall.at(f.class_label);
    std::optional<bool> hit;
    for (const auto& [m, res] : f.methods) {
      (m == Method::kIntegratedGradients ? row.ig_top : row.shap_top) = res.top;
      if (res.localization) hit = hit.value_or(true) && res.localization->hit;
    }
    row.localization_hit = hit;
    if (f.agreement) row.overlap = f.agreement->top_k_overlap;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_summary(const std::vector<SummaryRow>& rows) {
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s.empty() ? std::string("-") : s;
  };
  std::vector<std::vector<std::string>> cells = {
      {"fault", "accuracy", "IG top-k", "SHAP top-k", "overlap", "localized"}};
  for (const SummaryRow& r : rows) {
    cells.push_back({r.fault, r.accuracy ? csv::format_fixed(*r.accuracy, 3) : "-",
                     join(r.ig_top), join(r.shap_top),
                     r.overlap ? csv::format_fixed(*r.overlap, 2) : "-",
                     r.localization_hit ? (*r.localization_hit ? "yes" : "no") : "-"});
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) out += std::string(width[c] - row[c].size() + 2, ' ');
    }
    out += "\n";
  }
  return out;
}

/// Runs every stage and writes the combined manifest to <out>/manifest.json.
inline ReproResult cmd_repro(const Context& ctx) {
  ReproResult res;
  const Layout lay = ctx.layout();
  res.manifest.merge(ctx.config.source == DatasetSource::kCsv ? cmd_ingest(ctx)
                                                              : cmd_simulate(ctx),
                     "dataset/");
  res.manifest.merge(cmd_train(ctx), "model/");
  res.manifest.merge(cmd_attribute(ctx), "attributions/");
  res.manifest.merge(cmd_analyze(ctx), "analysis/");
  res.manifest.merge(cmd_report(ctx), "report/");
  res.manifest.save(lay.root);
  const nlohmann::json metrics = detail::read_json(lay.model() / "metrics.json");
  if (!metrics.at("test_accuracy").is_null()) {
    res.test_accuracy = metrics.at("test_accuracy").get<double>();
  }
  res.rows = summarize(analysis_from_json(detail::read_json(lay.analysis() / "summary.json")),
                       metrics);
  return res;
}

}  // namespace faultlens::pipeline
