#pragma once

// Declarative experiment configuration. One JSON document describes the
// dataset source, model, attribution, analysis and report settings. Unknown
// keys are rejected at every level.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "faultlens/analysis.hpp"
#include "faultlens/attribution.hpp"
#include "faultlens/dataset.hpp"
#include "faultlens/error.hpp"
#include "faultlens/io.hpp"
#include "faultlens/procsim.hpp"
#include "faultlens/seqmodel.hpp"
#include "faultlens/strict_json.hpp"

namespace faultlens {

enum class DatasetSource { kSimulator, kCsv };

struct SimulatorSettings {
  std::vector<sim::FaultScenario> scenarios;
  std::size_t runs_per_scenario = 5;
  std::size_t holdout_runs = 1;
  std::size_t normal_runs = 2;
  std::size_t duration = 400;
  std::size_t onset = 100;
};

struct CsvFile {
  std::filesystem::path path;
  std::optional<std::string> fault_label;
  std::optional<std::size_t> onset;
  Split split = Split::kTrain;
};

struct CsvSettings {
  std::vector<CsvFile> files;
  TepSchema schema = TepSchema::k52;
  bool label_column = false;
};

enum class ShapMode { kAuto, kExact, kSampled };

inline std::string_view shap_mode_name(ShapMode m) {
  switch (m) {
    case ShapMode::kAuto: return "auto";
    case ShapMode::kExact: return "exact";
    case ShapMode::kSampled: return "sampled";
  }
  return "?";
}

/// SHAP "auto" enumerates coalitions exactly up to this many channels.
inline constexpr std::size_t kAutoExactShapleyFeatures = 12;

struct AttributionSettings {
  bool ig = true;
  bool shap = true;
  BaselineKind baseline = BaselineKind::kNormalMean;
  std::size_t ig_steps = 64;
  std::size_t ig_max_steps = 256;
  ShapMode shap_mode = ShapMode::kAuto;
  std::size_t permutations = 500;
  Split split = Split::kTest;
  std::size_t horizon = kDefaultHorizon;

  [[nodiscard]] Method shap_method(std::size_t features) const {
    switch (shap_mode) {
      case ShapMode::kExact: return Method::kShapExact;
      case ShapMode::kSampled: return Method::kShapSampled;
      case ShapMode::kAuto: break;
    }
    return features <= kAutoExactShapleyFeatures ? Method::kShapExact
                                                 : Method::kShapSampled;
  }
};

struct AnalysisSettings {
  std::size_t horizon = kDefaultHorizon;
  std::size_t k = kDefaultTopK;
  std::optional<std::filesystem::path> subsystem_map;
};

struct ReportSettings {
  double threshold = 0.5;
  int decimals = 2;
  bool plots = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "faultlens_out";
  DatasetSource source = DatasetSource::kSimulator;
  SimulatorSettings simulator;
  CsvSettings csv;
  std::size_t window_len = 20;
  std::size_t stride = 5;
  ModelConfig model;
  AttributionSettings attribution;
  AnalysisSettings analysis;
  ReportSettings report;

  void validate() const {
    if (window_len < 2) throw ConfigError("dataset.window_len must be >= 2");
    if (stride < 1) throw ConfigError("dataset.stride must be >= 1");
    if (source == DatasetSource::kSimulator) {
      if (simulator.scenarios.empty()) {
        throw ConfigError("dataset.simulator.scenarios must not be empty");
      }
      if (simulator.onset + window_len > simulator.duration) {
        throw ConfigError("dataset.simulator: onset + window_len exceeds duration");
      }
      for (sim::FaultScenario s : simulator.scenarios) {
        s.onset_index = simulator.onset;
        try {
          s.validate(simulator.duration);
        } catch (const InvalidArgument& e) {
          throw ConfigError(std::string("dataset.simulator: ") + e.what());
        }
      }
    } else {
      if (csv.files.empty()) throw ConfigError("dataset.csv.files must not be empty");
      for (const auto& f : csv.files) {
        if (!std::filesystem::exists(f.path)) {
          throw ConfigError("dataset.csv: file '" + f.path.string() +
                            "' does not exist");
        }
      }
    }
    if (!attribution.ig && !attribution.shap) {
      throw ConfigError("attribution.methods must name at least one method");
    }
    if (attribution.ig_steps < 1 || attribution.ig_max_steps < attribution.ig_steps) {
      throw ConfigError("attribution: need 1 <= ig_steps <= ig_max_steps");
    }
    if (attribution.permutations < 1) {
      throw ConfigError("attribution.permutations must be >= 1");
    }
    if (analysis.k < 1) throw ConfigError("analysis.k must be >= 1");
    if (analysis.horizon < window_len) {
      throw ConfigError("analysis.horizon must be >= dataset.window_len");
    }
    if (analysis.subsystem_map && !std::filesystem::exists(*analysis.subsystem_map)) {
      throw ConfigError("analysis.subsystem_map '" +
                        analysis.subsystem_map->string() + "' does not exist");
    }
    if (report.decimals < 0 || report.decimals > 12) {
      throw ConfigError("report.decimals must be in [0, 12]");
    }
  }
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base,
                                     const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw ConfigError("split must be 'train' or 'test', got '" + s + "'");
}

inline sim::FaultScenario parse_scenario(const nlohmann::json& j) {
  if (j.is_string()) return sim::builtin_scenario(j.get<std::string>());
  json::reject_unknown_keys(j, {"id", "archetype", "target", "magnitude"},
                            "dataset.simulator.scenarios[]");
  sim::FaultScenario s;
  s.id = j.at("id").get<std::string>();
  s.archetype = sim::parse_archetype(j.at("archetype").get<std::string>());
  s.target = sim::parse_target(j.at("target").get<std::string>());
  s.magnitude = json::get_or(j, "magnitude", 0.0);
  return s;
}

inline void read_methods(const nlohmann::json& j, AttributionSettings& a) {
  a.ig = a.shap = false;
  for (const auto& m : j) {
    const auto name = m.get<std::string>();
    if (name == "ig" || name == "IG") {
      a.ig = true;
    } else if (name == "shap" || name == "SHAP") {
      a.shap = true;
    } else {
      throw ConfigError("attribution.methods: unknown method '" + name +
                        "' (expected ig, shap)");
    }
  }
}

}  // namespace detail

/// Parses a config document. Relative input paths resolve against
/// `base_dir`; output_dir stays relative to the working directory.
inline ExperimentConfig parse_config(const nlohmann::json& j,
                                     const std::filesystem::path& base_dir = {}) {
  ExperimentConfig c;
  json::reject_unknown_keys(
      j, {"description", "seed", "output_dir", "dataset", "model", "attribution",
          "analysis", "report"},
      "config");
  try {
    if (!j.contains("seed")) {
      throw ConfigError("config: 'seed' is required (no implicit seeds)");
    }
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output_dir")) {
      c.output_dir = j.at("output_dir").get<std::string>();
    }

    const auto& d = j.at("dataset");
    json::reject_unknown_keys(d, {"source", "window_len", "stride", "simulator", "csv"},
                              "dataset");
    c.window_len = json::get_or<std::size_t>(d, "window_len", c.window_len);
    c.stride = json::get_or<std::size_t>(d, "stride", c.stride);
    const auto source = d.at("source").get<std::string>();
    if (source == "simulator") {
      c.source = DatasetSource::kSimulator;
      const auto& s = d.at("simulator");
      json::reject_unknown_keys(s, {"scenarios", "runs_per_scenario", "holdout_runs",
                                    "normal_runs", "duration", "onset"},
                                "dataset.simulator");
      for (const auto& sc : s.at("scenarios")) {
        c.simulator.scenarios.push_back(detail::parse_scenario(sc));
      }
      auto& sm = c.simulator;
      sm.runs_per_scenario = json::get_or(s, "runs_per_scenario", sm.runs_per_scenario);
      sm.holdout_runs = json::get_or(s, "holdout_runs", sm.holdout_runs);
      sm.normal_runs = json::get_or(s, "normal_runs", sm.normal_runs);
      sm.duration = json::get_or(s, "duration", sm.duration);
      sm.onset = json::get_or(s, "onset", sm.onset);
    } else if (source == "csv") {
      c.source = DatasetSource::kCsv;
      const auto& s = d.at("csv");
      json::reject_unknown_keys(s, {"files", "tep_columns", "label_column"},
                                "dataset.csv");
      const int cols = json::get_or(s, "tep_columns", 52);
      if (cols != 52 && cols != 53) {
        throw ConfigError("dataset.csv.tep_columns must be 52 or 53");
      }
      c.csv.schema = cols == 52 ? TepSchema::k52 : TepSchema::k53;
      c.csv.label_column = json::get_or(s, "label_column", false);
      for (const auto& f : s.at("files")) {
        json::reject_unknown_keys(f, {"path", "fault_label", "onset", "split"},
                                  "dataset.csv.files[]");
        CsvFile file;
        file.path = detail::resolve(base_dir, f.at("path").get<std::string>());
        if (f.contains("fault_label")) file.fault_label = f.at("fault_label");
        if (f.contains("onset")) file.onset = f.at("onset").get<std::size_t>();
        file.split = detail::parse_split(json::get_or<std::string>(f, "split", "train"));
        c.csv.files.push_back(std::move(file));
      }
    } else {
      throw ConfigError("dataset.source must be 'simulator' or 'csv', got '" +
                        source + "'");
    }

    if (j.contains("model")) {
      const auto& m = j.at("model");
      json::reject_unknown_keys(m, {"hidden_size", "epochs", "learning_rate",
                                    "batch_size", "grad_clip"},
                                "model");
      c.model.hidden_size = json::get_or(m, "hidden_size", c.model.hidden_size);
      c.model.epochs = json::get_or(m, "epochs", c.model.epochs);
      c.model.learning_rate = json::get_or(m, "learning_rate", c.model.learning_rate);
      c.model.batch_size = json::get_or(m, "batch_size", c.model.batch_size);
      c.model.grad_clip = json::get_or(m, "grad_clip", c.model.grad_clip);
    }

    if (j.contains("attribution")) {
      const auto& a = j.at("attribution");
      json::reject_unknown_keys(a, {"methods", "baseline", "ig_steps", "ig_max_steps",
                                    "shap", "permutations", "split"},
                                "attribution");
      auto& at = c.attribution;
      if (a.contains("methods")) detail::read_methods(a.at("methods"), at);
      if (a.contains("baseline")) {
        const auto b = a.at("baseline").get<std::string>();
        at.baseline = parse_baseline_kind(b);
        if (at.baseline == BaselineKind::kCustom) {
          throw ConfigError("attribution.baseline: custom baselines are only "
                            "available through the library API");
        }
      }
      at.ig_steps = json::get_or(a, "ig_steps", at.ig_steps);
      at.ig_max_steps = json::get_or(a, "ig_max_steps", at.ig_max_steps);
      at.permutations = json::get_or(a, "permutations", at.permutations);
      if (a.contains("shap")) {
        const auto mode = a.at("shap").get<std::string>();
        if (mode == "auto") {
          at.shap_mode = ShapMode::kAuto;
        } else if (mode == "exact") {
          at.shap_mode = ShapMode::kExact;
        } else if (mode == "sampled") {
          at.shap_mode = ShapMode::kSampled;
        } else {
          throw ConfigError("attribution.shap must be auto, exact or sampled");
        }
      }
      if (a.contains("split")) at.split = detail::parse_split(a.at("split"));
    }

    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      json::reject_unknown_keys(a, {"horizon", "k", "normalization", "subsystem_map"},
                                "analysis");
      c.analysis.horizon = json::get_or(a, "horizon", c.analysis.horizon);
      c.analysis.k = json::get_or(a, "k", c.analysis.k);
      if (json::get_or<std::string>(a, "normalization", "zscore") != "zscore") {
        throw ConfigError("analysis.normalization: only 'zscore' is supported");
      }
      if (a.contains("subsystem_map") && !a.at("subsystem_map").is_null()) {
        c.analysis.subsystem_map =
            detail::resolve(base_dir, a.at("subsystem_map").get<std::string>());
      }
    }
    c.attribution.horizon = c.analysis.horizon;

    if (j.contains("report")) {
      const auto& r = j.at("report");
      json::reject_unknown_keys(r, {"threshold", "decimals", "plots"}, "report");
      c.report.threshold = json::get_or(r, "threshold", c.report.threshold);
      c.report.decimals = json::get_or(r, "decimals", c.report.decimals);
      c.report.plots = json::get_or(r, "plots", c.report.plots);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file '" + path.string() + "' does not exist");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return parse_config(j, path.parent_path());
}

}  // namespace faultlens
