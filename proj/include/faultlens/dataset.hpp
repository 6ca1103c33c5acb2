#pragma once

// Labeled run collections, windowing, persistence, and TEP CSV ingestion.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "faultlens/csv.hpp"
#include "faultlens/error.hpp"
#include "faultlens/io.hpp"
#include "faultlens/procsim.hpp"
#include "faultlens/seed.hpp"
#include "faultlens/tensor.hpp"
#include "faultlens/window.hpp"

namespace faultlens {

enum class Split { kTrain, kTest };

inline std::string_view split_name(Split s) {
  return s == Split::kTrain ? "train" : "test";
}

struct Run {
  Tensor values;  // raw units, [T x M]
  std::size_t label = kNormalClass;
  std::optional<std::size_t> onset;
  std::string scenario = "normal";
  std::uint64_t seed = 0;        // sensor-noise seed (simulated runs)
  std::uint64_t fault_seed = 0;  // fault-noise seed (simulated runs)
  Split split = Split::kTrain;

  [[nodiscard]] std::size_t length() const { return values.dim(0); }
};

struct Dataset {
  std::vector<std::string> schema;
  std::vector<std::string> class_labels{"normal"};
  std::vector<Run> runs;
  Standardization standardization;
  std::size_t window_len = 0;
  std::size_t stride = 0;

  [[nodiscard]] std::size_t num_channels() const { return schema.size(); }
  [[nodiscard]] std::size_t num_classes() const { return class_labels.size(); }

  [[nodiscard]] std::optional<std::size_t> channel(std::string_view n) const {
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (schema[i] == n) return i;
    }
    return std::nullopt;
  }

  void validate() const {
    if (schema.empty()) throw DataError("dataset schema is empty");
    if (class_labels.empty() || class_labels.front() != "normal") {
      throw DataError("class 0 must be 'normal'");
    }
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const Run& run = runs[r];
      if (run.values.rank() != 2 || run.values.cols() != schema.size()) {
        throw DataError("run " + std::to_string(r) + " has " +
                        std::to_string(run.values.cols()) +
                        " channels, schema has " +
                        std::to_string(schema.size()));
      }
      if (run.label >= class_labels.size()) {
        throw DataError("run " + std::to_string(r) + " references class " +
                        std::to_string(run.label) + " which is not declared");
      }
      if (run.onset && *run.onset >= run.length()) {
        throw DataError("run " + std::to_string(r) + " onset beyond its end");
      }
    }
    if (standardization.size() != schema.size()) {
      throw DataError("standardization width does not match schema");
    }
  }
};

/// Label of the window [start, start + len) of a run: normal when it ends at
/// or before the onset, the fault class when it starts at or after it, and
/// nullopt (discarded) when it straddles the onset.
inline std::optional<std::size_t> window_label(const Run& run,
                                               std::size_t start,
                                               std::size_t len) {
  if (run.label == kNormalClass || !run.onset) return run.label;
  if (start + len <= *run.onset) return kNormalClass;
  if (start >= *run.onset) return run.label;
  return std::nullopt;
}

struct WindowOptions {
  std::size_t window_len = 0;
  std::size_t stride = 0;
  std::optional<Split> split;
  /// Keep only fault-labeled windows starting in [onset, onset + horizon)
  /// and ending by onset + horizon.
  std::optional<std::size_t> horizon;
};

inline std::vector<TimeSeriesWindow> make_windows(const Dataset& ds,
                                                  const WindowOptions& opt) {
  if (opt.window_len < 2) throw InvalidArgument("window_len must be >= 2");
  if (opt.stride < 1) throw InvalidArgument("stride must be >= 1");
  std::vector<TimeSeriesWindow> out;
  for (std::size_t r = 0; r < ds.runs.size(); ++r) {
    const Run& run = ds.runs[r];
    if (opt.split && run.split != *opt.split) continue;
    if (opt.window_len > run.length()) {
      throw InvalidArgument("window_len " + std::to_string(opt.window_len) +
                            " exceeds run length " +
                            std::to_string(run.length()));
    }
    if (opt.stride > run.length()) {
      throw InvalidArgument("stride " + std::to_string(opt.stride) +
                            " exceeds run length " +
                            std::to_string(run.length()));
    }
    const Tensor z = ds.standardization.apply(run.values);
    for (std::size_t s = 0; s + opt.window_len <= run.length();
         s += opt.stride) {
      const auto label = window_label(run, s, opt.window_len);
      if (!label) continue;
      if (opt.horizon) {
        if (*label == kNormalClass || !run.onset) continue;
        if (s + opt.window_len > *run.onset + *opt.horizon) continue;
      }
      std::vector<double> vals(
          z.values().begin() + static_cast<std::ptrdiff_t>(s * z.cols()),
          z.values().begin() +
              static_cast<std::ptrdiff_t>((s + opt.window_len) * z.cols()));
      out.push_back({Tensor({opt.window_len, z.cols()}, std::move(vals)),
                     label, run.onset, r, s});
    }
  }
  return out;
}

inline std::vector<TimeSeriesWindow> make_windows(const Dataset& ds,
                                                  std::optional<Split> split =
                                                      std::nullopt) {
  return make_windows(ds, WindowOptions{ds.window_len, ds.stride, split, {}});
}

/// Z-score statistics over normal-operation samples (pre-onset rows and
/// fault-free runs) of the training split. Falls back to every training row
/// when no normal sample exists.
inline Standardization fit_standardization(const Dataset& ds) {
  std::vector<std::span<const double>> rows;
  auto collect = [&](bool normal_only) {
    for (const Run& run : ds.runs) {
      if (run.split != Split::kTrain) continue;
      std::size_t end = run.length();
      if (normal_only && run.label != kNormalClass) {
        end = run.onset.value_or(0);
      }
      for (std::size_t k = 0; k < end; ++k) rows.push_back(run.values.row(k));
    }
  };
  collect(true);
  if (rows.empty()) collect(false);
  if (rows.empty()) throw DataError("dataset has no training rows");
  return Standardization::fit(rows, ds.num_channels());
}

// ---------------------------------------------------------------------------
// Simulated datasets

struct GenerateOptions {
  std::size_t runs_per_scenario = 4;
  std::size_t holdout_runs = 1;  // per scenario, marked Split::kTest
  std::size_t window_len = 20;
  std::size_t stride = 5;
  std::size_t onset = 100;
  std::size_t normal_runs = 0;  // extra fault-free runs, label normal
};

/// Simulates runs_per_scenario runs of every scenario. Class i + 1 is
/// scenarios[i]; pre-onset windows are normal. Seeds derive from
/// spec.rng_seed, the scenario index and the run index. Fault-free runs use
/// scenario index scenarios.size().
inline Dataset generate_dataset(const sim::ProcessSpec& spec,
                                std::span<const sim::FaultScenario> scenarios,
                                const GenerateOptions& opt) {
  if (scenarios.empty()) throw InvalidArgument("no scenarios given");
  if (opt.runs_per_scenario < 1) {
    throw InvalidArgument("runs_per_scenario must be >= 1");
  }
  if (opt.holdout_runs >= opt.runs_per_scenario && opt.holdout_runs > 0) {
    throw InvalidArgument("holdout_runs must leave at least one training run");
  }
  if (opt.window_len > spec.duration) {
    throw InvalidArgument("window_len exceeds run duration");
  }
  if (opt.stride < 1 || opt.stride > spec.duration) {
    throw InvalidArgument("stride " + std::to_string(opt.stride) +
                          " must be in [1, run duration " +
                          std::to_string(spec.duration) + "]");
  }
  Dataset ds;
  ds.schema = sim::schema();
  ds.window_len = opt.window_len;
  ds.stride = opt.stride;
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    ds.class_labels.push_back(scenarios[s].id);
    for (std::size_t r = 0; r < opt.runs_per_scenario; ++r) {
      sim::ProcessSpec run_spec = spec;
      run_spec.rng_seed = derive_seed(spec.rng_seed, {s, r, 0});
      sim::FaultScenario sc = scenarios[s];
      sc.onset_index = opt.onset;
      sc.rng_seed = derive_seed(spec.rng_seed, {s, r, 1});
      sim::SimulationRun sr = sim::simulate(run_spec, sc);
      Run run;
      run.values = std::move(sr.measured);
      run.label = s + 1;
      run.onset = opt.onset;
      run.scenario = sc.id;
      run.seed = run_spec.rng_seed;
      run.fault_seed = sc.rng_seed;
      run.split = r + opt.holdout_runs >= opt.runs_per_scenario ? Split::kTest
                                                                : Split::kTrain;
      ds.runs.push_back(std::move(run));
    }
  }
  const std::size_t ns = scenarios.size();
  for (std::size_t r = 0; r < opt.normal_runs; ++r) {
    sim::ProcessSpec run_spec = spec;
    run_spec.rng_seed = derive_seed(spec.rng_seed, {ns, r, 0});
    Run run;
    run.values = sim::simulate(run_spec).measured;
    run.seed = run_spec.rng_seed;
    run.fault_seed = 0;
    run.split = opt.normal_runs > opt.holdout_runs &&
                        r + opt.holdout_runs >= opt.normal_runs
                    ? Split::kTest
                    : Split::kTrain;
    ds.runs.push_back(std::move(run));
  }
  ds.standardization = fit_standardization(ds);
  if (make_windows(ds).empty()) {
    throw DataError("dataset yields no usable windows");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Persistence: <dir>/manifest.json plus one CSV per run.

inline constexpr int kDatasetFormatVersion = 1;

inline std::string run_to_csv(const Dataset& ds, const Run& run) {
  std::string out = csv::join(ds.schema) + "\n";
  for (std::size_t k = 0; k < run.length(); ++k) {
    auto row = run.values.row(k);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out.push_back(',');
      out += csv::format_exact(row[c]);
    }
    out.push_back('\n');
  }
  return out;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t r = 0; r < ds.runs.size(); ++r) {
    const Run& run = ds.runs[r];
    char name[32];
    std::snprintf(name, sizeof name, "run_%03zu.csv", r);
    io::write_file_atomic(dir / name, run_to_csv(ds, run));
    nlohmann::json e = {{"file", name},
                        {"label", run.label},
                        {"scenario", run.scenario},
                        {"seed", run.seed},
                        {"fault_seed", run.fault_seed},
                        {"split", split_name(run.split)},
                        {"rows", run.length()}};
    e["onset"] = run.onset ? nlohmann::json(*run.onset) : nlohmann::json();
    runs.push_back(std::move(e));
  }
  nlohmann::json m = {
      {"format", "faultlens-dataset"},
      {"version", kDatasetFormatVersion},
      {"schema", ds.schema},
      {"class_labels", ds.class_labels},
      {"window_len", ds.window_len},
      {"stride", ds.stride},
      {"standardization",
       {{"mean", ds.standardization.mean},
        {"stddev", ds.standardization.stddev}}},
      {"runs", std::move(runs)}};
  io::write_file_atomic(dir / "manifest.json", m.dump(1) + "\n");
}

namespace detail {

/// Numeric matrix from CSV text; `skip_header` drops the first record.
inline Tensor parse_numeric_csv(const std::string& text, std::size_t expect_cols,
                                bool skip_header, const std::string& where) {
  std::vector<double> data;
  std::size_t rows = 0, line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (csv::trim(line).empty() || (skip_header && line_no == 1)) continue;
    const auto fields = csv::split_record(line);
    if (fields.size() != expect_cols) {
      throw ParseError(where + ": line " + std::to_string(line_no) + " has " +
                           std::to_string(fields.size()) + " columns, expected " +
                           std::to_string(expect_cols),
                       line_no, 0);
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto v = csv::parse_double(fields[c]);
      if (!v) {
        throw ParseError(where + ": non-numeric cell '" + fields[c] +
                             "' at row " + std::to_string(line_no) +
                             ", column " + std::to_string(c + 1),
                         line_no, c + 1);
      }
      data.push_back(*v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(where + ": no data rows");
  return Tensor({rows, expect_cols}, std::move(data));
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw IoError("no dataset manifest at '" + manifest_path.string() + "'");
  }
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_file(manifest_path));
    if (m.at("format") != "faultlens-dataset") {
      throw DataError("not a faultlens dataset manifest");
    }
    if (m.at("version").get<int>() != kDatasetFormatVersion) {
      throw DataError("unsupported dataset format version");
    }
    Dataset ds;
    ds.schema = m.at("schema").get<std::vector<std::string>>();
    ds.class_labels = m.at("class_labels").get<std::vector<std::string>>();
    ds.window_len = m.at("window_len").get<std::size_t>();
    ds.stride = m.at("stride").get<std::size_t>();
    ds.standardization = {m.at("standardization").at("mean"),
                          m.at("standardization").at("stddev")};
    for (const auto& e : m.at("runs")) {
      Run run;
      const auto file = e.at("file").get<std::string>();
      run.values = detail::parse_numeric_csv(io::read_file(dir / file),
                                             ds.schema.size(), true, file);
      run.label = e.at("label").get<std::size_t>();
      if (!e.at("onset").is_null()) run.onset = e.at("onset").get<std::size_t>();
      run.scenario = e.at("scenario").get<std::string>();
      run.seed = e.at("seed").get<std::uint64_t>();
      run.fault_seed = e.at("fault_seed").get<std::uint64_t>();
      run.split = e.at("split") == "test" ? Split::kTest : Split::kTrain;
      ds.runs.push_back(std::move(run));
    }
    ds.validate();
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset manifest: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------
// Tennessee Eastman CSV ingestion

enum class TepSchema { k52, k53 };

/// Canonical channel names: xmeas_1..41 then xmv_1..11 (and xmv_12).
inline std::vector<std::string> tep_schema(TepSchema s) {
  std::vector<std::string> names;
  for (int i = 1; i <= 41; ++i) names.push_back("xmeas_" + std::to_string(i));
  const int xmv = s == TepSchema::k53 ? 12 : 11;
  for (int i = 1; i <= xmv; ++i) names.push_back("xmv_" + std::to_string(i));
  return names;
}

struct TepCsvOptions {
  TepSchema schema = TepSchema::k52;
  /// A trailing integer column holds the per-row fault number (0 = normal).
  bool label_column = false;
  /// Fault class name for files without a label column.
  std::optional<std::string> fault_label;
  /// Row at which the fault starts, for files without a label column.
  std::optional<std::size_t> onset;
  Split split = Split::kTrain;
};

inline Dataset ingest_tep_csv_text(const std::string& text,
                                   const TepCsvOptions& opt,
                                   const std::string& where = "csv") {
  const auto names = tep_schema(opt.schema);
  const std::size_t width = names.size() + (opt.label_column ? 1 : 0);

  // Header: a first record without any numeric cell.
  bool header = false;
  {
    const std::size_t nl = text.find('\n');
    const auto first = csv::split_record(
        std::string_view(text).substr(0, nl == std::string::npos ? text.size() : nl));
    header = std::none_of(first.begin(), first.end(), [](const std::string& f) {
      return csv::parse_double(f).has_value();
    });
    std::size_t cols = first.size();
    if (cols != width) {
      throw DataError(
          where + ": found " + std::to_string(cols) +
          " columns; expected 52 (xmeas_1..xmeas_41, xmv_1..xmv_11) or 53 "
          "(with xmv_12), plus one when a label column is present; "
          "selected schema needs " + std::to_string(width));
    }
  }
  Tensor all = detail::parse_numeric_csv(text, width, header, where);

  Dataset ds;
  ds.schema = names;
  Run run;
  run.split = opt.split;
  if (opt.label_column) {
    std::optional<std::size_t> onset;
    long fault = 0;
    for (std::size_t k = 0; k < all.rows(); ++k) {
      const double v = all.at(k, names.size());
      if (v != std::floor(v) || v < 0) {
        throw ParseError(where + ": label at row " + std::to_string(k + 1) +
                             " is not a non-negative integer",
                         k + 1, width);
      }
      const long id = static_cast<long>(v);
      if (id == 0) continue;
      if (fault != 0 && id != fault) {
        throw DataError(where + ": rows carry more than one fault number");
      }
      fault = id;
      if (!onset) onset = k;
    }
    if (fault != 0) {
      ds.class_labels.push_back("IDV" + std::to_string(fault));
      run.label = 1;
      run.onset = onset;
      run.scenario = ds.class_labels.back();
    }
    std::vector<double> vals;
    vals.reserve(all.rows() * names.size());
    for (std::size_t k = 0; k < all.rows(); ++k) {
      auto row = all.row(k).first(names.size());
      vals.insert(vals.end(), row.begin(), row.end());
    }
    run.values = Tensor({all.rows(), names.size()}, std::move(vals));
  } else {
    run.values = std::move(all);
    if (opt.fault_label && *opt.fault_label != "normal") {
      ds.class_labels.push_back(*opt.fault_label);
      run.label = 1;
      run.onset = opt.onset.value_or(0);
      run.scenario = *opt.fault_label;
      if (*run.onset >= run.length()) {
        throw DataError(where + ": onset beyond the last row");
      }
    }
  }
  ds.runs.push_back(std::move(run));
  ds.standardization = fit_standardization(ds);
  ds.validate();
  return ds;
}

inline Dataset ingest_tep_csv(const std::filesystem::path& path,
                              const TepCsvOptions& opt) {
  return ingest_tep_csv_text(io::read_file(path), opt, path.filename().string());
}

/// Concatenates datasets with a shared schema, unifying class labels by name
/// and refitting the standardization on the combined normal rows.
inline Dataset merge_datasets(std::span<const Dataset> parts) {
  if (parts.empty()) throw InvalidArgument("nothing to merge");
  Dataset out;
  out.schema = parts.front().schema;
  out.window_len = parts.front().window_len;
  out.stride = parts.front().stride;
  for (const Dataset& d : parts) {
    if (d.schema != out.schema) {
      throw DataError("cannot merge datasets with different schemas");
    }
    for (Run run : d.runs) {
      const std::string& name = d.class_labels.at(run.label);
      auto it = std::find(out.class_labels.begin(), out.class_labels.end(), name);
      if (it == out.class_labels.end()) {
        out.class_labels.push_back(name);
        it = out.class_labels.end() - 1;
      }
      run.label = static_cast<std::size_t>(it - out.class_labels.begin());
      out.runs.push_back(std::move(run));
    }
  }
  out.standardization = fit_standardization(out);
  out.validate();
  return out;
}

}  // namespace faultlens
