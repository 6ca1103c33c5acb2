// faultlens: command-line driver for the fault-attribution pipeline.
//
//   faultlens repro --config configs/default.json
//   faultlens train --config configs/default.json --out runs/a
//
// Log verbosity comes from FAULTLENS_LOG (debug, info, warn, error, off).

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "faultlens/config.hpp"
#include "faultlens/error.hpp"
#include "faultlens/pipeline.hpp"

namespace {

using faultlens::pipeline::Context;
using faultlens::pipeline::LogLevel;

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::string methods;
};

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("faultlens");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("FAULTLENS_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

Context make_context(const Overrides& o) {
  Context ctx;
  ctx.config = faultlens::load_config(o.config);
  if (!o.out.empty()) ctx.config.output_dir = o.out;
  if (o.seed) ctx.config.seed = *o.seed;
  if (o.k) ctx.config.analysis.k = *o.k;
  if (!o.methods.empty()) {
    nlohmann::json names = nlohmann::json::array();
    std::stringstream ss(o.methods);
    for (std::string m; std::getline(ss, m, ',');) {
      if (!m.empty()) names.push_back(m);
    }
    faultlens::detail::read_methods(names, ctx.config.attribution);
  }
  ctx.config.validate();
  ctx.log = [](LogLevel level, const std::string& msg) {
    switch (level) {
      case LogLevel::kDebug: spdlog::debug(msg); break;
      case LogLevel::kInfo: spdlog::info(msg); break;
      case LogLevel::kWarn: spdlog::warn(msg); break;
    }
  };
  return ctx;
}

void report_stage(const faultlens::Manifest& m, const Context& ctx) {
  spdlog::info("{}: wrote {} files under {}", m.stage(), m.entries().size(),
               ctx.config.output_dir.string());
}

int print_error(const std::string& kind, const std::string& message,
                const std::string& prerequisite = "") {
  nlohmann::json j = {{"error", kind}, {"message", message}};
  if (!prerequisite.empty()) j["prerequisite"] = prerequisite;
  std::cerr << j.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"faultlens: explainable fault diagnosis for multivariate time series"};
  app.require_subcommand(1);
  Overrides o;

  struct Command {
    const char* name;
    const char* help;
  };
  const std::vector<Command> commands = {
      {"simulate", "generate a dataset with the built-in process simulator"},
      {"ingest", "load Tennessee Eastman style CSV files into a dataset"},
      {"train", "train the LSTM classifier"},
      {"attribute", "compute IG and SHAP attributions for fault windows"},
      {"analyze", "aggregate, normalize, rank and compare attributions"},
      {"report", "render the heatmap, score tables and variable plots"},
      {"repro", "run every stage and print a per-fault summary"}};
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", o.config, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", o.seed, "root seed (overrides seed)");
    sub->add_option("--k", o.k, "top-k size (overrides analysis.k)");
    sub->add_option("--methods", o.methods, "comma-separated methods: ig,shap");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return print_error("usage", e.what());
  }

  configure_logging();
  namespace p = faultlens::pipeline;
  try {
    const Context ctx = make_context(o);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "simulate") {
      report_stage(p::cmd_simulate(ctx), ctx);
    } else if (cmd == "ingest") {
      report_stage(p::cmd_ingest(ctx), ctx);
    } else if (cmd == "train") {
      report_stage(p::cmd_train(ctx), ctx);
    } else if (cmd == "attribute") {
      report_stage(p::cmd_attribute(ctx), ctx);
    } else if (cmd == "analyze") {
      report_stage(p::cmd_analyze(ctx), ctx);
    } else if (cmd == "report") {
      report_stage(p::cmd_report(ctx), ctx);
    } else {
      const p::ReproResult r = p::cmd_repro(ctx);
      if (r.test_accuracy) std::cout << "holdout accuracy: " << *r.test_accuracy << "\n";
      std::cout << p::format_summary(r.rows);
      std::cout << "manifest: " << ctx.layout().manifest().string() << "\n";
    }
  } catch (const faultlens::MissingArtifact& e) {
    return print_error(e.kind(), e.what(), e.prerequisite());
  } catch (const faultlens::Error& e) {
    return print_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    return print_error("internal", e.what());
  }
  return 0;
}
