#pragma once

// Surrogate controlled process: an exothermic CSTR with a cooling jacket
// feeding a cooled separator. Four PI loops hold reactor temperature,
// reactor level, separator temperature and separator level. Faults of the
// four archetypes (step, random, slow drift, sticking) act on boundary
// conditions or on valves.
//
// Integration is explicit Euler with a fixed number of substeps per sample.
// Per sample k: measure (state + sensor noise), run the controllers, apply
// valve faults, record the row, then integrate over one sample period with
// the fault-adjusted boundary conditions of sample k.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "faultlens/error.hpp"
#include "faultlens/tensor.hpp"

namespace faultlens::sim {

/// Recorded channels, in schema order. The first eight are measurements,
/// the last four valve positions in percent.
enum Channel : std::size_t {
  kFeedFlow,
  kFeedTemp,
  kReactorLevel,
  kReactorTemp,
  kReactorConc,
  kCoolantOutletTemp,
  kSeparatorLevel,
  kSeparatorTemp,
  kCoolantValve,
  kReactorOutletValve,
  kCondenserValve,
  kSeparatorValve,
  kNumChannels
};

inline constexpr std::size_t kNumMeasured = 8;
inline constexpr std::size_t kNumValves = 4;

inline const std::array<std::string_view, kNumChannels>& channel_names() {
  static const std::array<std::string_view, kNumChannels> names = {
      "feed_flow",       "feed_temp",         "reactor_level",
      "reactor_temp",    "reactor_conc",      "coolant_outlet_temp",
      "separator_level", "separator_temp",    "coolant_valve",
      "reactor_outlet_valve", "condenser_valve", "separator_valve"};
  return names;
}

inline std::vector<std::string> schema() {
  return {channel_names().begin(), channel_names().end()};
}

inline std::optional<std::size_t> find_channel(std::string_view name) {
  const auto& names = channel_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  return std::nullopt;
}

enum class Archetype { kStep, kRandom, kSlowDrift, kSticking };

inline std::string_view archetype_name(Archetype a) {
  switch (a) {
    case Archetype::kStep: return "step";
    case Archetype::kRandom: return "random";
    case Archetype::kSlowDrift: return "slow_drift";
    case Archetype::kSticking: return "sticking";
  }
  return "?";
}

inline Archetype parse_archetype(std::string_view s) {
  if (s == "step") return Archetype::kStep;
  if (s == "random") return Archetype::kRandom;
  if (s == "slow_drift" || s == "slow drift") return Archetype::kSlowDrift;
  if (s == "sticking") return Archetype::kSticking;
  throw InvalidArgument("unknown fault archetype '" + std::string(s) +
                        "' (expected step, random, slow_drift or sticking)");
}

/// What a fault acts on: a boundary condition of the plant or a valve.
enum class Target {
  kFeedFlow,
  kFeedTemp,
  kFeedConc,
  kCoolantInletTemp,
  kCondenserInletTemp,
  kKinetics,
  kCoolantValve,
  kReactorOutletValve,
  kCondenserValve,
  kSeparatorValve,
};

struct TargetInfo {
  Target target;
  std::string_view name;
  bool is_valve;
  std::size_t valve_channel;  // valid when is_valve
};

inline const std::array<TargetInfo, 10>& targets() {
  static const std::array<TargetInfo, 10> t = {{
      {Target::kFeedFlow, "feed_flow", false, 0},
      {Target::kFeedTemp, "feed_temp", false, 0},
      {Target::kFeedConc, "feed_conc", false, 0},
      {Target::kCoolantInletTemp, "coolant_inlet_temp", false, 0},
      {Target::kCondenserInletTemp, "condenser_inlet_temp", false, 0},
      {Target::kKinetics, "kinetics", false, 0},
      {Target::kCoolantValve, "coolant_valve", true, kCoolantValve},
      {Target::kReactorOutletValve, "reactor_outlet_valve", true,
       kReactorOutletValve},
      {Target::kCondenserValve, "condenser_valve", true, kCondenserValve},
      {Target::kSeparatorValve, "separator_valve", true, kSeparatorValve},
  }};
  return t;
}

inline const TargetInfo& target_info(Target t) {
  for (const auto& info : targets()) {
    if (info.target == t) return info;
  }
  throw InvalidArgument("unknown fault target");
}

inline Target parse_target(std::string_view s) {
  for (const auto& info : targets()) {
    if (info.name == s) return info.target;
  }
  throw InvalidArgument("unknown fault target '" + std::string(s) + "'");
}

struct FaultScenario {
  std::string id;
  Archetype archetype = Archetype::kStep;
  Target target = Target::kCoolantInletTemp;
  /// step: offset; random: noise std; slow_drift: slope per sample;
  /// sticking: unused. Units of the target (kinetics: fraction of nominal).
  double magnitude = 0.0;
  std::size_t onset_index = 0;
  std::uint64_t rng_seed = 0;

  void validate(std::size_t duration) const {
    if (onset_index >= duration) {
      throw InvalidArgument("fault '" + id + "': onset " +
                            std::to_string(onset_index) +
                            " outside run of " + std::to_string(duration) +
                            " samples");
    }
    if ((archetype == Archetype::kStep ||
         archetype == Archetype::kSlowDrift) && magnitude == 0.0) {
      throw InvalidArgument("fault '" + id + "': magnitude must be nonzero");
    }
    if (archetype == Archetype::kRandom && !(magnitude > 0.0)) {
      throw InvalidArgument("fault '" + id +
                            "': random fault needs a positive std");
    }
    if (archetype == Archetype::kSticking && !target_info(target).is_valve) {
      throw InvalidArgument("fault '" + id + "': sticking needs a valve target");
    }
  }
};

/// Nominal plant constants. Flows in m3/min, temperatures in K, time in min.
struct PlantParameters {
  double feed_flow = 1.0;
  double feed_temp = 320.0;
  double feed_conc = 1.0;
  double coolant_inlet_temp = 300.0;
  double condenser_inlet_temp = 290.0;
  double reactor_volume_max = 10.0;
  double separator_volume_max = 5.0;
  double jacket_volume = 1.0;
  double rate_ref = 0.2;          // 1/min at temp_ref
  double activation = 2000.0;     // E/R in K
  double temp_ref = 350.0;
  double reaction_heat = 100.0;   // K m3/kmol
  double wall_conductance = 1.0;  // UA/(rho cp), m3/min
  double jacket_exchange = 1.0;   // 1/min
  double condenser_exchange = 0.8;
  double outlet_flow_max = 2.0;
  double coolant_flow_max = 4.0 / 3.0;
  double separator_flow_max = 2.0;
};

struct PiLoop {
  std::size_t measured;
  std::size_t manipulated;  // a valve channel
  double gain;              // % per measured unit; sign sets direction
  double reset_time;        // min
  double setpoint;
  double bias = 50.0;       // valve position at zero error
  bool enabled = true;
};

struct ProcessSpec {
  PlantParameters plant;
  std::vector<PiLoop> loops;
  std::array<double, kNumChannels> noise_std{};
  std::array<double, kNumChannels> initial{};  // true initial channel values
  double sample_period = 1.0;                  // min per recorded sample
  std::size_t substeps = 10;
  std::size_t duration = 500;                  // samples
  std::uint64_t rng_seed = 1;                  // sensor noise stream

  static ProcessSpec standard() {
    ProcessSpec s;
    s.loops = {
        {kReactorTemp, kCoolantValve, 2.0, 5.0, 350.0},
        {kReactorLevel, kReactorOutletValve, 0.5, 10.0, 50.0},
        {kSeparatorTemp, kCondenserValve, 1.0, 4.0, 320.0},
        {kSeparatorLevel, kSeparatorValve, 0.5, 10.0, 50.0},
    };
    s.noise_std = {0.01, 0.1, 0.2, 0.05, 0.002, 0.05, 0.3, 0.1,
                   0.0,  0.0, 0.0, 0.0};
    s.initial = {1.0, 320.0, 50.0, 350.0, 0.5, 330.0, 50.0, 320.0,
                 50.0, 50.0, 50.0, 50.0};
    return s;
  }

  void validate() const {
    if (duration < 2) throw InvalidArgument("duration must be >= 2 samples");
    if (substeps < 1) throw InvalidArgument("substeps must be >= 1");
    if (!(sample_period > 0.0)) {
      throw InvalidArgument("sample_period must be positive");
    }
    for (double s : noise_std) {
      if (!(s >= 0.0)) throw InvalidArgument("noise std must be >= 0");
    }
    for (const auto& l : loops) {
      if (l.measured >= kNumMeasured || l.manipulated < kNumMeasured ||
          l.manipulated >= kNumChannels) {
        throw InvalidArgument("PI loop must map a measurement to a valve");
      }
      if (!(l.reset_time > 0.0)) {
        throw InvalidArgument("PI reset time must be positive");
      }
      if (l.bias < 0.0 || l.bias > 100.0) {
        throw InvalidArgument("PI bias outside [0, 100]");
      }
    }
    for (std::size_t v = kNumMeasured; v < kNumChannels; ++v) {
      if (initial[v] < 0.0 || initial[v] > 100.0) {
        throw InvalidArgument("initial valve position outside [0, 100]");
      }
    }
  }
};

struct SimulationRun {
  Tensor measured;  // [duration x kNumChannels], what sensors report
  Tensor truth;     // same layout, noise-free
  std::optional<std::size_t> onset;
  std::string scenario;  // "normal" without a fault
};

namespace detail {

struct State {
  double reactor_volume;
  double conc;
  double temp;
  double jacket_temp;
  double separator_volume;
  double separator_temp;
};

struct Boundary {
  double feed_flow, feed_temp, feed_conc, coolant_inlet, condenser_inlet,
      kinetics;
};

inline State derivative(const PlantParameters& p, const State& s,
                        const Boundary& b,
                        const std::array<double, kNumValves>& valves) {
  const double outlet = p.outlet_flow_max * valves[1] / 100.0;
  const double coolant = p.coolant_flow_max * valves[0] / 100.0;
  const double sep_out = p.separator_flow_max * valves[3] / 100.0;
  const double v = std::max(s.reactor_volume, 1e-6);
  const double vs = std::max(s.separator_volume, 1e-6);
  const double rate = b.kinetics * p.rate_ref *
                      std::exp(-p.activation * (1.0 / s.temp - 1.0 / p.temp_ref));
  State d{};
  d.reactor_volume = b.feed_flow - outlet;
  d.conc = b.feed_flow / v * (b.feed_conc - s.conc) - rate * s.conc;
  d.temp = b.feed_flow / v * (b.feed_temp - s.temp) +
           p.reaction_heat * rate * s.conc -
           p.wall_conductance / v * (s.temp - s.jacket_temp);
  d.jacket_temp = coolant / p.jacket_volume * (b.coolant_inlet - s.jacket_temp) +
                  p.jacket_exchange * (s.temp - s.jacket_temp);
  d.separator_volume = outlet - sep_out;
  d.separator_temp = outlet / vs * (s.temp - s.separator_temp) -
                     p.condenser_exchange * valves[2] / 100.0 *
                         (s.separator_temp - b.condenser_inlet);
  return d;
}

inline bool finite(const State& s) {
  return std::isfinite(s.reactor_volume) && std::isfinite(s.conc) &&
         std::isfinite(s.temp) && std::isfinite(s.jacket_temp) &&
         std::isfinite(s.separator_volume) && std::isfinite(s.separator_temp);
}

}  // namespace detail

/// Runs the process for spec.duration samples, optionally with one fault.
/// Deterministic for fixed spec.rng_seed and scenario->rng_seed; sensor noise
/// and fault noise come from separate streams, so samples before the onset
/// match the fault-free run bit for bit.
inline SimulationRun simulate(const ProcessSpec& spec,
                              const std::optional<FaultScenario>& scenario =
                                  std::nullopt) {
  spec.validate();
  if (scenario) scenario->validate(spec.duration);
  const PlantParameters& p = spec.plant;

  detail::State s{};
  s.reactor_volume = spec.initial[kReactorLevel] / 100.0 * p.reactor_volume_max;
  s.conc = spec.initial[kReactorConc];
  s.temp = spec.initial[kReactorTemp];
  s.jacket_temp = spec.initial[kCoolantOutletTemp];
  s.separator_volume =
      spec.initial[kSeparatorLevel] / 100.0 * p.separator_volume_max;
  s.separator_temp = spec.initial[kSeparatorTemp];

  std::mt19937_64 sensor_rng(spec.rng_seed);
  std::mt19937_64 fault_rng(scenario ? scenario->rng_seed : 0);
  std::normal_distribution<double> unit(0.0, 1.0);

  std::vector<double> integral(spec.loops.size(), 0.0);
  std::array<double, kNumValves> valves{};
  for (std::size_t v = 0; v < kNumValves; ++v) {
    valves[v] = spec.initial[kNumMeasured + v];
  }
  std::optional<double> stuck;

  SimulationRun run{Tensor({spec.duration, kNumChannels}),
                    Tensor({spec.duration, kNumChannels}),
                    scenario ? std::optional(scenario->onset_index)
                             : std::nullopt,
                    scenario ? scenario->id : "normal"};

  const double dt = spec.sample_period / static_cast<double>(spec.substeps);
  for (std::size_t k = 0; k < spec.duration; ++k) {
    const bool active = scenario && k >= scenario->onset_index;
    // Fault offset for this sample (zero before the onset).
    double offset = 0.0;
    if (active) {
      const double since = static_cast<double>(k - scenario->onset_index + 1);
      switch (scenario->archetype) {
        case Archetype::kStep: offset = scenario->magnitude; break;
        case Archetype::kRandom:
          offset = scenario->magnitude * unit(fault_rng);
          break;
        case Archetype::kSlowDrift: offset = scenario->magnitude * since; break;
        case Archetype::kSticking: break;
      }
    }

    std::array<double, kNumChannels> truth{};
    truth[kFeedFlow] = p.feed_flow +
                       (active && scenario->target == Target::kFeedFlow ? offset : 0.0);
    truth[kFeedTemp] = p.feed_temp +
                       (active && scenario->target == Target::kFeedTemp ? offset : 0.0);
    truth[kReactorLevel] = 100.0 * s.reactor_volume / p.reactor_volume_max;
    truth[kReactorTemp] = s.temp;
    truth[kReactorConc] = s.conc;
    truth[kCoolantOutletTemp] = s.jacket_temp;
    truth[kSeparatorLevel] = 100.0 * s.separator_volume / p.separator_volume_max;
    truth[kSeparatorTemp] = s.separator_temp;

    std::array<double, kNumChannels> measured{};
    for (std::size_t c = 0; c < kNumMeasured; ++c) {
      // Always draw, so the stream stays aligned across scenarios.
      const double z = unit(sensor_rng);
      measured[c] = truth[c] + spec.noise_std[c] * z;
    }

    for (std::size_t i = 0; i < spec.loops.size(); ++i) {
      const PiLoop& loop = spec.loops[i];
      const std::size_t v = loop.manipulated - kNumMeasured;
      if (!loop.enabled) {
        valves[v] = loop.bias;
        continue;
      }
      const double err = measured[loop.measured] - loop.setpoint;
      const double trial_integral = integral[i] + err * spec.sample_period;
      const double raw =
          loop.bias + loop.gain * (err + trial_integral / loop.reset_time);
      const double clamped = std::clamp(raw, 0.0, 100.0);
      if (raw == clamped) integral[i] = trial_integral;  // anti-windup
      valves[v] = clamped;
    }

    if (active && target_info(scenario->target).is_valve) {
      const std::size_t v = target_info(scenario->target).valve_channel -
                            kNumMeasured;
      if (scenario->archetype == Archetype::kSticking) {
        if (!stuck) stuck = valves[v];
        valves[v] = *stuck;
      } else {
        valves[v] = std::clamp(valves[v] + offset, 0.0, 100.0);
      }
    }

    for (std::size_t v = 0; v < kNumValves; ++v) {
      truth[kNumMeasured + v] = valves[v];
      measured[kNumMeasured + v] =
          valves[v] + spec.noise_std[kNumMeasured + v] * unit(sensor_rng);
    }
    std::copy(truth.begin(), truth.end(), run.truth.row(k).begin());
    std::copy(measured.begin(), measured.end(), run.measured.row(k).begin());

    detail::Boundary b{p.feed_flow,          p.feed_temp,
                       p.feed_conc,          p.coolant_inlet_temp,
                       p.condenser_inlet_temp, 1.0};
    if (active) {
      switch (scenario->target) {
        case Target::kFeedFlow: b.feed_flow += offset; break;
        case Target::kFeedTemp: b.feed_temp += offset; break;
        case Target::kFeedConc: b.feed_conc += offset; break;
        case Target::kCoolantInletTemp: b.coolant_inlet += offset; break;
        case Target::kCondenserInletTemp: b.condenser_inlet += offset; break;
        case Target::kKinetics: b.kinetics += offset; break;
        default: break;
      }
    }
    for (std::size_t sub = 0; sub < spec.substeps; ++sub) {
      const detail::State d = detail::derivative(p, s, b, valves);
      s.reactor_volume += dt * d.reactor_volume;
      s.conc += dt * d.conc;
      s.temp += dt * d.temp;
      s.jacket_temp += dt * d.jacket_temp;
      s.separator_volume += dt * d.separator_volume;
      s.separator_temp += dt * d.separator_temp;
    }
    if (!detail::finite(s) || s.temp <= 0.0) {
      throw NumericError("simulation became unstable at sample " +
                         std::to_string(k) + " (state is not finite)");
    }
  }
  return run;
}

/// Canonical scenarios, named after the TEP disturbance each one mimics.
inline std::vector<FaultScenario> builtin_scenarios() {
  return {
      {"IDV3-analogue", Archetype::kStep, Target::kFeedTemp, 3.0, 0, 0},
      {"IDV4-analogue", Archetype::kStep, Target::kCoolantInletTemp, 2.0, 0, 0},
      {"IDV5-analogue", Archetype::kStep, Target::kCondenserInletTemp, 2.0, 0, 0},
      {"IDV6-analogue", Archetype::kStep, Target::kFeedFlow, -0.1, 0, 0},
      {"IDV11-analogue", Archetype::kRandom, Target::kCoolantInletTemp, 1.0, 0, 0},
      {"IDV13-analogue", Archetype::kSlowDrift, Target::kKinetics, 0.0005, 0, 0},
      {"IDV14-analogue", Archetype::kSticking, Target::kCoolantValve, 0.0, 0, 0},
  };
}

inline FaultScenario builtin_scenario(std::string_view id) {
  for (const auto& s : builtin_scenarios()) {
    if (s.id == id) return s;
  }
  throw InvalidArgument("unknown built-in scenario '" + std::string(id) + "'");
}

}  // namespace faultlens::sim
