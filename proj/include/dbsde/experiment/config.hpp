#pragma once

#include <json.hpp>

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/rng.hpp"
#include "dbsde/solver/config.hpp"
#include "dbsde/solver/problem.hpp"

namespace dbsde::experiment {

using json = nlohmann::json;

enum class Position { Long, Short };

inline std::string to_string(Position p) { return p == Position::Long ? "long" : "short"; }

/// One (variant, backstep, position) training run.
struct RunSpec {
  solver::SolverVariant variant = solver::SolverVariant::learned_y0();
  solver::BackstepMethod backstep = solver::BackstepMethod::Exact;
  Position position = Position::Long;
  std::optional<solver::StrategyKind> strategy;
  std::optional<std::uint64_t> seed;

  std::string label() const {
    return variant.name() + ":" + solver::to_string(backstep) + ":" + to_string(position);
  }
};

struct StrategyGridSpec {
  std::vector<int> time_indices;
  std::vector<double> spots;
  int rollback_paths = 256;
};

struct YinitCurveSpec {
  std::vector<double> spots;
  int rollback_paths = 1024;
};

struct PdeSpec {
  bool enabled = true;
  int nodes = 101;
  int time_steps = 100;
};

struct ExperimentConfig {
  std::string preset;  ///< empty for fully explicit configs
  solver::FbsdeProblem problem;
  int batch_size = 256;
  int n_batches = 20000;
  std::uint64_t seed = 1;
  double learning_rate = 5e-3;
  int range_window = 2000;
  std::vector<RunSpec> runs;
  std::string output_dir = "out";
  StrategyGridSpec strategy_grid;
  YinitCurveSpec yinit_curve;
  PdeSpec pde;
  std::optional<std::array<double, 2>> plot_window;
  int jobs = 1;

  /// Solver settings of one run. Runs that differ only in the backstep share
  /// a seed, so exact and Taylor see the same paths.
  solver::SolverConfig solver_config(const RunSpec& run) const {
    solver::SolverConfig c;
    c.variant = run.variant;
    c.backstep = run.backstep;
    if (run.strategy) c.strategy = solver::StrategyModel{*run.strategy, false};
    if (run.strategy && run.variant.kind == solver::VariantKind::ForwardFixed)
      c.strategy->initial_pi_parameter = true;
    c.batch_size = batch_size;
    c.n_batches = n_batches;
    c.optimizer.learning_rate = learning_rate;
    c.range_window = range_window;
    c.seed = run.seed.value_or(run_seed(run));
    return c;
  }

  std::uint64_t run_seed(const RunSpec& run) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (char ch : run.variant.name() + ":" + to_string(run.position)) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
    return CounterRng::stream(seed, h, 0);
  }

  solver::FbsdeProblem run_problem(const RunSpec& run) const {
    return run.position == Position::Long ? problem : problem.negated();
  }

  void validate() const {
    problem.validate();
    if (runs.empty()) throw InvalidSpec("config: at least one run is required");
    if (jobs < 1) throw InvalidSpec("config: jobs must be positive");
    if (strategy_grid.rollback_paths < 1 || yinit_curve.rollback_paths < 1)
      throw InvalidSpec("config: rollback_paths must be positive");
    for (int i : strategy_grid.time_indices)
      if (i < 0 || i >= problem.grid.n_steps) throw InvalidSpec("config: strategy_grid time index out of range");
    for (double x : strategy_grid.spots)
      if (!(x > 0.0)) throw InvalidSpec("config: strategy_grid spots must be positive");
    for (double x : yinit_curve.spots)
      if (!(x > 0.0)) throw InvalidSpec("config: yinit_curve spots must be positive");
    if (pde.nodes < 5 || pde.time_steps < 1) throw InvalidSpec("config: pde grid too small");
    if (plot_window && !((*plot_window)[0] < (*plot_window)[1])) throw InvalidSpec("config: bad plot_window");
    std::set<std::string> labels;
    for (const auto& r : runs) {
      if (!labels.insert(r.label()).second) throw InvalidSpec("config: duplicate run " + r.label());
      solver_config(r).validate(run_problem(r));
    }
  }
};

namespace detail {

inline std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = lo + (hi - lo) * i / (n - 1);
  return v;
}

inline json run_json(const std::string& method, const std::string& backstep, const std::string& position) {
  return json{{"method", method}, {"backstep", backstep}, {"position", position}};
}

inline json runs_for(const std::vector<std::string>& methods, const std::vector<std::string>& backsteps,
                     const std::vector<std::string>& positions) {
  json a = json::array();
  for (const auto& p : positions)
    for (const auto& b : backsteps)
      for (const auto& m : methods) {
        // forward methods do not use a backstep; list them once
        if (m.rfind("forward", 0) == 0 && b != backsteps.front()) continue;
        a.push_back(run_json(m, b, p));
      }
  return a;
}

inline json straddle_base() {
  return json{{"model", {{"dim", 1}, {"sigma", 0.3}, {"mu", 0.05}}},
              {"rates", {{"r_l", 0.03}, {"r_b", 0.05}}},
              {"payoff", {{"type", "straddle"}, {"strike", 100.0}}},
              {"grid", {{"maturity", 1.0}, {"n_steps", 100}}},
              {"strategy_grid", {{"time_indices", {0, 25, 50, 75, 99}}, {"spots", linspace(50.0, 150.0, 21)}}}};
}

inline json call_combo_base() {
  return json{{"model", {{"dim", 1}, {"sigma", 0.2}, {"mu", 0.06}}},
              {"rates", {{"r_l", 0.04}, {"r_b", 0.06}}},
              {"payoff",
               {{"type", "call_combination"},
                {"strike_low", 120.0},
                {"strike_high", 150.0},
                {"weight_low", 1.0},
                {"weight_high", -2.0}}},
              {"grid", {{"maturity", 0.5}, {"n_steps", 50}}},
              {"batch_size", 512},
              {"strategy_grid", {{"time_indices", {0, 12, 25, 37, 49}}, {"spots", linspace(70.0, 170.0, 21)}}}};
}

}  // namespace detail

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"call_combo_fixed", "call_combo_random", "straddle_fixed",
                                              "straddle_random"};
  return names;
}

/// Full JSON of a named preset.
inline json preset_json(const std::string& name) {
  json j;
  if (name == "straddle_fixed") {
    j = detail::straddle_base();
    j["x0"] = {{"fixed", 100.0}};
    j["runs"] = detail::runs_for({"forward_fixed", "batch_variance_last", "batch_variance_rolling100", "learned_y0"},
                                 {"exact", "taylor"}, {"long", "short"});
  } else if (name == "straddle_random") {
    j = detail::straddle_base();
    j["x0"] = {{"uniform", {50.0, 150.0}}};
    j["batch_size"] = 1024;
    j["runs"] = detail::runs_for({"forward_random", "yinit_network"}, {"exact"}, {"long", "short"});
    j["yinit_curve"] = {{"spots", detail::linspace(50.0, 150.0, 21)}};
    j["plot_window"] = {80.0, 120.0};
  } else if (name == "call_combo_fixed") {
    j = detail::call_combo_base();
    j["x0"] = {{"fixed", 120.0}};
    j["runs"] = detail::runs_for({"forward_fixed", "batch_variance_last", "batch_variance_rolling100", "learned_y0"},
                                 {"exact"}, {"long"});
  } else if (name == "call_combo_random") {
    j = detail::call_combo_base();
    j["x0"] = {{"uniform", {70.0, 170.0}}};
    j["runs"] = detail::runs_for({"forward_random", "yinit_network"}, {"exact"}, {"long"});
    j["yinit_curve"] = {{"spots", detail::linspace(70.0, 170.0, 21)}};
  } else {
    throw InvalidSpec("unknown preset '" + name + "'");
  }
  j["preset"] = name;
  return j;
}

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InvalidSpec(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InvalidSpec(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get(const json& j, const std::string& where, const char* key) {
  if (!j.contains(key)) throw InvalidSpec(where + ": missing required field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidSpec(where + ": field '" + key + "' has the wrong type");
  }
}

template <typename T>
T get_or(const json& j, const std::string& where, const char* key, T fallback) {
  return j.contains(key) ? get<T>(j, where, key) : fallback;
}

inline solver::SolverVariant parse_method(const std::string& m, const json& run) {
  const std::string where = "runs[" + m + "]";
  if (m == "forward_fixed") return solver::SolverVariant::forward_fixed();
  if (m == "forward_random") return solver::SolverVariant::forward_random();
  if (m == "learned_y0") return solver::SolverVariant::learned_y0();
  if (m == "batch_variance_last") return solver::SolverVariant::batch_variance(solver::MeanEstimate::LastBatchMean);
  const std::string rolling = "batch_variance_rolling";
  if (m.rfind(rolling, 0) == 0) {
    const std::string digits = m.substr(rolling.size());
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
      throw InvalidSpec(where + ": bad rolling window in method name");
    return solver::SolverVariant::batch_variance(solver::MeanEstimate::RollingMean, std::stoi(digits));
  }
  if (m == "yinit_network")
    return solver::SolverVariant::yinit_network(get_or<std::vector<int>>(run, where, "intermediate_times", {}));
  throw InvalidSpec("unknown method '" + m + "'");
}

inline RunSpec parse_run(const json& j) {
  check_keys(j, "run", {"method", "backstep", "position", "intermediate_times", "strategy", "seed"});
  RunSpec r;
  const auto method = get<std::string>(j, "run", "method");
  if (j.contains("intermediate_times") && method != "yinit_network")
    throw InvalidSpec("run: intermediate_times only applies to yinit_network");
  r.variant = parse_method(method, j);
  const auto b = get_or<std::string>(j, "run", "backstep", "exact");
  if (b == "exact")
    r.backstep = solver::BackstepMethod::Exact;
  else if (b == "taylor")
    r.backstep = solver::BackstepMethod::Taylor;
  else
    throw InvalidSpec("run: backstep must be 'exact' or 'taylor'");
  const auto p = get_or<std::string>(j, "run", "position", "long");
  if (p == "long")
    r.position = Position::Long;
  else if (p == "short")
    r.position = Position::Short;
  else
    throw InvalidSpec("run: position must be 'long' or 'short'");
  if (j.contains("strategy")) {
    const auto s = get<std::string>(j, "run", "strategy");
    if (s == "shared")
      r.strategy = solver::StrategyKind::SharedNet;
    else if (s == "per_step")
      r.strategy = solver::StrategyKind::PerStepNets;
    else
      throw InvalidSpec("run: strategy must be 'shared' or 'per_step'");
  }
  if (j.contains("seed")) r.seed = get<std::uint64_t>(j, "run", "seed");
  return r;
}

inline market::Payoff parse_payoff(const json& j) {
  const auto type = get<std::string>(j, "payoff", "type");
  if (type == "straddle") {
    check_keys(j, "payoff", {"type", "strike"});
    return market::Payoff::straddle(get<double>(j, "payoff", "strike"));
  }
  if (type == "call_combination") {
    check_keys(j, "payoff", {"type", "strike_low", "strike_high", "weight_low", "weight_high"});
    market::CallCombination c;
    c.strike_low = get<double>(j, "payoff", "strike_low");
    c.strike_high = get<double>(j, "payoff", "strike_high");
    c.weight_low = get_or<double>(j, "payoff", "weight_low", 1.0);
    c.weight_high = get_or<double>(j, "payoff", "weight_high", -2.0);
    return market::Payoff::call_combination(c);
  }
  throw InvalidSpec("payoff: unknown type '" + type + "'");
}

inline market::X0Sampler parse_x0(const json& j) {
  check_keys(j, "x0", {"fixed", "uniform"});
  if (j.size() != 1) throw InvalidSpec("x0: give exactly one of 'fixed' or 'uniform'");
  if (j.contains("fixed")) return market::FixedX0{get<double>(j, "x0", "fixed")};
  const auto u = get<std::vector<double>>(j, "x0", "uniform");
  if (u.size() != 2) throw InvalidSpec("x0: uniform needs [lo, hi]");
  return market::UniformX0{u[0], u[1]};
}

// Keys whose value replaces the preset's wholesale instead of being merged.
inline bool replaces_wholesale(const std::string& key) { return key == "x0" || key == "payoff" || key == "runs"; }

}  // namespace detail

/// Builds and validates a config from a JSON document. With "preset", the
/// remaining keys override the preset field by field.
inline ExperimentConfig parse_config_json(const json& doc) {
  using detail::get;
  using detail::get_or;
  detail::check_keys(doc, "config",
                     {"preset", "model", "rates", "payoff", "grid", "x0", "generator", "batch_size", "n_batches",
                      "seed", "learning_rate", "range_window", "runs", "output_dir", "strategy_grid", "yinit_curve",
                      "pde", "plot_window", "jobs"});
  json j = doc;
  if (doc.contains("preset")) {
    j = preset_json(get<std::string>(doc, "config", "preset"));
    for (const auto& [key, value] : doc.items()) {
      if (detail::replaces_wholesale(key) || !value.is_object() || !j.contains(key))
        j[key] = value;
      else
        j[key].merge_patch(value);
    }
  }

  ExperimentConfig c;
  c.preset = get_or<std::string>(j, "config", "preset", "");

  const json& model = j.contains("model") ? j["model"] : throw InvalidSpec("config: missing required field 'model'");
  detail::check_keys(model, "model", {"dim", "sigma", "mu"});
  c.problem.model.dim = get_or<int>(model, "model", "dim", 1);
  c.problem.model.sigma_ln = get<double>(model, "model", "sigma");
  c.problem.model.mu = get<double>(model, "model", "mu");

  const json& rates = j.contains("rates") ? j["rates"] : throw InvalidSpec("config: missing required field 'rates'");
  detail::check_keys(rates, "rates", {"r_l", "r_b"});
  c.problem.rates.r_l = get<double>(rates, "rates", "r_l");
  c.problem.rates.r_b = get<double>(rates, "rates", "r_b");
  if (c.problem.rates.r_b < c.problem.rates.r_l) throw InvalidSpec("rates: r_b must be >= r_l");

  if (!j.contains("payoff")) throw InvalidSpec("config: missing required field 'payoff'");
  c.problem.payoff = detail::parse_payoff(j["payoff"]);

  const json& grid = j.contains("grid") ? j["grid"] : throw InvalidSpec("config: missing required field 'grid'");
  detail::check_keys(grid, "grid", {"maturity", "n_steps"});
  c.problem.grid = market::TimeGrid{0.0, get<double>(grid, "grid", "maturity"), get<int>(grid, "grid", "n_steps")};

  if (!j.contains("x0")) throw InvalidSpec("config: missing required field 'x0'");
  c.problem.x0 = detail::parse_x0(j["x0"]);

  const auto gen = get_or<std::string>(j, "config", "generator", "drift_adjusted");
  if (gen == "drift_adjusted")
    c.problem.form = market::GeneratorForm::DriftAdjusted;
  else if (gen == "risk_neutral")
    c.problem.form = market::GeneratorForm::RiskNeutral;
  else
    throw InvalidSpec("config: generator must be 'drift_adjusted' or 'risk_neutral'");

  c.batch_size = get_or<int>(j, "config", "batch_size", c.batch_size);
  c.n_batches = get_or<int>(j, "config", "n_batches", c.n_batches);
  c.seed = get_or<std::uint64_t>(j, "config", "seed", c.seed);
  c.learning_rate = get_or<double>(j, "config", "learning_rate", c.learning_rate);
  c.range_window = get_or<int>(j, "config", "range_window", c.range_window);
  c.output_dir = get_or<std::string>(j, "config", "output_dir", c.output_dir);
  c.jobs = get_or<int>(j, "config", "jobs", c.jobs);

  if (!j.contains("runs") || !j["runs"].is_array()) throw InvalidSpec("config: 'runs' must be an array");
  for (const auto& r : j["runs"]) c.runs.push_back(detail::parse_run(r));

  if (j.contains("strategy_grid")) {
    const auto& s = j["strategy_grid"];
    detail::check_keys(s, "strategy_grid", {"time_indices", "spots", "rollback_paths"});
    c.strategy_grid.time_indices = get_or<std::vector<int>>(s, "strategy_grid", "time_indices", {});
    c.strategy_grid.spots = get_or<std::vector<double>>(s, "strategy_grid", "spots", {});
    c.strategy_grid.rollback_paths = get_or<int>(s, "strategy_grid", "rollback_paths", 256);
  }
  if (j.contains("yinit_curve")) {
    const auto& s = j["yinit_curve"];
    detail::check_keys(s, "yinit_curve", {"spots", "rollback_paths"});
    c.yinit_curve.spots = get_or<std::vector<double>>(s, "yinit_curve", "spots", {});
    c.yinit_curve.rollback_paths = get_or<int>(s, "yinit_curve", "rollback_paths", 1024);
  }
  if (j.contains("pde")) {
    const auto& s = j["pde"];
    detail::check_keys(s, "pde", {"enabled", "nodes", "time_steps"});
    c.pde.enabled = get_or<bool>(s, "pde", "enabled", true);
    c.pde.nodes = get_or<int>(s, "pde", "nodes", 101);
    c.pde.time_steps = get_or<int>(s, "pde", "time_steps", 100);
  }
  if (j.contains("plot_window")) {
    const auto w = get<std::vector<double>>(j, "config", "plot_window");
    if (w.size() != 2) throw InvalidSpec("config: plot_window needs [lo, hi]");
    c.plot_window = std::array<double, 2>{w[0], w[1]};
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidSpec(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config_json(doc);
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidSpec("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline ExperimentConfig load_preset(const std::string& name) { return parse_config_json(json{{"preset", name}}); }

/// Serialised form; parse_config_json(to_json(c)) reproduces c.
inline json to_json(const ExperimentConfig& c) {
  json j;
  if (!c.preset.empty()) j["preset"] = c.preset;
  const auto& p = c.problem;
  j["model"] = {{"dim", p.model.dim}, {"sigma", p.model.sigma_ln}, {"mu", p.model.mu}};
  j["rates"] = {{"r_l", p.rates.r_l}, {"r_b", p.rates.r_b}};
  if (const auto* cc = std::get_if<market::CallCombination>(&p.payoff.shape))
    j["payoff"] = {{"type", "call_combination"},
                   {"strike_low", cc->strike_low},
                   {"strike_high", cc->strike_high},
                   {"weight_low", cc->weight_low},
                   {"weight_high", cc->weight_high}};
  else
    j["payoff"] = {{"type", "straddle"}, {"strike", std::get<market::Straddle>(p.payoff.shape).strike}};
  j["grid"] = {{"maturity", p.grid.maturity}, {"n_steps", p.grid.n_steps}};
  if (const auto* f = std::get_if<market::FixedX0>(&p.x0))
    j["x0"] = {{"fixed", f->value}};
  else
    j["x0"] = {{"uniform", {std::get<market::UniformX0>(p.x0).lo, std::get<market::UniformX0>(p.x0).hi}}};
  j["generator"] = p.form == market::GeneratorForm::DriftAdjusted ? "drift_adjusted" : "risk_neutral";
  j["batch_size"] = c.batch_size;
  j["n_batches"] = c.n_batches;
  j["seed"] = c.seed;
  j["learning_rate"] = c.learning_rate;
  j["range_window"] = c.range_window;
  j["output_dir"] = c.output_dir;
  j["jobs"] = c.jobs;
  j["runs"] = json::array();
  for (const auto& r : c.runs) {
    json rj{{"method", r.variant.name()}, {"backstep", solver::to_string(r.backstep)}, {"position", to_string(r.position)}};
    if (!r.variant.intermediate_times.empty()) rj["intermediate_times"] = r.variant.intermediate_times;
    if (r.strategy) rj["strategy"] = *r.strategy == solver::StrategyKind::SharedNet ? "shared" : "per_step";
    if (r.seed) rj["seed"] = *r.seed;
    j["runs"].push_back(rj);
  }
  j["strategy_grid"] = {{"time_indices", c.strategy_grid.time_indices},
                        {"spots", c.strategy_grid.spots},
                        {"rollback_paths", c.strategy_grid.rollback_paths}};
  j["yinit_curve"] = {{"spots", c.yinit_curve.spots}, {"rollback_paths", c.yinit_curve.rollback_paths}};
  j["pde"] = {{"enabled", c.pde.enabled}, {"nodes", c.pde.nodes}, {"time_steps", c.pde.time_steps}};
  if (c.plot_window) j["plot_window"] = {(*c.plot_window)[0], (*c.plot_window)[1]};
  return j;
}

}  // namespace dbsde::experiment
