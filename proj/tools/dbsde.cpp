// Command-line front end: train experiments, list presets, run the PDE oracle.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>

#include "dbsde/experiment/config.hpp"
#include "dbsde/experiment/run.hpp"
#include "dbsde/pde/hjb.hpp"

namespace ex = dbsde::experiment;

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

// A config argument is inline JSON, a file path, or a preset name.
ex::ExperimentConfig load_config(const std::string& arg) {
  if (!arg.empty() && arg.front() == '{') return ex::parse_config_text(arg);
  if (std::filesystem::exists(arg)) return ex::parse_config_file(arg);
  for (const auto& p : ex::preset_names())
    if (p == arg) return ex::load_preset(arg);
  throw dbsde::InvalidSpec("'" + arg + "' is neither a config file, inline JSON nor a preset name");
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> batches;
  std::optional<int> batch_size;
  std::optional<int> jobs;
};

int cmd_run(const std::string& arg, const Overrides& o, int progress_every) {
  auto config = load_config(arg);
  if (o.seed) config.seed = *o.seed;
  if (o.out_dir) config.output_dir = *o.out_dir;
  if (o.batches) config.n_batches = *o.batches;
  if (o.batch_size) config.batch_size = *o.batch_size;
  if (o.jobs) config.jobs = *o.jobs;
  config.validate();

  std::mutex io;
  ex::RunProgressFn progress;
  if (progress_every > 0)
    progress = [&](const std::string& label, int b, const dbsde::solver::TrainReport& r) {
      if ((b + 1) % progress_every != 0) return;
      std::lock_guard lock(io);
      std::fprintf(stderr, "%-36s batch %6d  loss %-12.6g estimate %.6f\n", label.c_str(), b + 1,
                   r.loss_history.back(), r.y0_history.back());
    };
  const auto result = ex::run_experiment(config, progress);
  ex::write_artifacts(result, config.output_dir);

  std::cout << ex::summary_table(result).str();
  for (const auto& r : result.runs)
    if (r.diverged()) std::cerr << r.spec.label() << " diverged: " << r.result.report.diagnostic << "\n";
  return result.any_diverged() ? kNumericalError : 0;
}

int cmd_presets(bool as_json) {
  for (const auto& name : ex::preset_names()) {
    if (as_json)
      std::cout << ex::to_json(ex::load_preset(name)).dump(2) << "\n";
    else
      std::cout << name << "\n";
  }
  return 0;
}

int cmd_oracle(const std::string& arg, int nodes, int steps, const std::vector<double>& spots) {
  auto config = load_config(arg);
  config.pde.enabled = true;
  config.pde.nodes = nodes;
  config.pde.time_steps = steps;
  const auto refs = ex::pde_references(config);
  if (refs.empty()) throw dbsde::InvalidSpec("the PDE oracle needs a one-asset problem");
  std::printf("x0,upper,lower\n");
  std::vector<double> xs = spots;
  if (xs.empty()) xs.push_back(refs[0].x0);
  for (double x : xs)
    std::printf("%s,%s,%s\n", ex::format_number(x).c_str(),
                ex::format_number(dbsde::pde::sample_value(refs[0].surface, x)).c_str(),
                ex::format_number(dbsde::pde::sample_value(refs[1].surface, x)).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep BSDE pricing of options under differential borrowing and lending rates"};
  app.require_subcommand(1);

  Overrides o;
  int progress_every = 1000;
  std::string run_arg;
  auto* run = app.add_subcommand("run", "train the runs of a config and write CSV artifacts");
  run->add_option("config", run_arg, "config file, inline JSON or preset name")->required();
  run->add_option("--seed", o.seed, "base seed");
  run->add_option("--out-dir", o.out_dir, "artifact directory");
  run->add_option("--batches", o.batches, "number of mini-batches")->check(CLI::NonNegativeNumber);
  run->add_option("--batch-size", o.batch_size, "paths per mini-batch")->check(CLI::PositiveNumber);
  run->add_option("--jobs", o.jobs, "runs trained concurrently")->check(CLI::PositiveNumber);
  run->add_option("--progress-every", progress_every, "progress line every N batches (0: quiet)");

  bool as_json = false;
  auto* presets = app.add_subcommand("presets", "list the built-in presets");
  presets->add_flag("--json", as_json, "print each preset as a full config");

  std::string oracle_arg;
  int nodes = 101, steps = 100;
  std::vector<double> spots;
  auto* oracle = app.add_subcommand("oracle", "upper and lower prices from the finite-difference HJB solver");
  oracle->add_option("config", oracle_arg, "preset name, config file or inline JSON")->required();
  oracle->add_option("--nodes", nodes, "spatial nodes")->check(CLI::Range(5, 100000));
  oracle->add_option("--steps", steps, "time steps")->check(CLI::Range(1, 1000000));
  oracle->add_option("--x0", spots, "spots to report (default: the X0 centre)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*run) return cmd_run(run_arg, o, progress_every);
    if (*presets) return cmd_presets(as_json);
    if (*oracle) return cmd_oracle(oracle_arg, nodes, steps, spots);
  } catch (const dbsde::InvalidSpec& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const dbsde::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
