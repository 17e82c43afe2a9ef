#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/nn/mlp.hpp"
#include "dbsde/nn/prescaler.hpp"
#include "dbsde/nn/tape.hpp"
#include "dbsde/rng.hpp"
#include "dbsde/solver/config.hpp"
#include "dbsde/solver/problem.hpp"

namespace dbsde::solver {

using nn::Matrix;

/// Trainable part of a solver: the strategy pi(t, x), plus whichever of the
/// scalar Y0, Yinit(X0) and Ylearned_i(X_i) the variant needs, all in one
/// ParamStore.
///
/// Networks see prescaled inputs. Strategy outputs are multiplied by
/// `pi_scale` (the reference spot), so the raw output is roughly a delta.
/// Value networks are de-scaled through `y_scalers`.
class SolverState {
 public:
  nn::ParamStore params;
  StrategyModel strategy;
  market::TimeGrid grid;
  int dim = 1;

  std::vector<std::optional<nn::MlpHandle>> pi_nets;  ///< SharedNet: one; PerStepNets: n_steps
  std::optional<std::size_t> pi0_entry;
  std::optional<std::size_t> y0_entry;
  std::optional<nn::MlpHandle> yinit;
  std::map<int, nn::MlpHandle> ylearned;

  nn::Prescaler x_scaler;
  nn::Prescaler t_scaler;
  double pi_scale = 1.0;
  std::map<int, nn::Prescaler> y_scalers;  ///< key 0: Yinit, key i: Ylearned_i

  static SolverState create(const SolverConfig& config, const FbsdeProblem& problem) {
    config.validate(problem);
    SolverState s;
    s.strategy = config.strategy_model();
    s.grid = problem.grid;
    s.dim = problem.model.dim;
    const int d = s.dim;

    const double center = market::x0_center(problem.x0);
    double half_width = 0.0;
    if (const auto* u = std::get_if<market::UniformX0>(&problem.x0))
      half_width = 0.5 * (u->hi - u->lo);
    else
      half_width = center * problem.model.sigma_ln * std::sqrt(problem.grid.maturity - problem.grid.t0);
    s.x_scaler = nn::Prescaler::uniform(d, center, half_width);
    const double half_t = 0.5 * (problem.grid.maturity - problem.grid.t0);
    s.t_scaler = nn::Prescaler::uniform(1, problem.grid.t0 + half_t, half_t);
    s.pi_scale = center;

    std::uint64_t net_index = 0;
    auto next_seed = [&] { return CounterRng::stream(config.seed, 0x4e4554, net_index++); };

    const int n = problem.grid.n_steps;
    if (s.strategy.kind == StrategyKind::SharedNet) {
      s.pi_nets.emplace_back(nn::add_mlp(s.params, nn::MlpSpec::standard(d + 1, d, d), "pi", next_seed()));
    } else {
      s.pi_nets.resize(n);
      for (int i = 0; i < n; ++i) {
        if (i == 0 && s.strategy.initial_pi_parameter) {
          s.pi0_entry = s.params.add("pi0", d, 1);
          continue;
        }
        s.pi_nets[i] = nn::add_mlp(s.params, nn::MlpSpec::standard(d, d, d), "pi" + std::to_string(i), next_seed());
      }
    }
    if (s.strategy.kind == StrategyKind::SharedNet && s.strategy.initial_pi_parameter)
      s.pi0_entry = s.params.add("pi0", d, 1);

    const auto kind = config.variant.kind;
    if (kind == VariantKind::ForwardFixed || kind == VariantKind::BackwardLearnedY0)
      s.y0_entry = s.params.add("y0", 1, 1);
    if (config.variant.has_yinit()) {
      s.yinit = nn::add_mlp(s.params, nn::MlpSpec::standard(d, d, 1), "yinit", next_seed());
      s.y_scalers[0] = nn::Prescaler::uniform(1, 0.0, 1.0);
    }
    if (kind == VariantKind::BackwardYinitNetwork) {
      for (int i : config.variant.intermediate_times) {
        s.ylearned[i] = nn::add_mlp(s.params, nn::MlpSpec::standard(d, d, 1), "ylearned" + std::to_string(i),
                                    next_seed());
        s.y_scalers[i] = nn::Prescaler::uniform(1, 0.0, 1.0);
      }
    }
    return s;
  }

  /// Network input at time index `step` for spots x (dim x batch).
  Matrix strategy_input(int step, const Matrix& x) const {
    const Matrix xs = x_scaler.apply(x);
    if (strategy.kind == StrategyKind::PerStepNets) return xs;
    Matrix in(dim + 1, x.cols());
    in.row(0) = t_scaler.apply(Matrix::Constant(1, 1, grid.time(step)))(0, 0) * Eigen::RowVectorXd::Ones(x.cols());
    in.bottomRows(dim) = xs;
    return in;
  }

  bool uses_pi0_parameter(int step) const { return step == 0 && pi0_entry.has_value(); }

  const nn::MlpHandle& pi_net(int step) const {
    const auto& h = strategy.kind == StrategyKind::SharedNet ? pi_nets.at(0) : pi_nets.at(step);
    if (!h) throw InvalidSpec("no strategy network for step " + std::to_string(step));
    return *h;
  }

  /// Value of risky holdings pi (dim x batch) at time index `step`.
  nn::Var pi(nn::Tape& tape, int step, const Matrix& x) const {
    if (uses_pi0_parameter(step))
      return tape.scale(tape.broadcast(tape.param(params, *pi0_entry), x.cols()), pi_scale);
    const nn::Var in = tape.constant(strategy_input(step, x));
    return tape.scale(nn::forward_mlp(tape, params, pi_net(step), in), pi_scale);
  }

  Matrix pi_values(int step, const Matrix& x) const {
    if (uses_pi0_parameter(step)) return params.view(*pi0_entry).replicate(1, x.cols()) * pi_scale;
    return nn::forward_mlp(params, pi_net(step), strategy_input(step, x)) * pi_scale;
  }

  bool has_value_network(int index) const { return index == 0 ? yinit.has_value() : ylearned.contains(index); }

  const nn::MlpHandle& value_net(int index) const {
    if (index == 0) {
      if (!yinit) throw InvalidSpec("state has no Yinit network");
      return *yinit;
    }
    auto it = ylearned.find(index);
    if (it == ylearned.end()) throw InvalidSpec("no Ylearned network at index " + std::to_string(index));
    return it->second;
  }

  /// Yinit (index 0) or Ylearned_i evaluated on x (dim x batch) -> (1 x batch).
  nn::Var value_network(nn::Tape& tape, int index, const Matrix& x) const {
    const auto& sc = y_scalers.at(index);
    const nn::Var out = nn::forward_mlp(tape, params, value_net(index), tape.constant(x_scaler.apply(x)));
    const nn::Var scaled = tape.scale(out, sc.scale(0));
    return tape.add(scaled, tape.constant(Matrix::Constant(1, x.cols(), sc.shift(0))));
  }

  Matrix value_network_values(int index, const Matrix& x) const {
    return y_scalers.at(index).invert(nn::forward_mlp(params, value_net(index), x_scaler.apply(x)));
  }

  double y0_parameter() const {
    if (!y0_entry) throw InvalidSpec("state has no Y0 parameter");
    return params.view(*y0_entry)(0, 0);
  }
};

}  // namespace dbsde::solver
