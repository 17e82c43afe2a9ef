#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/nn/adam.hpp"
#include "dbsde/solver/problem.hpp"

namespace dbsde::solver {

enum class BackstepMethod { Exact, Taylor };

enum class VariantKind {
  ForwardFixed,           ///< Y0 and pi_0 learned as parameters, loss on Y_T - g(X_T)
  ForwardRandom,          ///< Y0 = Yinit(X0) network, loss on Y_T - g(X_T)
  BackwardBatchVariance,  ///< rolled-back Y0 spread around its batch mean
  BackwardLearnedY0,      ///< rolled-back Y0 against a learned scalar
  BackwardYinitNetwork,   ///< rolled-back Y0 against Yinit(X0), optional Ylearned_i(X_i)
};

enum class MeanEstimate { LastBatchMean, RollingMean };

struct SolverVariant {
  VariantKind kind = VariantKind::BackwardLearnedY0;
  MeanEstimate estimate = MeanEstimate::LastBatchMean;  ///< BackwardBatchVariance only
  int rolling_window = 100;
  std::vector<int> intermediate_times;  ///< BackwardYinitNetwork only

  static SolverVariant forward_fixed() { return {VariantKind::ForwardFixed}; }
  static SolverVariant forward_random() { return {VariantKind::ForwardRandom}; }
  static SolverVariant batch_variance(MeanEstimate e = MeanEstimate::LastBatchMean, int window = 100) {
    return {VariantKind::BackwardBatchVariance, e, window, {}};
  }
  static SolverVariant learned_y0() { return {VariantKind::BackwardLearnedY0}; }
  static SolverVariant yinit_network(std::vector<int> intermediate = {}) {
    return {VariantKind::BackwardYinitNetwork, MeanEstimate::LastBatchMean, 100, std::move(intermediate)};
  }

  bool is_forward() const { return kind == VariantKind::ForwardFixed || kind == VariantKind::ForwardRandom; }
  bool requires_fixed_x0() const {
    return kind == VariantKind::ForwardFixed || kind == VariantKind::BackwardBatchVariance ||
           kind == VariantKind::BackwardLearnedY0;
  }
  bool has_yinit() const { return kind == VariantKind::ForwardRandom || kind == VariantKind::BackwardYinitNetwork; }

  std::string name() const {
    switch (kind) {
      case VariantKind::ForwardFixed: return "forward_fixed";
      case VariantKind::ForwardRandom: return "forward_random";
      case VariantKind::BackwardBatchVariance:
        return estimate == MeanEstimate::LastBatchMean ? "batch_variance_last"
                                                       : "batch_variance_rolling" + std::to_string(rolling_window);
      case VariantKind::BackwardLearnedY0: return "learned_y0";
      case VariantKind::BackwardYinitNetwork: return "yinit_network";
    }
    return "unknown";
  }
};

enum class StrategyKind {
  SharedNet,    ///< one network of (t, x)
  PerStepNets,  ///< one network of x per time index
};

struct StrategyModel {
  StrategyKind kind = StrategyKind::PerStepNets;
  bool initial_pi_parameter = false;  ///< pi_0 as a raw vector (fixed X0 only)

  /// Batch variance shares one network across time; the other variants use
  /// separate networks, and the fixed-X0 forward method learns pi_0 directly.
  static StrategyModel default_for(const SolverVariant& v) {
    switch (v.kind) {
      case VariantKind::BackwardBatchVariance: return {StrategyKind::SharedNet, false};
      case VariantKind::ForwardFixed: return {StrategyKind::PerStepNets, true};
      default: return {StrategyKind::PerStepNets, false};
    }
  }
};

struct SolverConfig {
  SolverVariant variant;
  BackstepMethod backstep = BackstepMethod::Exact;
  std::optional<StrategyModel> strategy;  ///< defaults per variant
  int batch_size = 256;
  int n_batches = 20000;
  nn::AdamSettings optimizer;
  std::uint64_t seed = 1;
  int range_window = 2000;               ///< trailing window of the reported min/max
  std::optional<double> reference_x0;    ///< where Yinit is read out; defaults to the X0 centre

  StrategyModel strategy_model() const { return strategy.value_or(StrategyModel::default_for(variant)); }

  void validate(const FbsdeProblem& problem) const {
    problem.validate();
    const bool fixed = market::is_fixed(problem.x0);
    if (variant.requires_fixed_x0() && !fixed)
      throw InvalidSpec(variant.name() + " requires a fixed initial spot");
    if (!variant.requires_fixed_x0() && fixed)
      throw InvalidSpec(variant.name() + " requires a distributional initial spot");
    if (strategy_model().initial_pi_parameter && !fixed)
      throw InvalidSpec("initial pi parameter requires a fixed initial spot");
    if (batch_size < 1) throw InvalidSpec("batch_size must be positive");
    if (variant.kind == VariantKind::BackwardBatchVariance && batch_size < 2)
      throw InvalidSpec("batch variance loss requires batch_size >= 2");
    if (n_batches < 0) throw InvalidSpec("n_batches must be non-negative");
    if (range_window < 1) throw InvalidSpec("range_window must be positive");
    if (variant.rolling_window < 1) throw InvalidSpec("rolling window must be positive");
    for (int i : variant.intermediate_times)
      if (i <= 0 || i >= problem.grid.n_steps)
        throw InvalidSpec("intermediate time index must lie strictly inside the grid");
    if (!(optimizer.learning_rate > 0.0)) throw InvalidSpec("learning rate must be positive");
  }
};

inline std::string to_string(BackstepMethod m) { return m == BackstepMethod::Exact ? "exact" : "taylor"; }

}  // namespace dbsde::solver
