#pragma once

#include "dbsde/market/model.hpp"
#include "dbsde/market/paths.hpp"
#include "dbsde/market/step.hpp"

namespace dbsde::solver {

/// A complete pricing instance: dynamics, rates, payoff, time grid,
/// generator form and the distribution of the initial spot.
struct FbsdeProblem {
  market::GbmModel model;
  market::RatesSpec rates;
  market::Payoff payoff;
  market::TimeGrid grid;
  market::GeneratorForm form = market::GeneratorForm::DriftAdjusted;
  market::X0Sampler x0 = market::FixedX0{};

  market::StepContext step_context() const { return {model, rates, form, grid.dt()}; }

  void validate() const {
    model.validate();
    rates.validate();
    grid.validate();
    market::validate(x0);
    step_context().validate();
  }

  FbsdeProblem negated() const {
    FbsdeProblem p = *this;
    p.payoff = payoff.negated();
    return p;
  }
};

}  // namespace dbsde::solver
