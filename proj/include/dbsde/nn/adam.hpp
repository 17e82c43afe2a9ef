#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/nn/param_store.hpp"

namespace dbsde::nn {

struct AdamSettings {
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamSettings&, const AdamSettings&) = default;
};

struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  AdamSettings settings;

  static AdamState for_store(const ParamStore& store, AdamSettings settings = {}) {
    return AdamState{0, std::vector<double>(store.size(), 0.0), std::vector<double>(store.size(), 0.0),
                     settings};
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam step, in place. A non-finite gradient leaves both
/// the parameters and the state untouched.
inline void adam_update(ParamStore& store, std::span<const double> grad, AdamState& state) {
  const std::size_t n = store.size();
  if (grad.size() != n || state.first_moment.size() != n || state.second_moment.size() != n)
    throw InvalidSpec("adam_update: gradient or moments not congruent with parameters");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(grad[i]))
      throw NumericalError("adam_update: non-finite gradient at parameter " + std::to_string(i));

  const auto& s = state.settings;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  auto p = store.values();
  for (std::size_t i = 0; i < n; ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = s.beta1 * m + (1.0 - s.beta1) * grad[i];
    v = s.beta2 * v + (1.0 - s.beta2) * grad[i] * grad[i];
    p[i] -= s.learning_rate * (m / c1) / (std::sqrt(v / c2) + s.epsilon);
  }
}

}  // namespace dbsde::nn
