#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <variant>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/market/model.hpp"
#include "dbsde/rng.hpp"

namespace dbsde::market {

struct FixedX0 {
  double value = 100.0;
};

struct UniformX0 {
  double lo = 50.0;
  double hi = 150.0;
};

using X0Sampler = std::variant<FixedX0, UniformX0>;

inline bool is_fixed(const X0Sampler& s) { return std::holds_alternative<FixedX0>(s); }

inline void validate(const X0Sampler& s) {
  if (const auto* u = std::get_if<UniformX0>(&s))
    if (!(u->lo < u->hi)) throw InvalidSpec("uniform X0 sampler requires lo < hi");
}

/// Representative level and half-width of the initial distribution.
inline double x0_center(const X0Sampler& s) {
  if (const auto* f = std::get_if<FixedX0>(&s)) return f->value;
  const auto& u = std::get<UniformX0>(s);
  return 0.5 * (u.lo + u.hi);
}

/// Simulated paths of one mini-batch. x[i] and dw[i] are (dim x batch);
/// x has n_steps + 1 entries, dw has n_steps.
struct PathBatch {
  int batch = 0;
  int dim = 0;
  int n_steps = 0;
  std::uint64_t seed = 0;
  std::uint64_t batch_index = 0;
  std::vector<Eigen::MatrixXd> x;
  std::vector<Eigen::MatrixXd> dw;
};

namespace detail {
inline constexpr std::uint64_t kPathDomain = 0x50415448;  // Brownian increments
inline constexpr std::uint64_t kX0Domain = 0x58305830;    // initial spots
}  // namespace detail

/// Euler-Maruyama paths. Each draw is keyed by (seed, batch_index, path,
/// step, asset), so the result does not depend on evaluation order.
inline PathBatch simulate_path_batch(const GbmModel& model, const TimeGrid& grid, const X0Sampler& sampler,
                                     int batch, std::uint64_t seed, std::uint64_t batch_index = 0) {
  model.validate();
  grid.validate();
  validate(sampler);
  if (batch <= 0) throw InvalidSpec("simulate_path_batch: batch must be positive");

  const CounterRng rng(seed);
  const int d = model.dim;
  const double dt = grid.dt();
  const double sqdt = std::sqrt(dt);
  PathBatch p{batch, d, grid.n_steps, seed, batch_index, {}, {}};
  p.x.assign(grid.n_steps + 1, Eigen::MatrixXd(d, batch));
  p.dw.assign(grid.n_steps, Eigen::MatrixXd(d, batch));

  for (int b = 0; b < batch; ++b) {
    const auto x0_stream = CounterRng::stream(detail::kX0Domain, batch_index, b);
    for (int j = 0; j < d; ++j) {
      if (const auto* f = std::get_if<FixedX0>(&sampler)) {
        p.x[0](j, b) = f->value;
      } else {
        const auto& u = std::get<UniformX0>(sampler);
        p.x[0](j, b) = u.lo + (u.hi - u.lo) * rng.uniform(x0_stream, j);
      }
    }
    // Normal number k = step * dim + asset; drawn two at a time.
    const auto w_stream = CounterRng::stream(detail::kPathDomain, batch_index, b);
    const std::uint64_t total = static_cast<std::uint64_t>(grid.n_steps) * d;
    for (std::uint64_t k = 0; k < total; k += 2) {
      const auto [z0, z1] = rng.normal_pair(w_stream, k / 2);
      p.dw[k / d](k % d, b) = sqdt * z0;
      if (k + 1 < total) p.dw[(k + 1) / d]((k + 1) % d, b) = sqdt * z1;
    }
    for (int i = 0; i < grid.n_steps; ++i)
      for (int j = 0; j < d; ++j) p.x[i + 1](j, b) = gbm_step(p.x[i](j, b), model, dt, p.dw[i](j, b));
  }
  return p;
}

}  // namespace dbsde::market
