#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/market/model.hpp"

namespace dbsde::pde {

/// Spatial nodes on [0, x_max] plus the number of time steps.
struct Grid1D {
  std::vector<double> nodes;
  int time_steps = 100;

  double x_max() const { return nodes.back(); }
  std::size_t size() const { return nodes.size(); }

  void validate() const {
    if (nodes.size() < 3) throw InvalidSpec("grid: need at least 3 nodes");
    if (nodes.front() != 0.0) throw InvalidSpec("grid: first node must be 0");
    for (std::size_t i = 1; i < nodes.size(); ++i)
      if (!(nodes[i] > nodes[i - 1])) throw InvalidSpec("grid: nodes must be strictly increasing");
    if (time_steps < 1) throw InvalidSpec("grid: need at least one time step");
  }

  static Grid1D uniform(int n_nodes, double x_max, int time_steps) {
    if (n_nodes < 3 || !(x_max > 0.0)) throw InvalidSpec("grid: bad uniform grid size");
    Grid1D g;
    g.time_steps = time_steps;
    g.nodes.resize(n_nodes);
    for (int i = 0; i < n_nodes; ++i) g.nodes[i] = x_max * i / (n_nodes - 1);
    g.nodes.back() = x_max;
    g.snap({});
    return g;
  }

  /// x = focus + c sinh(xi) with xi uniform on each side of the focus, so the
  /// focus is a node and spacing near it is about c times the xi step.
  static Grid1D stretched(int n_nodes, double x_max, double focus, double concentration, int time_steps) {
    if (n_nodes < 5 || !(x_max > focus) || !(focus > 0.0) || !(concentration > 0.0))
      throw InvalidSpec("grid: bad stretched grid parameters");
    const double a = std::asinh(-focus / concentration);
    const double b = std::asinh((x_max - focus) / concentration);
    // split the nodes between the two sides in proportion to their xi length
    const int intervals = n_nodes - 1;
    int left = static_cast<int>(std::lround(intervals * (-a) / (b - a)));
    left = std::clamp(left, 1, intervals - 1);
    const int right = intervals - left;

    Grid1D g;
    g.time_steps = time_steps;
    g.nodes.resize(n_nodes);
    for (int i = 0; i <= left; ++i) g.nodes[i] = focus + concentration * std::sinh(a * (left - i) / left);
    for (int i = 1; i <= right; ++i) g.nodes[left + i] = focus + concentration * std::sinh(b * i / right);
    g.nodes.front() = 0.0;
    g.nodes[left] = focus;
    g.nodes.back() = x_max;
    return g;
  }

  /// Moves the nearest interior node onto each point, when that keeps the
  /// nodes strictly increasing.
  void snap(const std::vector<double>& points) {
    for (double p : points) {
      if (!(p > 0.0) || !(p < x_max())) continue;
      const auto it = std::lower_bound(nodes.begin(), nodes.end(), p);
      std::size_t j = static_cast<std::size_t>(it - nodes.begin());
      if (j > 0 && p - nodes[j - 1] < nodes[j] - p) --j;
      if (nodes[j] == p || j == 0 || j + 1 == nodes.size()) continue;
      if (p > nodes[j - 1] && p < nodes[j + 1]) nodes[j] = p;
    }
  }
};

enum class PriceDirection { Upper, Lower };

struct HjbProblem {
  double sigma = 0.3;
  double r_l = 0.03;
  double r_b = 0.05;
  market::Payoff payoff = market::Payoff::straddle(100.0);
  double maturity = 1.0;
  PriceDirection direction = PriceDirection::Upper;

  void validate() const {
    if (!(sigma > 0.0)) throw InvalidSpec("hjb: sigma must be positive");
    if (r_b < r_l) throw InvalidSpec("hjb: r_b must be >= r_l");
    if (!(maturity > 0.0)) throw InvalidSpec("hjb: maturity must be positive");
  }
};

/// Default grid: x_max ten times the largest of strikes and `x_top`,
/// sinh-stretched around the first strike with width strike * sigma * sqrt(T),
/// remaining strikes and `x_top` snapped onto nodes.
inline Grid1D default_grid(const HjbProblem& problem, double x_top, int n_nodes = 101, int time_steps = 100,
                           std::vector<double> extra_nodes = {}) {
  const auto strikes = problem.payoff.strikes();
  double top = x_top;
  for (double k : strikes) top = std::max(top, k);
  const double focus = strikes.front();
  Grid1D g = Grid1D::stretched(n_nodes, 10.0 * top, focus, focus * problem.sigma * std::sqrt(problem.maturity),
                               time_steps);
  extra_nodes.insert(extra_nodes.end(), strikes.begin() + 1, strikes.end());
  g.snap(extra_nodes);
  return g;
}

/// u at every time level: values[m][i] is u(t_m, nodes[i]), t_0 = 0.
struct ValueSurface {
  std::vector<double> nodes;
  std::vector<double> times;
  std::vector<std::vector<double>> values;
  std::vector<int> sweeps;  ///< policy-iteration sweeps used per time step

  const std::vector<double>& initial() const { return values.front(); }
};

namespace detail {

// Thomas algorithm; lo[0] and up[n-1] are ignored.
inline std::vector<double> solve_tridiagonal(std::vector<double> lo, std::vector<double> di, std::vector<double> up,
                                             std::vector<double> rhs) {
  const std::size_t n = di.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = lo[i] / di[i - 1];
    di[i] -= m * up[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  std::vector<double> x(n);
  x[n - 1] = rhs[n - 1] / di[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) x[i] = (rhs[i] - up[i] * x[i + 1]) / di[i];
  return x;
}

// Discrete x u_x - u with the same one-sided treatment at the ends as the operator.
inline std::vector<double> hedge_gap(const std::vector<double>& x, const std::vector<double>& u) {
  const std::size_t n = x.size();
  std::vector<double> q(n);
  q[0] = -u[0];
  for (std::size_t i = 1; i + 1 < n; ++i) q[i] = x[i] * (u[i + 1] - u[i - 1]) / (x[i + 1] - x[i - 1]) - u[i];
  q[n - 1] = x[n - 1] * (u[n - 1] - u[n - 2]) / (x[n - 1] - x[n - 2]) - u[n - 1];
  return q;
}

struct Operator {
  std::vector<double> lo, di, up;
};

// I - dt L_r for the rate vector r: L_r u = 1/2 s^2 x^2 u_xx + r (x u_x - u).
// Central drift, switched to forward differencing where that would make a
// coefficient negative. u_xx = 0 at both ends.
inline Operator implicit_operator(const std::vector<double>& x, const std::vector<double>& r, double sigma, double dt) {
  const std::size_t n = x.size();
  Operator op{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  op.di[0] = 1.0 + dt * r[0];
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double hm = x[i] - x[i - 1];
    const double hp = x[i + 1] - x[i];
    const double a = sigma * sigma * x[i] * x[i];
    const double drift = r[i] * x[i];
    double alpha = a / (hm * (hm + hp)) - drift / (hm + hp);
    double beta = a / (hp * (hm + hp)) + drift / (hm + hp);
    if (alpha < 0.0) {
      alpha = a / (hm * (hm + hp));
      beta = a / (hp * (hm + hp)) + drift / hp;
    }
    op.lo[i] = -dt * alpha;
    op.up[i] = -dt * beta;
    op.di[i] = 1.0 + dt * (alpha + beta + r[i]);
  }
  const std::size_t e = n - 1;
  const double c = r[e] * x[e] / (x[e] - x[e - 1]);
  op.lo[e] = dt * c;
  op.di[e] = 1.0 - dt * c + dt * r[e];
  return op;
}

}  // namespace detail

/// Fully implicit backward stepping of
///   u_t + 1/2 s^2 x^2 u_xx + r_l (x u_x - u) + (r_b - r_l)(x u_x - u)^+ = 0,
/// with the rate chosen per node by policy iteration at every step.
/// The Lower direction solves for -g and negates.
inline ValueSurface solve_hjb_1d(const HjbProblem& problem, const Grid1D& grid) {
  problem.validate();
  grid.validate();
  const auto& x = grid.nodes;
  const std::size_t n = x.size();
  const int steps = grid.time_steps;
  const double dt = problem.maturity / steps;
  const double sign = problem.direction == PriceDirection::Upper ? 1.0 : -1.0;
  const market::Payoff g = sign > 0 ? problem.payoff : problem.payoff.negated();

  ValueSurface s;
  s.nodes = x;
  s.values.assign(steps + 1, std::vector<double>(n));
  s.sweeps.assign(steps, 0);
  for (int m = 0; m <= steps; ++m) s.times.push_back(problem.maturity * m / steps);

  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = market::eval_payoff(g, x[i]);
  s.values[steps] = u;

  constexpr int kMaxSweeps = 100;
  constexpr double kTolerance = 1e-10;
  for (int m = steps - 1; m >= 0; --m) {
    const std::vector<double> prev = u;
    const double scale = 1.0 + std::abs(*std::max_element(prev.begin(), prev.end(), [](double a, double b) {
                           return std::abs(a) < std::abs(b);
                         }));
    std::vector<double> rate(n);
    auto choose = [&](const std::vector<double>& v) {
      const auto q = detail::hedge_gap(x, v);
      for (std::size_t i = 0; i < n; ++i) rate[i] = q[i] > 0.0 ? problem.r_b : problem.r_l;
    };
    choose(prev);
    bool converged = false;
    for (int sweep = 1; sweep <= kMaxSweeps; ++sweep) {
      const auto op = detail::implicit_operator(x, rate, problem.sigma, dt);
      u = detail::solve_tridiagonal(op.lo, op.di, op.up, prev);
      choose(u);
      // residual of the nonlinear system at the new iterate and its own policy
      const auto op2 = detail::implicit_operator(x, rate, problem.sigma, dt);
      double res = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double a = op2.di[i] * u[i] - prev[i];
        if (i > 0) a += op2.lo[i] * u[i - 1];
        if (i + 1 < n) a += op2.up[i] * u[i + 1];
        res = std::max(res, std::abs(a));
      }
      if (res / scale < kTolerance) {
        s.sweeps[m] = sweep;
        converged = true;
        break;
      }
    }
    if (!converged)
      throw NumericalError("hjb: policy iteration did not converge within 100 sweeps at step " + std::to_string(m));
    s.values[m] = u;
  }

  if (sign < 0)
    for (auto& row : s.values)
      for (double& v : row) v = -v;
  return s;
}

/// Piecewise-linear interpolation of u(t_m, .) at x0; m = 0 by default.
inline double sample_value(const ValueSurface& surface, double x0, std::size_t time_index = 0) {
  const auto& x = surface.nodes;
  if (time_index >= surface.values.size()) throw InvalidSpec("sample_value: time index out of range");
  if (!(x0 >= x.front() && x0 <= x.back())) throw InvalidSpec("sample_value: x0 outside the grid");
  const auto& u = surface.values[time_index];
  auto it = std::upper_bound(x.begin(), x.end(), x0);
  if (it == x.end()) return u.back();
  const std::size_t j = static_cast<std::size_t>(it - x.begin());
  const double w = (x0 - x[j - 1]) / (x[j] - x[j - 1]);
  if (w == 0.0) return u[j - 1];
  return (1.0 - w) * u[j - 1] + w * u[j];
}

/// Slope of the interpolant at x0 (central difference at nodes).
inline double sample_delta(const ValueSurface& surface, double x0, std::size_t time_index = 0) {
  const auto& x = surface.nodes;
  if (!(x0 >= x.front() && x0 <= x.back())) throw InvalidSpec("sample_delta: x0 outside the grid");
  const auto& u = surface.values.at(time_index);
  auto it = std::lower_bound(x.begin(), x.end(), x0);
  std::size_t j = static_cast<std::size_t>(it - x.begin());
  if (*it == x0 && j > 0 && j + 1 < x.size()) return (u[j + 1] - u[j - 1]) / (x[j + 1] - x[j - 1]);
  if (j == 0) j = 1;
  return (u[j] - u[j - 1]) / (x[j] - x[j - 1]);
}

}  // namespace dbsde::pde
