#pragma once

#include <Eigen/Dense>

#include "dbsde/error.hpp"

namespace dbsde::nn {

/// Fixed affine input map x -> (x - shift) / scale, applied row-wise to
/// (features x batch) matrices.
struct Prescaler {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;

  Prescaler() = default;
  Prescaler(Eigen::VectorXd shift_, Eigen::VectorXd scale_)
      : shift(std::move(shift_)), scale(std::move(scale_)) {
    if (shift.size() != scale.size()) throw InvalidSpec("prescaler: shift/scale size mismatch");
    if (!(scale.array() > 0.0).all()) throw InvalidSpec("prescaler: scale must be strictly positive");
  }

  static Prescaler uniform(Eigen::Index dim, double shift, double scale) {
    return Prescaler(Eigen::VectorXd::Constant(dim, shift), Eigen::VectorXd::Constant(dim, scale));
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    check(x.rows());
    return ((x.colwise() - shift).array().colwise() / scale.array()).matrix();
  }

  Eigen::MatrixXd invert(const Eigen::MatrixXd& z) const {
    check(z.rows());
    return (z.array().colwise() * scale.array()).matrix().colwise() + shift;
  }

 private:
  void check(Eigen::Index rows) const {
    if (rows != shift.size()) throw InvalidSpec("prescaler: dimension mismatch");
  }
};

inline Eigen::MatrixXd prescale(const Eigen::MatrixXd& x, const Prescaler& p) { return p.apply(x); }

}  // namespace dbsde::nn
