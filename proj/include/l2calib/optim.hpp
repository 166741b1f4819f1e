#pragma once

#include <cstdint>
#include <functional>

#include <Eigen/Dense>

namespace l2calib {

struct Bounds {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  int dim() const { return static_cast<int>(lo.size()); }
  Eigen::VectorXd clip(const Eigen::VectorXd& theta) const {
    return theta.cwiseMax(lo).cwiseMin(hi);
  }
  bool contains(const Eigen::VectorXd& theta) const {
    return (theta.array() >= lo.array()).all() && (theta.array() <= hi.array()).all();
  }
};

struct OptimizerConfig {
  int starts = 10;
  int max_evals_per_start = 0;  // 0: 250 * dim
  double tol = 1e-8;            // simplex size in box-scaled coordinates
  std::uint64_t seed = 0;
};

struct OptimResult {
  Eigen::VectorXd theta;
  double value = 0.0;
  int n_evals = 0;
  bool boundary_contact = false;
};

/// Box-constrained Nelder-Mead, restarted from a Latin hypercube over
/// the box; proposals outside the box are clipped back in. Returns the
/// best of all starts. Deterministic given the config seed.
OptimResult nelder_mead_multistart(const std::function<double(const Eigen::VectorXd&)>& fn,
                                   const Bounds& bounds, const OptimizerConfig& cfg);

}  // namespace l2calib
