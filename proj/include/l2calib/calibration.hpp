#pragma once

#include <functional>
#include <memory>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "l2calib/emulator.hpp"
#include "l2calib/kernel_poisson.hpp"
#include "l2calib/optim.hpp"
#include "l2calib/timeseries.hpp"

namespace l2calib {

/// Simulator contract: fill out[j] = f(xs[j], theta) for a whole grid
/// at once, so models with shared state per theta (ODE solves) pay one
/// solve per parameter vector.
struct Simulator {
  std::function<void(const Eigen::VectorXd& xs, const Eigen::VectorXd& theta,
                     Eigen::VectorXd& out)>
      eval;

  double operator()(double x, const Eigen::VectorXd& theta) const {
    Eigen::VectorXd xs(1), out(1);
    xs[0] = x;
    eval(xs, theta, out);
    return out[0];
  }
  Eigen::VectorXd on_grid(const Eigen::VectorXd& xs, const Eigen::VectorXd& theta) const {
    Eigen::VectorXd out(xs.size());
    eval(xs, theta, out);
    return out;
  }
};

/// Equally spaced quadrature on [lo, hi]; weights sum to hi - lo.
struct Quadrature {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  static Quadrature uniform(double lo, double hi, int k = 1024);
  double measure() const { return weights.sum(); }
};

struct CalibProblem {
  TimeSeries data;                       // x normalized to [0, 1]
  double x_lo = 0.0, x_hi = 1.0;         // original domain of the simulator
  const KernelFit* lambda_hat = nullptr; // required by the L2 routes
  Simulator simulator;                   // direct simulator, if any
  const Emulator* emulator = nullptr;    // emulated route, if any
  Bounds bounds;
  Quadrature quadrature;                 // nodes in original domain units
  OptimizerConfig optimizer;

  Eigen::VectorXd lambda_at_nodes;       // cached lambda_hat on the quadrature
  Eigen::VectorXd data_x_domain;         // data sites in original units
  std::shared_ptr<const EmulatorGridEval> emu_nodes;  // emulator on the quadrature

  /// Fills the caches; call after the fields above are set.
  void prepare();
};

struct FitResult {
  Eigen::VectorXd theta;
  double criterion = 0.0;
  int n_evals = 0;
  bool boundary_contact = false;
  std::uint64_t seed = 0;
  std::string method;
};

/// L2 projection criterion: sum_j w_j (lambda_hat(z_j) - f(z_j, theta))^2,
/// or with an emulator sum_j w_j [(lambda_hat - m_N)^2 + v_N^2].
double l2_criterion(const CalibProblem& problem, const Eigen::VectorXd& theta);

FitResult fit_l2(const CalibProblem& problem);
FitResult fit_l2_emulated(const CalibProblem& problem);

/// Least squares on the data sites; the emulated variant adds the
/// emulator variance at each site.
FitResult fit_ls(const CalibProblem& problem);

/// Poisson maximum likelihood on the data sites; with an emulator the
/// mean surface m_N stands in for f. Any theta producing a
/// non-positive intensity at a data site scores +infinity.
FitResult fit_mle(const CalibProblem& problem);

/// Test oracle: minimizes || lambda - f(., theta) ||_{L2} for an
/// analytically known lambda by dense quadrature plus multistart polish.
Eigen::VectorXd true_theta_oracle(const std::function<double(double)>& lambda,
                                  const Simulator& simulator, const Bounds& bounds,
                                  double x_lo, double x_hi, int grid_density = 20000,
                                  std::uint64_t seed = 0);

nlohmann::json fit_result_to_json(const FitResult& r);

}  // namespace l2calib
