#pragma once

#include <functional>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "l2calib/calibration.hpp"

namespace l2calib {

struct SandwichCov {
  Eigen::MatrixXd V;    // Hessian-type matrix
  Eigen::MatrixXd W;    // score-variance-type matrix
  Eigen::MatrixXd cov;  // estimated covariance of the estimator (per-n scaled)
  std::string method;
};

struct GradHess {
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

/// Central finite differences in theta with steps
/// h_j = 1e-4 max(1, |theta_j|); the Hessian is symmetrized.
GradHess grad_hess_f(const Simulator& f, double x, const Eigen::VectorXd& theta);

/// Covariance of the L2 estimator (plug-in form of the asymptotic
/// sandwich): cov = 4 phi V0^{-1} W0 V0^{-1} / n with
///   V0 = mean_j d^2/dtheta^2 (lambda_hat - f)^2,
///   W0 = mean_j lambda_hat * df dfT,
/// expectations taken as quadrature means over the domain.
SandwichCov sandwich_l2(const Eigen::VectorXd& lambda_at_nodes, const Simulator& f,
                        const Eigen::VectorXd& theta_hat, double phi_hat,
                        const Quadrature& quad, int n);

/// Emulated counterpart with V1 including the Hessian of v_N^2 and W1
/// built from the mean-surface gradient. phi_hat defaults to 1 (apply
/// the overdispersion multiplier only when it was fitted).
SandwichCov sandwich_l2_emulated(const Eigen::VectorXd& lambda_at_nodes,
                                 const Emulator& emulator,
                                 const Eigen::VectorXd& theta_tilde,
                                 const Quadrature& quad, int n, double phi_hat = 1.0);

/// Least-squares covariance: W2 = W0 + mean[(lambda_hat - f)^2 df dfT].
/// The overdispersion multiplier on W0's lambda term is opt-in.
SandwichCov sandwich_ls(const Eigen::VectorXd& lambda_at_nodes, const Simulator& f,
                        const Eigen::VectorXd& theta_hat_ls, const Quadrature& quad,
                        int n, double phi_hat = 1.0);

/// MLE covariance V3^{-1} W3 V3^{-1} / n (no factor 4). Requires
/// f > 0 on every node.
SandwichCov sandwich_mle(const Eigen::VectorXd& lambda_at_nodes, const Simulator& f,
                         const Eigen::VectorXd& theta_hat_mle, const Quadrature& quad,
                         int n, double phi_hat = 1.0);

struct Interval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
};

/// Differentiable functional of theta for delta-method intervals. When
/// no analytic gradient is supplied, central differences are used.
struct DerivedQuantity {
  std::string name;
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;  // optional
};

/// Ratio theta_i / theta_j (basic reproduction number for SEIR).
DerivedQuantity ratio_quantity(const std::string& name, int i, int j);
/// 1 / theta_i (mean incubation period for SEIR).
DerivedQuantity reciprocal_quantity(const std::string& name, int i);

Interval delta_ci(const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& cov,
                  const DerivedQuantity& g, double level);

struct Band {
  Eigen::VectorXd x;
  Eigen::VectorXd fit;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double level = 0.95;
};

/// Pointwise delta-method band around f(x, theta_hat); `cov` is the
/// estimator covariance from the matching sandwich call.
Band predictive_band_det(const Simulator& f, const Eigen::VectorXd& theta_hat,
                         const Eigen::MatrixXd& cov, const Eigen::VectorXd& xgrid,
                         double level);

/// Stochastic-simulator band around m_N(x, theta): adds the emulator
/// variance v_N^2 to the parameter-uncertainty term pointwise.
Band predictive_band_stoch(const Emulator& emulator, const Eigen::VectorXd& theta,
                           const Eigen::MatrixXd& cov, const Eigen::VectorXd& xgrid,
                           double level);

nlohmann::json sandwich_to_json(const SandwichCov& s);
nlohmann::json interval_to_json(const Interval& iv);
void band_to_csv(const Band& band, const std::string& path);

}  // namespace l2calib
