#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "l2calib/timeseries.hpp"

namespace l2calib {

/// Matern kernel parameters in the two-sqrt-nu-over-rho scaling, so
/// Phi(x, x') = 2^{1-nu}/Gamma(nu) * t^nu K_nu(t) with t = 2 sqrt(nu) |x-x'| / rho.
struct MaternParams {
  double nu = 2.5;
  double rho = 0.2;
};

/// Matern correlation between two points. Closed forms for nu = 3/2 and
/// 5/2, general Bessel expression otherwise. Phi(x, x) = 1.
double matern(double x, double x2, const MaternParams& p);

/// General Bessel-function route, exposed so the half-integer closed
/// forms can be cross-checked against it.
double matern_bessel(double x, double x2, const MaternParams& p);

/// Fitted penalized kernel Poisson regression on the log scale:
/// log lambda(x) = b + sum_i a_i Phi(x_i, x).
struct KernelFit {
  double b = 0.0;
  Eigen::VectorXd a;
  Eigen::VectorXd x_train;
  MaternParams kernel;
  double kappa_n = 0.0;
  double edf = 0.0;       // trace of the weighted smoother matrix
  bool converged = false;
  int iterations = 0;
};

/// Penalized IRLS fit. The penalized negative log-likelihood
///   (1/n) sum_i (exp(xi_i) - y_i xi_i) + kappa_n a' Phi a
/// is non-increasing across accepted iterations; step halving enforces
/// monotonicity when a full Newton step overshoots.
KernelFit fit_kpr(const TimeSeries& data, const MaternParams& kernel, double kappa_n);

double predict_lambda(const KernelFit& fit, double x);
Eigen::VectorXd predict_lambda(const KernelFit& fit, const Eigen::VectorXd& xs);

/// Penalty grid log-spaced around the rate-optimal schedule
/// n^{-2m/(2m+1)} with m = nu + 1/2.
std::vector<double> default_kappa_grid(int n, double nu, int size = 7, double decades = 2.0);

/// K-fold cross-validation on held-out Poisson log-likelihood. Ties
/// break toward the larger (smoother) kappa.
double select_kappa_cv(const TimeSeries& data, const MaternParams& kernel,
                       const std::vector<double>& grid, int folds);

/// Joint (rho, kappa) selection over a small grid; same CV score.
std::pair<MaternParams, double> select_kernel_cv(const TimeSeries& data,
                                                 const std::vector<double>& rho_grid,
                                                 const std::vector<double>& kappa_grid,
                                                 int folds);

/// Deviance goodness-of-fit report. `edf` here is the chi-square
/// degrees of freedom of the deviance test, i.e. n minus the model
/// degrees of freedom carried by KernelFit::edf, and phi_hat = D / edf.
struct GofReport {
  double deviance = 0.0;
  double edf = 0.0;
  double p_value = 1.0;
  double phi_hat = 0.0;
};

GofReport deviance_gof(const KernelFit& fit, const TimeSeries& data);

nlohmann::json kernel_fit_to_json(const KernelFit& fit);
KernelFit kernel_fit_from_json(const nlohmann::json& j);

}  // namespace l2calib
