#include "l2calib/kernel_poisson.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/special_functions/gamma.hpp>
#include <nlohmann/json.hpp>

#include "l2calib/errors.hpp"

namespace l2calib {

namespace {

constexpr double kXiClamp = 40.0;  // keeps exp(xi) finite during iteration

double scaled_distance(double x, double x2, const MaternParams& p) {
  return 2.0 * std::sqrt(p.nu) * std::abs(x - x2) / p.rho;
}

Eigen::MatrixXd gram(const Eigen::VectorXd& x, const MaternParams& p) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd K(n, n);
  for (int i = 0; i < n; ++i) {
    K(i, i) = 1.0;
    for (int j = 0; j < i; ++j) {
      K(i, j) = K(j, i) = matern(x[i], x[j], p);
    }
  }
  return K;
}

Eigen::MatrixXd cross_gram(const Eigen::VectorXd& xs, const Eigen::VectorXd& xt,
                           const MaternParams& p) {
  Eigen::MatrixXd K(xs.size(), xt.size());
  for (int i = 0; i < xs.size(); ++i)
    for (int j = 0; j < xt.size(); ++j) K(i, j) = matern(xs[i], xt[j], p);
  return K;
}

void validate(const MaternParams& p) {
  if (!(p.nu >= 1.0)) throw ArgumentError("matern nu must be >= 1");
  if (!(p.rho > 0.0)) throw ArgumentError("matern rho must be > 0");
}

struct IrlsState {
  double b;
  Eigen::VectorXd a;  // coefficients in whatever basis the solver uses
};

// Penalized objective in the representer basis: xi_i = b + (B a)_i where
// B is the Gram (dense path) or its low-rank factor, and the penalty is
// a' P a with P = Gram (dense) or identity (low-rank factor basis).
class PenalizedProblem {
 public:
  PenalizedProblem(Eigen::MatrixXd basis, Eigen::MatrixXd penalty,
                   const Eigen::VectorXd& y, double kappa)
      : B_(std::move(basis)), P_(std::move(penalty)), y_(y), kappa_(kappa) {}

  double objective(double b, const Eigen::VectorXd& a) const {
    Eigen::VectorXd xi = (B_ * a).array() + b;
    xi = xi.cwiseMax(-kXiClamp).cwiseMin(kXiClamp);
    const double n = static_cast<double>(y_.size());
    double fit = (xi.array().exp() - y_.array() * xi.array()).sum() / n;
    return fit + kappa_ * a.dot(P_ * a);
  }

  // One IRLS / Newton solve for (b, a) given current weights.
  IrlsState solve_step(double b, const Eigen::VectorXd& a, double jitter) const {
    const int n = static_cast<int>(y_.size());
    const int r = static_cast<int>(B_.cols());
    Eigen::VectorXd xi = (B_ * a).array() + b;
    xi = xi.cwiseMax(-kXiClamp).cwiseMin(kXiClamp);
    Eigen::VectorXd w = xi.array().exp();
    Eigen::VectorXd eta = xi.array() + (y_.array() - w.array()) / w.array();

    // A = B1' W B1 + 2 n kappa P0, with B1 = [1 B], P0 = blkdiag(0, P).
    Eigen::MatrixXd A(r + 1, r + 1);
    Eigen::VectorXd rhs(r + 1);
    const Eigen::MatrixXd WB = w.asDiagonal() * B_;
    A(0, 0) = w.sum();
    A.block(0, 1, 1, r) = WB.colwise().sum();
    A.block(1, 0, r, 1) = A.block(0, 1, 1, r).transpose();
    A.block(1, 1, r, r) = B_.transpose() * WB;
    A.block(1, 1, r, r).noalias() += (2.0 * n * kappa_) * P_;
    rhs(0) = w.dot(eta);
    rhs.tail(r) = B_.transpose() * (w.asDiagonal() * eta);

    A.diagonal().array() += jitter * A.diagonal().mean();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("penalized system is singular after jitter");
    Eigen::VectorXd beta = ldlt.solve(rhs);
    return {beta(0), beta.tail(r)};
  }

  // Model degrees of freedom: trace of the weighted smoother
  // B1 (B1' W B1 + 2 n kappa P0)^{-1} B1' W at the fitted weights.
  double model_edf(double b, const Eigen::VectorXd& a, double jitter) const {
    const int n = static_cast<int>(y_.size());
    const int r = static_cast<int>(B_.cols());
    Eigen::VectorXd xi = (B_ * a).array() + b;
    xi = xi.cwiseMax(-kXiClamp).cwiseMin(kXiClamp);
    Eigen::VectorXd w = xi.array().exp();

    Eigen::MatrixXd B1(n, r + 1);
    B1.col(0).setOnes();
    B1.rightCols(r) = B_;
    Eigen::MatrixXd BtWB = B1.transpose() * (w.asDiagonal() * B1);
    Eigen::MatrixXd A = BtWB;
    A.block(1, 1, r, r).noalias() += (2.0 * n * kappa_) * P_;
    A.diagonal().array() += jitter * A.diagonal().mean();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("edf system is singular");
    // trace(A^{-1} BtWB)
    Eigen::MatrixXd T = ldlt.solve(BtWB);
    double tr = T.trace();
    return std::clamp(tr, 1e-12, static_cast<double>(n));
  }

  const Eigen::MatrixXd& basis() const { return B_; }

 private:
  Eigen::MatrixXd B_;
  Eigen::MatrixXd P_;
  const Eigen::VectorXd& y_;
  double kappa_;
};

struct IrlsOutcome {
  double b;
  Eigen::VectorXd a;
  bool converged;
  int iterations;
  double edf;
};

IrlsOutcome run_irls(const PenalizedProblem& prob, const Eigen::VectorXd& y) {
  constexpr int kMaxIter = 100;
  constexpr int kMaxHalvings = 20;
  constexpr double kRelTol = 1e-8;
  constexpr double kJitter = 1e-8;

  double b = std::log(std::max(y.mean(), 0.5));
  Eigen::VectorXd a = Eigen::VectorXd::Zero(prob.basis().cols());
  double cur = prob.objective(b, a);
  bool converged = false;
  int iter = 0;
  for (; iter < kMaxIter; ++iter) {
    IrlsState full = prob.solve_step(b, a, kJitter);
    double step = 1.0;
    bool accepted = false;
    double cand_obj = cur;
    double cand_b = b;
    Eigen::VectorXd cand_a = a;
    for (int h = 0; h <= kMaxHalvings; ++h) {
      cand_b = b + step * (full.b - b);
      cand_a = a + step * (full.a - a);
      cand_obj = prob.objective(cand_b, cand_a);
      if (std::isfinite(cand_obj) && cand_obj <= cur + 1e-12 * std::abs(cur)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    double rel = std::abs(cur - cand_obj) / std::max(std::abs(cur), 1e-300);
    b = cand_b;
    a = std::move(cand_a);
    cur = cand_obj;
    if (rel <= kRelTol) {
      converged = true;
      ++iter;
      break;
    }
  }
  double edf = prob.model_edf(b, a, kJitter);
  return {b, std::move(a), converged, iter, edf};
}

// Pivoted Cholesky of the Gram matrix: Phi ~= Q Q' with Q = Psi_P L^{-T}.
// Returns Q and the pivot index set. Used above kDenseLimit points.
constexpr int kDenseLimit = 1200;

struct PivotedChol {
  Eigen::MatrixXd Q;          // n x r
  std::vector<int> pivots;    // size r
  Eigen::MatrixXd Lpp;        // r x r lower factor of Phi[P, P]
};

PivotedChol pivoted_cholesky(const Eigen::VectorXd& x, const MaternParams& p,
                             double rel_tol, int max_rank) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd diag = Eigen::VectorXd::Ones(n);  // Phi(x, x) = 1
  double trace0 = diag.sum();
  PivotedChol out;
  Eigen::MatrixXd Lcols(n, std::min(max_rank, n));
  std::vector<int> pivots;
  int r = 0;
  while (r < std::min(max_rank, n)) {
    int best = 0;
    double bestv = diag[0];
    for (int i = 1; i < n; ++i)
      if (diag[i] > bestv) {
        bestv = diag[i];
        best = i;
      }
    if (bestv <= rel_tol * trace0 / n || bestv <= 0.0) break;
    pivots.push_back(best);
    double piv = std::sqrt(bestv);
    Eigen::VectorXd col(n);
    for (int i = 0; i < n; ++i) col[i] = matern(x[i], x[best], p);
    if (r > 0)
      col.noalias() -= Lcols.leftCols(r) * Lcols.row(best).head(r).transpose();
    col /= piv;
    Lcols.col(r) = col;
    diag.array() -= col.array().square();
    diag = diag.cwiseMax(0.0);
    ++r;
    if (diag.sum() <= rel_tol * trace0) break;
  }
  out.Q = Lcols.leftCols(r);
  out.pivots = std::move(pivots);
  // Lower-triangular factor of the pivot block, used to map reduced
  // coefficients back onto kernel sections at the pivot points.
  Eigen::MatrixXd Lpp(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) Lpp(i, j) = out.Q(out.pivots[i], j);
  out.Lpp = std::move(Lpp);
  return out;
}

double poisson_holdout_loglik(const KernelFit& fit, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& y) {
  Eigen::VectorXd lam = predict_lambda(fit, x);
  return (y.array() * lam.array().log() - lam.array()).sum();
}

}  // namespace

double matern_bessel(double x, double x2, const MaternParams& p) {
  validate(p);
  double t = scaled_distance(x, x2, p);
  if (t < 1e-12) return 1.0;
  double logc = (1.0 - p.nu) * std::log(2.0) - std::lgamma(p.nu);
  return std::exp(logc + p.nu * std::log(t)) * std::cyl_bessel_k(p.nu, t);
}

double matern(double x, double x2, const MaternParams& p) {
  validate(p);
  double t = scaled_distance(x, x2, p);
  if (t <= 0.0) return 1.0;
  if (p.nu == 1.5) return (1.0 + t) * std::exp(-t);
  if (p.nu == 2.5) return (1.0 + t + t * t / 3.0) * std::exp(-t);
  return matern_bessel(x, x2, p);
}

KernelFit fit_kpr(const TimeSeries& data, const MaternParams& kernel, double kappa_n) {
  validate(kernel);
  if (!(kappa_n > 0.0)) throw ArgumentError("kappa_n must be > 0");
  const int n = data.n;
  if (n < 2) throw ArgumentError("need at least 2 observations");
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(data.x.data(), n);
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(data.y.data(), n);

  KernelFit fit;
  fit.x_train = x;
  fit.kernel = kernel;
  fit.kappa_n = kappa_n;

  if (n <= kDenseLimit) {
    Eigen::MatrixXd Phi = gram(x, kernel);
    PenalizedProblem prob(Phi, Phi, y, kappa_n);
    IrlsOutcome out = run_irls(prob, y);
    fit.b = out.b;
    fit.a = out.a;
    fit.converged = out.converged;
    fit.iterations = out.iterations;
    fit.edf = out.edf;
  } else {
    // Large n: solve in the numerically exact low-rank column space of
    // the Gram matrix. Coefficients land on the pivot points, zero
    // elsewhere, representing the same fitted function.
    PivotedChol pc = pivoted_cholesky(x, kernel, 1e-10, 600);
    const int r = static_cast<int>(pc.Q.cols());
    PenalizedProblem prob(pc.Q, Eigen::MatrixXd::Identity(r, r), y, kappa_n);
    IrlsOutcome out = run_irls(prob, y);
    Eigen::VectorXd c =
        pc.Lpp.transpose().triangularView<Eigen::Upper>().solve(out.a);
    fit.a = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < r; ++j) fit.a[pc.pivots[j]] = c[j];
    fit.b = out.b;
    fit.converged = out.converged;
    fit.iterations = out.iterations;
    fit.edf = out.edf;
  }
  return fit;
}

double predict_lambda(const KernelFit& fit, double x) {
  double xi = fit.b;
  for (int i = 0; i < fit.x_train.size(); ++i) {
    if (fit.a[i] != 0.0) xi += fit.a[i] * matern(fit.x_train[i], x, fit.kernel);
  }
  return std::exp(std::clamp(xi, -kXiClamp, kXiClamp));
}

Eigen::VectorXd predict_lambda(const KernelFit& fit, const Eigen::VectorXd& xs) {
  // Skip zero coefficients; the low-rank path leaves most of them zero.
  std::vector<int> active;
  for (int i = 0; i < fit.a.size(); ++i)
    if (fit.a[i] != 0.0) active.push_back(i);
  Eigen::VectorXd out(xs.size());
  for (int j = 0; j < xs.size(); ++j) {
    double xi = fit.b;
    for (int i : active) xi += fit.a[i] * matern(fit.x_train[i], xs[j], fit.kernel);
    out[j] = std::exp(std::clamp(xi, -kXiClamp, kXiClamp));
  }
  return out;
}

std::vector<double> default_kappa_grid(int n, double nu, int size, double decades) {
  double m = nu + 0.5;
  double center = std::pow(static_cast<double>(n), -2.0 * m / (2.0 * m + 1.0));
  std::vector<double> grid(size);
  for (int i = 0; i < size; ++i) {
    double e = size == 1 ? 0.0 : -decades + 2.0 * decades * i / (size - 1);
    grid[i] = center * std::pow(10.0, e);
  }
  return grid;
}

double select_kappa_cv(const TimeSeries& data, const MaternParams& kernel,
                       const std::vector<double>& grid, int folds) {
  if (grid.empty()) throw ArgumentError("empty kappa grid");
  if (folds < 2) throw ArgumentError("folds must be >= 2");
  auto [params, kappa] = select_kernel_cv(data, {kernel.rho}, grid, folds);
  (void)params;
  return kappa;
}

std::pair<MaternParams, double> select_kernel_cv(const TimeSeries& data,
                                                 const std::vector<double>& rho_grid,
                                                 const std::vector<double>& kappa_grid,
                                                 int folds) {
  if (rho_grid.empty() || kappa_grid.empty()) throw ArgumentError("empty CV grid");
  if (folds < 2) throw ArgumentError("folds must be >= 2");
  const int n = data.n;
  folds = std::min(folds, n);

  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(data.x.data(), n);
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(data.y.data(), n);

  bool any = false;
  double best_score = -std::numeric_limits<double>::infinity();
  MaternParams best_params;
  double best_kappa = 0.0;

  for (double rho : rho_grid) {
    MaternParams p{2.5, rho};
    for (double kappa : kappa_grid) {
      double score = 0.0;
      bool ok = true;
      for (int f = 0; f < folds && ok; ++f) {
        std::vector<double> xtr, ytr, xte, yte;
        for (int i = 0; i < n; ++i) {
          if (i % folds == f) {
            xte.push_back(x[i]);
            yte.push_back(y[i]);
          } else {
            xtr.push_back(x[i]);
            ytr.push_back(y[i]);
          }
        }
        if (xtr.size() < 2 || xte.empty()) continue;
        TimeSeries tr;
        tr.x = xtr;
        tr.y = ytr;
        tr.n = static_cast<int>(xtr.size());
        try {
          KernelFit fit = fit_kpr(tr, p, kappa);
          Eigen::VectorXd xe = Eigen::Map<const Eigen::VectorXd>(xte.data(), xte.size());
          Eigen::VectorXd ye = Eigen::Map<const Eigen::VectorXd>(yte.data(), yte.size());
          score += poisson_holdout_loglik(fit, xe, ye);
        } catch (const Error&) {
          ok = false;
        }
      }
      if (!ok || !std::isfinite(score)) continue;
      // Ties break toward more smoothing.
      if (!any || score > best_score + 1e-12 * std::abs(best_score) ||
          (std::abs(score - best_score) <= 1e-12 * std::abs(best_score) &&
           kappa > best_kappa)) {
        any = true;
        best_score = score;
        best_params = p;
        best_kappa = kappa;
      }
    }
  }
  if (!any) throw NumericalError("all CV candidates failed");
  return {best_params, best_kappa};
}

GofReport deviance_gof(const KernelFit& fit, const TimeSeries& data) {
  const int n = data.n;
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(data.x.data(), n);
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(data.y.data(), n);
  Eigen::VectorXd lam = predict_lambda(fit, x);

  double D = 0.0;
  for (int i = 0; i < n; ++i) {
    double term = y[i] > 0.0 ? y[i] * std::log(y[i] / lam[i]) : 0.0;
    D += 2.0 * (term - (y[i] - lam[i]));
  }
  D = std::max(D, 0.0);

  GofReport rep;
  rep.deviance = D;
  rep.edf = static_cast<double>(n) - fit.edf;
  if (rep.edf <= 0.0) {
    if (D <= 1e-9) {
      rep.edf = 0.0;
      rep.p_value = 1.0;
      rep.phi_hat = 0.0;
      return rep;
    }
    throw NumericalError("non-positive residual degrees of freedom");
  }
  // Chi-square with fractional dof via the regularized incomplete gamma.
  rep.p_value = D <= 0.0 ? 1.0 : boost::math::gamma_q(rep.edf / 2.0, D / 2.0);
  rep.phi_hat = D / rep.edf;
  return rep;
}

nlohmann::json kernel_fit_to_json(const KernelFit& fit) {
  return nlohmann::json{
      {"b", fit.b},
      {"a", std::vector<double>(fit.a.data(), fit.a.data() + fit.a.size())},
      {"x_train", std::vector<double>(fit.x_train.data(),
                                      fit.x_train.data() + fit.x_train.size())},
      {"nu", fit.kernel.nu},
      {"rho", fit.kernel.rho},
      {"kappa_n", fit.kappa_n},
      {"edf", fit.edf},
      {"converged", fit.converged},
      {"iterations", fit.iterations}};
}

KernelFit kernel_fit_from_json(const nlohmann::json& j) {
  KernelFit fit;
  fit.b = j.at("b").get<double>();
  auto a = j.at("a").get<std::vector<double>>();
  auto xt = j.at("x_train").get<std::vector<double>>();
  if (a.size() != xt.size()) throw FormatError("a/x_train length mismatch");
  fit.a = Eigen::Map<const Eigen::VectorXd>(a.data(), a.size());
  fit.x_train = Eigen::Map<const Eigen::VectorXd>(xt.data(), xt.size());
  fit.kernel.nu = j.at("nu").get<double>();
  fit.kernel.rho = j.at("rho").get<double>();
  fit.kappa_n = j.at("kappa_n").get<double>();
  fit.edf = j.at("edf").get<double>();
  fit.converged = j.value("converged", true);
  fit.iterations = j.value("iterations", 0);
  return fit;
}

}  // namespace l2calib
