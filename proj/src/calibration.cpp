#include "l2calib/calibration.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include <nlohmann/json.hpp>

#include "l2calib/errors.hpp"

namespace l2calib {

namespace {

void check_theta(const CalibProblem& p, const Eigen::VectorXd& theta) {
  if (theta.size() != p.bounds.dim())
    throw ArgumentError("theta dimension mismatch");
  if (!p.bounds.contains(theta)) throw ArgumentError("theta outside bounds");
}

Eigen::VectorXd simulate_nodes(const CalibProblem& p, const Eigen::VectorXd& theta) {
  Eigen::VectorXd f(p.quadrature.nodes.size());
  p.simulator.eval(p.quadrature.nodes, theta, f);
  for (int j = 0; j < f.size(); ++j) {
    if (!std::isfinite(f[j]))
      throw CriterionError("simulator failed at node " + std::to_string(j) +
                           " (x = " + std::to_string(p.quadrature.nodes[j]) + ")");
  }
  return f;
}

FitResult run_fit(const CalibProblem& p,
                  const std::function<double(const Eigen::VectorXd&)>& objective,
                  const std::string& method) {
  OptimResult r = nelder_mead_multistart(objective, p.bounds, p.optimizer);
  FitResult out;
  out.theta = r.theta;
  out.criterion = r.value;
  out.n_evals = r.n_evals;
  out.boundary_contact = r.boundary_contact;
  out.seed = p.optimizer.seed;
  out.method = method;
  return out;
}

}  // namespace

Quadrature Quadrature::uniform(double lo, double hi, int k) {
  if (!(hi > lo) || k < 1) throw ArgumentError("bad quadrature domain");
  Quadrature q;
  q.nodes.resize(k);
  q.weights = Eigen::VectorXd::Constant(k, (hi - lo) / k);
  for (int j = 0; j < k; ++j) q.nodes[j] = lo + (j + 0.5) * (hi - lo) / k;
  return q;
}

void CalibProblem::prepare() {
  if (quadrature.nodes.size() == 0)
    quadrature = Quadrature::uniform(x_lo, x_hi);
  if (lambda_hat != nullptr) {
    const double span = x_hi - x_lo;
    Eigen::VectorXd unit = (quadrature.nodes.array() - x_lo) / span;
    lambda_at_nodes = predict_lambda(*lambda_hat, unit);
  }
  if (data.n > 0) {
    data_x_domain.resize(data.n);
    for (int i = 0; i < data.n; ++i)
      data_x_domain[i] = x_lo + data.x[i] * (x_hi - x_lo);
  }
  if (emulator != nullptr && !emu_nodes)
    emu_nodes = std::make_shared<EmulatorGridEval>(*emulator, quadrature.nodes);
}

double l2_criterion(const CalibProblem& p, const Eigen::VectorXd& theta) {
  check_theta(p, theta);
  if (p.lambda_at_nodes.size() != p.quadrature.nodes.size())
    throw ArgumentError("problem not prepared or lambda_hat missing");
  if (p.emulator != nullptr) {
    if (!p.emu_nodes) throw ArgumentError("problem not prepared");
    Eigen::VectorXd m, v;
    p.emu_nodes->eval(theta, m, v);
    return (p.quadrature.weights.array() *
            ((p.lambda_at_nodes - m).array().square() + v.array()))
        .sum();
  }
  Eigen::VectorXd f = simulate_nodes(p, theta);
  return (p.quadrature.weights.array() *
          (p.lambda_at_nodes - f).array().square())
      .sum();
}

FitResult fit_l2(const CalibProblem& p) {
  if (p.lambda_hat == nullptr) throw ArgumentError("fit_l2 needs lambda_hat");
  if (p.emulator != nullptr)
    throw ArgumentError("use fit_l2_emulated for emulated problems");
  return run_fit(p, [&](const Eigen::VectorXd& th) { return l2_criterion(p, th); },
                 "l2");
}

FitResult fit_l2_emulated(const CalibProblem& p) {
  if (p.lambda_hat == nullptr) throw ArgumentError("fit_l2_emulated needs lambda_hat");
  if (p.emulator == nullptr) throw ArgumentError("fit_l2_emulated needs an emulator");
  return run_fit(p, [&](const Eigen::VectorXd& th) { return l2_criterion(p, th); },
                 "l2_emulated");
}

FitResult fit_ls(const CalibProblem& p) {
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(p.data.y.data(), p.data.n);
  if (p.emulator != nullptr) {
    EmulatorGridEval ev(*p.emulator, p.data_x_domain);
    return run_fit(
        p,
        [&](const Eigen::VectorXd& th) {
          Eigen::VectorXd m, v;
          ev.eval(th, m, v);
          return ((y - m).array().square() + v.array()).sum();
        },
        "ls_emulated");
  }
  return run_fit(
      p,
      [&](const Eigen::VectorXd& th) {
        Eigen::VectorXd f = p.simulator.on_grid(p.data_x_domain, th);
        if (!f.allFinite()) return std::numeric_limits<double>::infinity();
        return (y - f).squaredNorm();
      },
      "ls");
}

FitResult fit_mle(const CalibProblem& p) {
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(p.data.y.data(), p.data.n);
  auto loglik = [&](const Eigen::VectorXd& f) {
    if (!f.allFinite() || (f.array() <= 0.0).any())
      return -std::numeric_limits<double>::infinity();
    return (y.array() * f.array().log() - f.array()).sum();
  };
  if (p.emulator != nullptr) {
    EmulatorGridEval ev(*p.emulator, p.data_x_domain);
    return run_fit(
        p,
        [&](const Eigen::VectorXd& th) {
          Eigen::VectorXd m, v;
          ev.eval(th, m, v);
          return -loglik(m);
        },
        "mle_emulated");
  }
  return run_fit(
      p,
      [&](const Eigen::VectorXd& th) {
        return -loglik(p.simulator.on_grid(p.data_x_domain, th));
      },
      "mle");
}

Eigen::VectorXd true_theta_oracle(const std::function<double(double)>& lambda,
                                  const Simulator& simulator, const Bounds& bounds,
                                  double x_lo, double x_hi, int grid_density,
                                  std::uint64_t seed) {
  Quadrature q = Quadrature::uniform(x_lo, x_hi, std::max(grid_density, 10000));
  Eigen::VectorXd lam(q.nodes.size());
  for (int j = 0; j < q.nodes.size(); ++j) lam[j] = lambda(q.nodes[j]);

  auto crit = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd f(q.nodes.size());
    simulator.eval(q.nodes, th, f);
    if (!f.allFinite()) return std::numeric_limits<double>::infinity();
    return (q.weights.array() * (lam - f).array().square()).sum();
  };

  OptimizerConfig cfg;
  cfg.starts = 20;
  cfg.max_evals_per_start = 400 * bounds.dim();
  cfg.tol = 1e-10;
  cfg.seed = seed;
  OptimResult r = nelder_mead_multistart(crit, bounds, cfg);

  // Local polish around the winner with a tight simplex.
  OptimizerConfig polish;
  polish.starts = 1;
  polish.max_evals_per_start = 400 * bounds.dim();
  polish.tol = 1e-12;
  polish.seed = seed + 1;
  Bounds local;
  Eigen::VectorXd pad = 0.02 * (bounds.hi - bounds.lo);
  local.lo = (r.theta - pad).cwiseMax(bounds.lo);
  local.hi = (r.theta + pad).cwiseMin(bounds.hi);
  OptimResult r2 = nelder_mead_multistart(crit, local, polish);
  return r2.value < r.value ? r2.theta : r.theta;
}

nlohmann::json fit_result_to_json(const FitResult& r) {
  return nlohmann::json{
      {"method", r.method},
      {"theta_hat", std::vector<double>(r.theta.data(), r.theta.data() + r.theta.size())},
      {"criterion", r.criterion},
      {"n_evals", r.n_evals},
      {"boundary_contact", r.boundary_contact},
      {"seed", r.seed}};
}

}  // namespace l2calib
