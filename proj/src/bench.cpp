#include "l2calib/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "l2calib/errors.hpp"
#include "l2calib/parallel.hpp"
#include "l2calib/rng.hpp"

namespace l2calib {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double toy1d_lambda(double x) { return std::exp(x / 2.0) * std::sin(x / 2.0) + 30.0; }

double toy1d_f(double x, double th) {
  return toy1d_lambda(x) -
         5.0 * std::sqrt(th * th - th + 1.0) * (std::sin(th * x) + std::cos(th * x));
}

double toy3d_lambda(double x) { return 3.0 * x + 3.0 * x * std::sin(5.0 * x) + 3.0; }

struct ReplicateOutcome {
  bool ok = false;
  std::vector<Eigen::VectorXd> thetas;  // one per method
  std::vector<Interval> intervals;      // filled by coverage studies
};

// Kernel smoothing settings shared by the replication studies: joint
// (rho, kappa) CV for moderate n, the rate schedule alone for large n.
KernelFit fit_lambda_for_study(const TimeSeries& ts) {
  MaternParams kernel;
  if (ts.n > 1000) {
    kernel.rho = 0.1;
    return fit_kpr(ts, kernel, default_kappa_grid(ts.n, kernel.nu, 1)[0]);
  }
  auto grid = default_kappa_grid(ts.n, kernel.nu);
  auto [params, kappa] = select_kernel_cv(ts, {0.05, 0.1, 0.2, 0.4}, grid, 5);
  return fit_kpr(ts, params, kappa);
}

}  // namespace

Study study_from_name(const std::string& name) {
  if (name == "toy-1d" || name == "TOY_1D") return Study::Toy1D;
  if (name == "toy-3d" || name == "TOY_3D") return Study::Toy3D;
  if (name == "mle-inconsistency" || name == "MLE_INCONSISTENCY")
    return Study::MleInconsistency;
  throw ArgumentError("unknown study '" + name + "'");
}

std::string study_name(Study s) {
  switch (s) {
    case Study::Toy1D: return "toy-1d";
    case Study::Toy3D: return "toy-3d";
    case Study::MleInconsistency: return "mle-inconsistency";
  }
  return "?";
}

ToyProblem make_toy(Study s) {
  ToyProblem toy;
  switch (s) {
    case Study::Toy1D: {
      toy.x_lo = 0.0;
      toy.x_hi = 2.0 * M_PI;
      toy.bounds.lo = Eigen::VectorXd::Constant(1, -1.0);
      toy.bounds.hi = Eigen::VectorXd::Constant(1, 1.0);
      toy.lambda = toy1d_lambda;
      toy.simulator.eval = [](const Eigen::VectorXd& xs, const Eigen::VectorXd& th,
                              Eigen::VectorXd& out) {
        for (int i = 0; i < xs.size(); ++i) out[i] = toy1d_f(xs[i], th[0]);
      };
      toy.equispaced_includes_endpoints = true;
      break;
    }
    case Study::Toy3D: {
      toy.x_lo = 0.0;
      toy.x_hi = 2.0;
      toy.bounds.lo = Eigen::VectorXd::Constant(3, 0.0);
      toy.bounds.hi = Eigen::VectorXd::Constant(3, 5.0);
      toy.lambda = toy3d_lambda;
      toy.simulator.eval = [](const Eigen::VectorXd& xs, const Eigen::VectorXd& th,
                              Eigen::VectorXd& out) {
        for (int i = 0; i < xs.size(); ++i)
          out[i] = th[0] + th[1] * xs[i] + th[2] * xs[i] * xs[i];
      };
      toy.equispaced_includes_endpoints = true;
      break;
    }
    case Study::MleInconsistency: {
      toy.x_lo = 0.0;
      toy.x_hi = 1.0;
      toy.bounds.lo = Eigen::VectorXd::Constant(1, 0.05);
      toy.bounds.hi = Eigen::VectorXd::Constant(1, 3.0);
      toy.lambda = [](double x) { return x * x; };
      toy.simulator.eval = [](const Eigen::VectorXd& xs, const Eigen::VectorXd& th,
                              Eigen::VectorXd& out) {
        for (int i = 0; i < xs.size(); ++i) out[i] = th[0] * xs[i];
      };
      // Midpoints keep f(x, theta) strictly positive at every site.
      toy.equispaced_includes_endpoints = false;
      break;
    }
  }
  return toy;
}

void study_design(const ToyProblem& toy, int n, Eigen::VectorXd& x_unit,
                  Eigen::VectorXd& x_domain) {
  x_unit.resize(n);
  x_domain.resize(n);
  for (int i = 0; i < n; ++i) {
    double u = toy.equispaced_includes_endpoints
                   ? (n == 1 ? 0.0 : static_cast<double>(i) / (n - 1))
                   : (i + 0.5) / n;
    x_unit[i] = u;
    x_domain[i] = toy.x_lo + u * (toy.x_hi - toy.x_lo);
  }
}

std::pair<Design, Eigen::MatrixXd> toy_computer_experiment(const ToyProblem& toy, int m,
                                                           int a, std::uint64_t seed) {
  const int q = toy.bounds.dim();
  Design design;
  design.unit_points = lhd(m, 1 + q, seed);
  design.lo.resize(1 + q);
  design.hi.resize(1 + q);
  design.lo[0] = toy.x_lo;
  design.hi[0] = toy.x_hi;
  design.lo.tail(q) = toy.bounds.lo;
  design.hi.tail(q) = toy.bounds.hi;
  design.replicates = a;

  Eigen::MatrixXd outputs(m, a);
  Rng rng(Rng::derive(seed, 0x0u));
  Eigen::VectorXd xs(1), fv(1);
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd p = design.to_original(design.unit_points.row(i).transpose());
    xs[0] = p[0];
    toy.simulator.eval(xs, p.tail(q), fv);
    for (int r = 0; r < a; ++r)
      outputs(i, r) = static_cast<double>(rng.poisson(std::max(fv[0], 0.0)));
  }
  return {design, outputs};
}

StudyResult run_mse_study(const StudyConfig& cfg) {
  if (cfg.replicates < 1) throw ArgumentError("replicates must be >= 1");
  const auto t0 = Clock::now();
  ToyProblem toy = make_toy(cfg.study);
  const int q = toy.bounds.dim();

  Eigen::VectorXd theta_star = true_theta_oracle(
      toy.lambda, toy.simulator, toy.bounds, toy.x_lo, toy.x_hi, 20000, 12345);

  Eigen::VectorXd x_unit, x_domain;
  study_design(toy, cfg.n, x_unit, x_domain);

  Quadrature quad = Quadrature::uniform(toy.x_lo, toy.x_hi);
  std::unique_ptr<Emulator> emu;
  std::shared_ptr<const EmulatorGridEval> emu_nodes;
  if (cfg.with_emulator) {
    auto [design, outputs] =
        toy_computer_experiment(toy, cfg.emulator.m, cfg.emulator.a,
                                Rng::derive(cfg.seed, 0xE0u));
    emu = std::make_unique<Emulator>(
        fit_emulator(design, outputs, Rng::derive(cfg.seed, 0xE1u)));
    emu_nodes = std::make_shared<EmulatorGridEval>(*emu, quad.nodes);
  }

  std::vector<std::string> methods = {"l2", "ls", "mle"};
  if (cfg.with_emulator) {
    methods.push_back("l2_emulated");
    methods.push_back("ls_emulated");
    methods.push_back("mle_emulated");
  }
  const int M = static_cast<int>(methods.size());

  std::vector<ReplicateOutcome> outcomes(cfg.replicates);
  parallel_for(
      cfg.replicates,
      [&](int rep) {
        Rng rng(Rng::derive(cfg.seed, rep));
        TimeSeries ts;
        ts.n = cfg.n;
        ts.x.assign(x_unit.data(), x_unit.data() + cfg.n);
        ts.y.resize(cfg.n);
        for (int i = 0; i < cfg.n; ++i)
          ts.y[i] = static_cast<double>(rng.poisson(toy.lambda(x_domain[i])));
        try {
          KernelFit lam = fit_lambda_for_study(ts);
          CalibProblem prob;
          prob.data = ts;
          prob.x_lo = toy.x_lo;
          prob.x_hi = toy.x_hi;
          prob.lambda_hat = &lam;
          prob.simulator = toy.simulator;
          prob.bounds = toy.bounds;
          prob.quadrature = quad;
          prob.optimizer.starts = cfg.optimizer_starts;
          prob.optimizer.seed = Rng::derive(cfg.seed, 0x51u + rep);
          prob.prepare();

          ReplicateOutcome out;
          out.thetas.resize(M);
          out.thetas[0] = fit_l2(prob).theta;
          out.thetas[1] = fit_ls(prob).theta;
          out.thetas[2] = fit_mle(prob).theta;
          if (cfg.with_emulator) {
            CalibProblem eprob = prob;
            eprob.emulator = emu.get();
            eprob.emu_nodes = emu_nodes;
            eprob.prepare();
            out.thetas[3] = fit_l2_emulated(eprob).theta;
            out.thetas[4] = fit_ls(eprob).theta;
            out.thetas[5] = fit_mle(eprob).theta;
          }
          out.ok = true;
          outcomes[rep] = std::move(out);
        } catch (const Error&) {
          outcomes[rep].ok = false;
        }
      },
      cfg.threads);

  int failed = 0;
  for (const auto& o : outcomes)
    if (!o.ok) ++failed;
  if (failed * 10 > cfg.replicates)
    throw StudyError("more than 10% of replicates failed (" + std::to_string(failed) +
                     "/" + std::to_string(cfg.replicates) + ")");

  StudyResult res;
  res.theta_star = theta_star;
  res.replicates = cfg.replicates - failed;
  for (int mi = 0; mi < M; ++mi) {
    MethodResult mr;
    mr.method = methods[mi];
    mr.mse = Eigen::VectorXd::Zero(q);
    mr.mean_theta = Eigen::VectorXd::Zero(q);
    mr.failures = failed;
    for (const auto& o : outcomes) {
      if (!o.ok) continue;
      Eigen::VectorXd d = o.thetas[mi] - theta_star;
      mr.mse += d.cwiseProduct(d);
      mr.mean_theta += o.thetas[mi];
    }
    mr.mse /= std::max(res.replicates, 1);
    mr.mean_theta /= std::max(res.replicates, 1);
    res.methods.push_back(std::move(mr));
  }
  res.wall_seconds = seconds_since(t0);
  return res;
}

CoverageResult run_coverage_study(const StudyConfig& cfg) {
  const ToyProblem toy = make_toy(cfg.study);
  if (toy.bounds.dim() != 1)
    throw ArgumentError("coverage study is defined for the 1-d toy");
  Eigen::VectorXd theta_star = true_theta_oracle(
      toy.lambda, toy.simulator, toy.bounds, toy.x_lo, toy.x_hi, 20000, 12345);

  Eigen::VectorXd x_unit, x_domain;
  study_design(toy, cfg.n, x_unit, x_domain);

  std::unique_ptr<Emulator> emu;
  if (cfg.with_emulator) {
    auto [design, outputs] =
        toy_computer_experiment(toy, cfg.emulator.m, cfg.emulator.a,
                                Rng::derive(cfg.seed, 0xE0u));
    emu = std::make_unique<Emulator>(
        fit_emulator(design, outputs, Rng::derive(cfg.seed, 0xE1u)));
  }

  std::vector<ReplicateOutcome> outcomes(cfg.replicates);
  parallel_for(
      cfg.replicates,
      [&](int rep) {
        Rng rng(Rng::derive(cfg.seed, rep));
        TimeSeries ts;
        ts.n = cfg.n;
        ts.x.assign(x_unit.data(), x_unit.data() + cfg.n);
        ts.y.resize(cfg.n);
        for (int i = 0; i < cfg.n; ++i)
          ts.y[i] = static_cast<double>(rng.poisson(toy.lambda(x_domain[i])));
        try {
          KernelFit lam = fit_lambda_for_study(ts);
          GofReport gof = deviance_gof(lam, ts);
          CalibProblem prob;
          prob.data = ts;
          prob.x_lo = toy.x_lo;
          prob.x_hi = toy.x_hi;
          prob.lambda_hat = &lam;
          prob.simulator = toy.simulator;
          prob.bounds = toy.bounds;
          prob.optimizer.starts = cfg.optimizer_starts;
          prob.optimizer.seed = Rng::derive(cfg.seed, 0x51u + rep);
          if (cfg.with_emulator) prob.emulator = emu.get();
          prob.prepare();

          SandwichCov cov;
          Eigen::VectorXd theta;
          if (cfg.with_emulator) {
            theta = fit_l2_emulated(prob).theta;
            cov = sandwich_l2_emulated(prob.lambda_at_nodes, *emu, theta,
                                       prob.quadrature, cfg.n, gof.phi_hat);
          } else {
            theta = fit_l2(prob).theta;
            cov = sandwich_l2(prob.lambda_at_nodes, prob.simulator, theta,
                              gof.phi_hat, prob.quadrature, cfg.n);
          }
          double sd = std::sqrt(std::max(cov.cov(0, 0), 0.0));
          Interval iv;
          iv.estimate = theta[0];
          iv.lower = theta[0] - 1.959963984540054 * sd;
          iv.upper = theta[0] + 1.959963984540054 * sd;
          iv.level = 0.95;
          outcomes[rep].intervals.push_back(iv);
          outcomes[rep].ok = true;
        } catch (const Error&) {
          outcomes[rep].ok = false;
        }
      },
      cfg.threads);

  int failed = 0;
  std::vector<Interval> intervals;
  for (const auto& o : outcomes) {
    if (o.ok)
      intervals.push_back(o.intervals[0]);
    else
      ++failed;
  }
  if (failed * 10 > cfg.replicates)
    throw StudyError("more than 10% of replicates failed");

  CoverageResult res;
  res.replicates = static_cast<int>(intervals.size());
  res.covered = count_coverage(intervals, theta_star[0]);
  res.emulated = cfg.with_emulator;
  return res;
}

int count_coverage(const std::vector<Interval>& intervals, double target) {
  int c = 0;
  for (const auto& iv : intervals)
    if (iv.lower <= target && target <= iv.upper) ++c;
  return c;
}

std::vector<RmspeRow> run_rmspe_table(Study toy_id,
                                      const std::vector<std::pair<int, int>>& settings,
                                      std::uint64_t seed) {
  if (settings.empty()) throw ArgumentError("no (m, a) settings");
  ToyProblem toy = make_toy(toy_id);
  const int q = toy.bounds.dim();

  // Held-out evaluation set against the noise-free simulator.
  const int ntest = 10000;
  Rng rng(Rng::derive(seed, 0x7e57u));
  Eigen::MatrixXd test(ntest, 1 + q);
  Eigen::VectorXd truth(ntest);
  Eigen::VectorXd xs(1), fv(1);
  for (int i = 0; i < ntest; ++i) {
    test(i, 0) = rng.uniform(toy.x_lo, toy.x_hi);
    for (int d = 0; d < q; ++d)
      test(i, 1 + d) = rng.uniform(toy.bounds.lo[d], toy.bounds.hi[d]);
    xs[0] = test(i, 0);
    toy.simulator.eval(xs, test.row(i).tail(q).transpose(), fv);
    truth[i] = fv[0];
  }

  std::vector<RmspeRow> rows;
  for (auto [m, a] : settings) {
    RmspeRow row;
    row.m = m;
    row.a = a;
    auto [design, outputs] = toy_computer_experiment(toy, m, a, Rng::derive(seed, m * 131 + a));
    auto t0 = Clock::now();
    Emulator emu = fit_emulator(design, outputs, Rng::derive(seed, m * 17 + a));
    row.fit_seconds = seconds_since(t0);
    t0 = Clock::now();
    row.rmspe = rmspe(emu, test, truth);
    row.predict_seconds = seconds_since(t0);
    rows.push_back(row);
  }
  return rows;
}

std::string study_result_csv(const StudyResult& r) {
  std::string out = "method,coordinate,mse,mean_theta\n";
  for (const auto& m : r.methods) {
    for (int j = 0; j < m.mse.size(); ++j) {
      out += m.method + "," + std::to_string(j) + "," + std::to_string(m.mse[j]) +
             "," + std::to_string(m.mean_theta[j]) + "\n";
    }
  }
  return out;
}

nlohmann::json study_result_to_json(const StudyResult& r) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : r.methods) {
    methods.push_back(
        {{"method", m.method},
         {"mse", std::vector<double>(m.mse.data(), m.mse.data() + m.mse.size())},
         {"mean_theta", std::vector<double>(m.mean_theta.data(),
                                            m.mean_theta.data() + m.mean_theta.size())},
         {"failures", m.failures}});
  }
  return nlohmann::json{
      {"methods", methods},
      {"theta_star", std::vector<double>(r.theta_star.data(),
                                         r.theta_star.data() + r.theta_star.size())},
      {"replicates", r.replicates},
      {"wall_seconds", r.wall_seconds}};
}

std::string rmspe_table_csv(const std::vector<RmspeRow>& rows) {
  std::string out = "m,a,rmspe,fit_seconds,predict_seconds\n";
  for (const auto& r : rows) {
    out += std::to_string(r.m) + "," + std::to_string(r.a) + "," +
           std::to_string(r.rmspe) + "," + std::to_string(r.fit_seconds) + "," +
           std::to_string(r.predict_seconds) + "\n";
  }
  return out;
}

}  // namespace l2calib
