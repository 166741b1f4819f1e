#include "l2calib/inference.hpp"

#include <cmath>
#include <fstream>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "l2calib/errors.hpp"

namespace l2calib {

namespace {

Eigen::VectorXd fd_steps(const Eigen::VectorXd& theta) {
  Eigen::VectorXd h(theta.size());
  for (int j = 0; j < theta.size(); ++j)
    h[j] = 1e-4 * std::max(1.0, std::abs(theta[j]));
  return h;
}

/// Gradients (G x q) and Hessians (q x q per node, stored stacked) of a
/// batch simulator over all quadrature nodes, by central differences.
struct NodeDerivs {
  Eigen::VectorXd f0;        // G
  Eigen::MatrixXd grad;      // G x q
  std::vector<Eigen::MatrixXd> hess;  // G of q x q
};

NodeDerivs node_derivs(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f_on_grid,
                       const Eigen::VectorXd& theta) {
  const int q = static_cast<int>(theta.size());
  Eigen::VectorXd h = fd_steps(theta);
  NodeDerivs nd;
  nd.f0 = f_on_grid(theta);
  const int G = static_cast<int>(nd.f0.size());
  nd.grad.resize(G, q);
  nd.hess.assign(G, Eigen::MatrixXd::Zero(q, q));

  std::vector<Eigen::VectorXd> fplus(q), fminus(q);
  for (int j = 0; j < q; ++j) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[j] += h[j];
    tm[j] -= h[j];
    fplus[j] = f_on_grid(tp);
    fminus[j] = f_on_grid(tm);
    nd.grad.col(j) = (fplus[j] - fminus[j]) / (2.0 * h[j]);
    Eigen::VectorXd d2 = (fplus[j] - 2.0 * nd.f0 + fminus[j]) / (h[j] * h[j]);
    for (int g = 0; g < G; ++g) nd.hess[g](j, j) = d2[g];
  }
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < i; ++j) {
      Eigen::VectorXd tpp = theta, tpm = theta, tmp = theta, tmm = theta;
      tpp[i] += h[i]; tpp[j] += h[j];
      tpm[i] += h[i]; tpm[j] -= h[j];
      tmp[i] -= h[i]; tmp[j] += h[j];
      tmm[i] -= h[i]; tmm[j] -= h[j];
      Eigen::VectorXd mixed = (f_on_grid(tpp) - f_on_grid(tpm) - f_on_grid(tmp) +
                               f_on_grid(tmm)) /
                              (4.0 * h[i] * h[j]);
      for (int g = 0; g < G; ++g) {
        nd.hess[g](i, j) = mixed[g];
        nd.hess[g](j, i) = mixed[g];
      }
    }
  }
  return nd;
}

Eigen::MatrixXd invert_spd_checked(const Eigen::MatrixXd& A, const char* what) {
  Eigen::MatrixXd S = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.info() != Eigen::Success) throw SingularError(std::string(what) + ": eigensolve failed");
  const auto& ev = es.eigenvalues();
  double maxabs = ev.cwiseAbs().maxCoeff();
  if (maxabs <= 0.0 || ev.cwiseAbs().minCoeff() <= 1e-10 * maxabs)
    throw SingularError(std::string(what) + " is numerically singular");
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

double normal_z(double level) {
  boost::math::normal dist;
  return boost::math::quantile(dist, 0.5 + level / 2.0);
}

SandwichCov l2_family_cov(const Eigen::VectorXd& lam, const NodeDerivs& nd,
                          const std::optional<std::vector<Eigen::MatrixXd>>& v2_hess,
                          double phi_hat, const Quadrature& quad, int n,
                          const std::string& method) {
  const int q = static_cast<int>(nd.grad.cols());
  const int G = static_cast<int>(nd.f0.size());
  const double wsum = quad.weights.sum();
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(q, q);
  for (int g = 0; g < G; ++g) {
    const double w = quad.weights[g] / wsum;
    Eigen::VectorXd gr = nd.grad.row(g).transpose();
    Eigen::MatrixXd outer = gr * gr.transpose();
    V += w * 2.0 * (outer - (lam[g] - nd.f0[g]) * nd.hess[g]);
    if (v2_hess) V += w * (*v2_hess)[g];
    W += w * lam[g] * outer;
  }
  SandwichCov out;
  out.V = V;
  out.W = W;
  Eigen::MatrixXd Vinv = invert_spd_checked(V, "V");
  out.cov = 4.0 * phi_hat * Vinv * W * Vinv / n;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  out.method = method;
  return out;
}

}  // namespace

GradHess grad_hess_f(const Simulator& f, double x, const Eigen::VectorXd& theta) {
  Eigen::VectorXd xs(1);
  xs[0] = x;
  auto on_grid = [&](const Eigen::VectorXd& th) { return f.on_grid(xs, th); };
  NodeDerivs nd = node_derivs(on_grid, theta);
  return {nd.grad.row(0).transpose(), nd.hess[0]};
}

SandwichCov sandwich_l2(const Eigen::VectorXd& lambda_at_nodes, const Simulator& f,
                        const Eigen::VectorXd& theta_hat, double phi_hat,
                        const Quadrature& quad, int n) {
  auto on_grid = [&](const Eigen::VectorXd& th) { return f.on_grid(quad.nodes, th); };
  NodeDerivs nd = node_derivs(on_grid, theta_hat);
  return l2_family_cov(lambda_at_nodes, nd, std::nullopt, phi_hat, quad, n, "L2");
}

SandwichCov sandwich_l2_emulated(const Eigen::VectorXd& lambda_at_nodes,
                                 const Emulator& emulator,
                                 const Eigen::VectorXd& theta_tilde,
                                 const Quadrature& quad, int n, double phi_hat) {
  EmulatorGridEval ev(emulator, quad.nodes);
  auto mean_on_grid = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd m, v;
    ev.eval(th, m, v);
    return m;
  };
  auto var_on_grid = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd m, v;
    ev.eval(th, m, v);
    return v;
  };
  NodeDerivs nd = node_derivs(mean_on_grid, theta_tilde);
  NodeDerivs vv = node_derivs(var_on_grid, theta_tilde);
  SandwichCov out = l2_family_cov(lambda_at_nodes, nd,
                                  std::make_optional(std::move(vv.hess)), phi_hat,
                                  quad, n, "L2_EMU");
  return out;
}

SandwichCov sandwich_ls(const Eigen::VectorXd& lambda_at_nodes, const Simulator& f,
                        const Eigen::VectorXd& theta_hat_ls, const Quadrature& quad,
                        int n, double phi_hat) {
  auto on_grid = [&](const Eigen::VectorXd& th) { return f.on_grid(quad.nodes, th); };
  NodeDerivs nd = node_derivs(on_grid, theta_hat_ls);
  const int q = static_cast<int>(nd.grad.cols());
  const double wsum = quad.weights.sum();
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(q, q);
  for (int g = 0; g < static_cast<int>(nd.f0.size()); ++g) {
    const double w = quad.weights[g] / wsum;
    Eigen::VectorXd gr = nd.grad.row(g).transpose();
    Eigen::MatrixXd outer = gr * gr.transpose();
    double resid = lambda_at_nodes[g] - nd.f0[g];
    V += w * 2.0 * (outer - resid * nd.hess[g]);
    W += w * (phi_hat * lambda_at_nodes[g] + resid * resid) * outer;
  }
  SandwichCov out;
  out.V = V;
  out.W = W;
  Eigen::MatrixXd Vinv = invert_spd_checked(V, "V");
  out.cov = 4.0 * Vinv * W * Vinv / n;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  out.method = "LS";
  return out;
}

SandwichCov sandwich_mle(const Eigen::VectorXd& lambda_at_nodes, const Simulator& f,
                         const Eigen::VectorXd& theta_hat_mle, const Quadrature& quad,
                         int n, double phi_hat) {
  auto on_grid = [&](const Eigen::VectorXd& th) { return f.on_grid(quad.nodes, th); };
  NodeDerivs nd = node_derivs(on_grid, theta_hat_mle);
  const int q = static_cast<int>(nd.grad.cols());
  const double wsum = quad.weights.sum();
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(q, q);
  for (int g = 0; g < static_cast<int>(nd.f0.size()); ++g) {
    const double fg = nd.f0[g];
    if (!(fg > 0.0))
      throw DomainError("non-positive simulator value at node " + std::to_string(g));
    const double w = quad.weights[g] / wsum;
    const double lamg = lambda_at_nodes[g];
    Eigen::VectorXd gr = nd.grad.row(g).transpose();
    Eigen::MatrixXd outer = gr * gr.transpose();
    // V3 integrand: (1/f) [ (lambda - f) d2f - (lambda / f) df dfT ]
    V += w * ((lamg - fg) * nd.hess[g] - (lamg / fg) * outer) / fg;
    W += w * ((lamg - fg) * (lamg - fg) + phi_hat * lamg) / (fg * fg) * outer;
  }
  SandwichCov out;
  out.V = V;
  out.W = W;
  Eigen::MatrixXd Vinv = invert_spd_checked(V, "V3");
  out.cov = Vinv * W * Vinv / n;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  out.method = "MLE";
  return out;
}

DerivedQuantity ratio_quantity(const std::string& name, int i, int j) {
  DerivedQuantity g;
  g.name = name;
  g.value = [i, j](const Eigen::VectorXd& t) { return t[i] / t[j]; };
  g.gradient = [i, j](const Eigen::VectorXd& t) {
    Eigen::VectorXd gr = Eigen::VectorXd::Zero(t.size());
    gr[i] = 1.0 / t[j];
    gr[j] = -t[i] / (t[j] * t[j]);
    return gr;
  };
  return g;
}

DerivedQuantity reciprocal_quantity(const std::string& name, int i) {
  DerivedQuantity g;
  g.name = name;
  g.value = [i](const Eigen::VectorXd& t) { return 1.0 / t[i]; };
  g.gradient = [i](const Eigen::VectorXd& t) {
    Eigen::VectorXd gr = Eigen::VectorXd::Zero(t.size());
    gr[i] = -1.0 / (t[i] * t[i]);
    return gr;
  };
  return g;
}

Interval delta_ci(const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& cov,
                  const DerivedQuantity& g, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ArgumentError("level must be in (0,1)");
  Eigen::VectorXd grad;
  if (g.gradient) {
    grad = g.gradient(theta_hat);
  } else {
    Eigen::VectorXd h = fd_steps(theta_hat);
    grad.resize(theta_hat.size());
    for (int j = 0; j < theta_hat.size(); ++j) {
      Eigen::VectorXd tp = theta_hat, tm = theta_hat;
      tp[j] += h[j];
      tm[j] -= h[j];
      grad[j] = (g.value(tp) - g.value(tm)) / (2.0 * h[j]);
    }
  }
  if (grad.norm() <= 1e-12)
    throw DegenerateGradient("gradient of derived quantity vanishes at theta_hat");
  double var = grad.dot(cov * grad);
  double sd = std::sqrt(std::max(var, 0.0));
  double z = normal_z(level);
  Interval iv;
  iv.estimate = g.value(theta_hat);
  iv.lower = iv.estimate - z * sd;
  iv.upper = iv.estimate + z * sd;
  iv.level = level;
  return iv;
}

Band predictive_band_det(const Simulator& f, const Eigen::VectorXd& theta_hat,
                         const Eigen::MatrixXd& cov, const Eigen::VectorXd& xgrid,
                         double level) {
  auto on_grid = [&](const Eigen::VectorXd& th) { return f.on_grid(xgrid, th); };
  const int q = static_cast<int>(theta_hat.size());
  Eigen::VectorXd h = fd_steps(theta_hat);
  Eigen::VectorXd f0 = on_grid(theta_hat);
  Eigen::MatrixXd grad(xgrid.size(), q);
  for (int j = 0; j < q; ++j) {
    Eigen::VectorXd tp = theta_hat, tm = theta_hat;
    tp[j] += h[j];
    tm[j] -= h[j];
    grad.col(j) = (on_grid(tp) - on_grid(tm)) / (2.0 * h[j]);
  }
  double z = normal_z(level);
  Band band;
  band.x = xgrid;
  band.fit = f0;
  band.lower.resize(xgrid.size());
  band.upper.resize(xgrid.size());
  band.level = level;
  for (int g = 0; g < xgrid.size(); ++g) {
    Eigen::VectorXd gr = grad.row(g).transpose();
    double sd = std::sqrt(std::max(gr.dot(cov * gr), 0.0));
    band.lower[g] = f0[g] - z * sd;
    band.upper[g] = f0[g] + z * sd;
  }
  return band;
}

Band predictive_band_stoch(const Emulator& emulator, const Eigen::VectorXd& theta,
                           const Eigen::MatrixXd& cov, const Eigen::VectorXd& xgrid,
                           double level) {
  EmulatorGridEval ev(emulator, xgrid);
  Eigen::VectorXd m0, v0;
  ev.eval(theta, m0, v0);
  const int q = static_cast<int>(theta.size());
  Eigen::VectorXd h = fd_steps(theta);
  Eigen::MatrixXd grad(xgrid.size(), q);
  for (int j = 0; j < q; ++j) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[j] += h[j];
    tm[j] -= h[j];
    Eigen::VectorXd mp, vp, mm, vm;
    ev.eval(tp, mp, vp);
    ev.eval(tm, mm, vm);
    grad.col(j) = (mp - mm) / (2.0 * h[j]);
  }
  double z = normal_z(level);
  Band band;
  band.x = xgrid;
  band.fit = m0;
  band.lower.resize(xgrid.size());
  band.upper.resize(xgrid.size());
  band.level = level;
  for (int g = 0; g < xgrid.size(); ++g) {
    Eigen::VectorXd gr = grad.row(g).transpose();
    double sd = std::sqrt(std::max(v0[g] + gr.dot(cov * gr), 0.0));
    band.lower[g] = m0[g] - z * sd;
    band.upper[g] = m0[g] + z * sd;
  }
  return band;
}

nlohmann::json sandwich_to_json(const SandwichCov& s) {
  auto mat = [](const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> rows(m.rows());
    for (int i = 0; i < m.rows(); ++i)
      rows[i].assign(m.row(i).data(), m.row(i).data() + m.cols());
    return rows;
  };
  return nlohmann::json{{"method", s.method}, {"V", mat(s.V)}, {"W", mat(s.W)},
                        {"cov", mat(s.cov)}};
}

nlohmann::json interval_to_json(const Interval& iv) {
  return nlohmann::json{{"est", iv.estimate}, {"lo", iv.lower}, {"hi", iv.upper},
                        {"level", iv.level}};
}

void band_to_csv(const Band& band, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot open " + path);
  out << "x,fit,lo,hi\n";
  for (int i = 0; i < band.x.size(); ++i)
    out << band.x[i] << "," << band.fit[i] << "," << band.lower[i] << ","
        << band.upper[i] << "\n";
}

}  // namespace l2calib
