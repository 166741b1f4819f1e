#include "l2calib/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "l2calib/errors.hpp"
#include "l2calib/optim.hpp"
#include "l2calib/rng.hpp"

namespace l2calib {

namespace {

constexpr double kNuggetFloor = 1e-8;

std::string fnv1a_digest(const Eigen::MatrixXd& m) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
  const size_t nbytes = sizeof(double) * static_cast<size_t>(m.size());
  for (size_t i = 0; i < nbytes; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Eigen::MatrixXd se_kernel(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                          const Eigen::VectorXd& log_len, double log_sv) {
  const double sv = std::exp(log_sv);
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(A.rows(), B.rows());
  for (int d = 0; d < A.cols(); ++d) {
    const double inv_l2 = std::exp(-2.0 * log_len[d]);
    Q.noalias() +=
        inv_l2 *
        (A.col(d).replicate(1, B.rows()) - B.col(d).transpose().replicate(A.rows(), 1))
            .array()
            .square()
            .matrix();
  }
  return sv * (-0.5 * Q.array()).exp().matrix();
}

struct GpFit {
  GpHyper hyper;
  Eigen::MatrixXd L;
  Eigen::VectorXd alpha;
  bool warning = false;
};

double gp_nll(const Eigen::MatrixXd& U, const Eigen::VectorXd& z,
              const Eigen::VectorXd& noise, const Eigen::VectorXd& p) {
  const int D = static_cast<int>(U.cols());
  Eigen::VectorXd log_len = p.head(D);
  Eigen::MatrixXd K = se_kernel(U, U, log_len, p[D]);
  K.diagonal().array() += noise.array() + std::exp(p[D + 1]);
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  Eigen::VectorXd alpha = llt.solve(z);
  double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * z.dot(alpha) + 0.5 * logdet;
}

GpFit train_gp(const Eigen::MatrixXd& U, const Eigen::VectorXd& z,
               const Eigen::VectorXd& noise, std::uint64_t seed) {
  const int D = static_cast<int>(U.cols());
  Bounds b;
  b.lo.resize(D + 2);
  b.hi.resize(D + 2);
  for (int d = 0; d < D; ++d) {
    b.lo[d] = std::log(0.03);
    b.hi[d] = std::log(10.0);
  }
  b.lo[D] = std::log(1e-3);
  b.hi[D] = std::log(100.0);
  b.lo[D + 1] = std::log(kNuggetFloor);
  b.hi[D + 1] = std::log(4.0);

  OptimizerConfig cfg;
  cfg.starts = 5;
  cfg.max_evals_per_start = 400;
  cfg.tol = 1e-6;
  cfg.seed = seed;

  GpFit fit;
  try {
    OptimResult r = nelder_mead_multistart(
        [&](const Eigen::VectorXd& p) { return gp_nll(U, z, noise, p); }, b, cfg);
    if (!std::isfinite(r.value)) throw OptError("non-finite marginal likelihood");
    fit.hyper.log_lengthscales = r.theta.head(D);
    fit.hyper.log_signal_var = r.theta[D];
    fit.hyper.log_nugget = r.theta[D + 1];
  } catch (const Error&) {
    fit.warning = true;
    fit.hyper.log_lengthscales = Eigen::VectorXd::Constant(D, std::log(0.5));
    fit.hyper.log_signal_var = 0.0;
    fit.hyper.log_nugget = std::log(1e-4);
  }

  Eigen::MatrixXd K =
      se_kernel(U, U, fit.hyper.log_lengthscales, fit.hyper.log_signal_var);
  K.diagonal().array() += noise.array() + std::exp(fit.hyper.log_nugget);
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) {
    // Inflate the nugget until the factorization goes through.
    double g = std::exp(fit.hyper.log_nugget);
    for (int k = 0; k < 12 && llt.info() != Eigen::Success; ++k) {
      g *= 10.0;
      Eigen::MatrixXd K2 = K;
      K2.diagonal().array() += g;
      llt.compute(K2);
    }
    if (llt.info() != Eigen::Success) throw NumericalError("GP gram not positive definite");
    fit.hyper.log_nugget = std::log(g);
    fit.warning = true;
  }
  fit.L = llt.matrixL();
  fit.alpha = llt.solve(z);
  return fit;
}

void rebuild_factorizations(Emulator& e) {
  const Eigen::MatrixXd& U = e.design.unit_points;
  Eigen::VectorXd z = (e.ybar.array() - e.y_mean) / e.y_sd;
  Eigen::VectorXd noise =
      e.s2 / (std::max(e.design.replicates, 1) * e.y_sd * e.y_sd);
  Eigen::MatrixXd K =
      se_kernel(U, U, e.mean_hyper.log_lengthscales, e.mean_hyper.log_signal_var);
  K.diagonal().array() += noise.array() + std::exp(e.mean_hyper.log_nugget);
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw NumericalError("emulator gram not PD on load");
  e.mean_L = llt.matrixL();
  e.mean_alpha = llt.solve(z);

  if (e.has_var_model) {
    Eigen::VectorXd t(e.s2.size());
    double med = 0.0;
    {
      std::vector<double> pos;
      for (int i = 0; i < e.s2.size(); ++i)
        if (e.s2[i] > 0.0) pos.push_back(e.s2[i]);
      std::sort(pos.begin(), pos.end());
      med = pos.empty() ? 1.0 : pos[pos.size() / 2];
    }
    for (int i = 0; i < e.s2.size(); ++i)
      t[i] = std::log(e.s2[i] > 0.0 ? e.s2[i] : med);
    Eigen::VectorXd zt = (t.array() - e.v_mean) / e.v_sd;
    Eigen::MatrixXd Kv =
        se_kernel(U, U, e.var_hyper.log_lengthscales, e.var_hyper.log_signal_var);
    Kv.diagonal().array() += std::exp(e.var_hyper.log_nugget);
    Eigen::LLT<Eigen::MatrixXd> lltv(Kv);
    if (lltv.info() != Eigen::Success) throw NumericalError("variance gram not PD on load");
    e.var_L = lltv.matrixL();
    e.var_alpha = lltv.solve(zt);
  }
}

Eigen::VectorXd unit_input(const Emulator& e, double x, const Eigen::VectorXd& theta) {
  Eigen::VectorXd p(1 + theta.size());
  p[0] = x;
  p.tail(theta.size()) = theta;
  return e.design.to_unit(p);
}

}  // namespace

Eigen::MatrixXd lhd(int m, int dims, std::uint64_t seed) {
  if (m < 1 || dims < 1) throw ArgumentError("lhd needs m >= 1 and dims >= 1");
  Rng rng(seed);
  Eigen::MatrixXd out(m, dims);
  std::vector<int> perm(m);
  for (int j = 0; j < dims; ++j) {
    for (int i = 0; i < m; ++i) perm[i] = i;
    for (int i = m - 1; i > 0; --i)
      std::swap(perm[i], perm[static_cast<int>(rng.next_u64() % (i + 1))]);
    for (int i = 0; i < m; ++i) out(i, j) = (perm[i] + rng.uniform01()) / m;
  }
  return out;
}

Emulator fit_emulator(const Design& design, const Eigen::MatrixXd& outputs,
                      std::uint64_t seed) {
  const int m = design.size();
  const int a = static_cast<int>(outputs.cols());
  if (outputs.rows() != m) throw ArgumentError("outputs rows must match design size");
  if (a < 1) throw ArgumentError("need at least one replicate column");
  if (design.replicates != a)
    throw ArgumentError("design.replicates disagrees with outputs columns");

  // Duplicated design points make the mean surface unidentifiable.
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < i; ++j)
      if ((design.unit_points.row(i) - design.unit_points.row(j)).norm() < 1e-12)
        throw DesignError("duplicated design points " + std::to_string(j) + "," +
                          std::to_string(i));

  Emulator e;
  e.design = design;
  e.outputs_digest = fnv1a_digest(outputs);
  e.ybar = outputs.rowwise().mean();
  e.s2 = Eigen::VectorXd::Zero(m);
  if (a > 1) {
    for (int i = 0; i < m; ++i) {
      double mu = e.ybar[i];
      e.s2[i] = (outputs.row(i).array() - mu).square().sum() / (a - 1);
    }
  }
  e.y_mean = e.ybar.mean();
  e.y_sd = std::max(std::sqrt((e.ybar.array() - e.y_mean).square().sum() /
                              std::max(m - 1, 1)),
                    1e-12);

  Eigen::VectorXd z = (e.ybar.array() - e.y_mean) / e.y_sd;
  Eigen::VectorXd noise = e.s2 / (a * e.y_sd * e.y_sd);
  GpFit mean_fit = train_gp(design.unit_points, z, noise, Rng::derive(seed, 1));
  e.mean_hyper = mean_fit.hyper;
  e.mean_L = mean_fit.L;
  e.mean_alpha = mean_fit.alpha;
  e.warning = mean_fit.warning;

  e.has_var_model = a > 1 && (e.s2.array() > 0.0).any();
  if (e.has_var_model) {
    std::vector<double> pos;
    for (int i = 0; i < m; ++i)
      if (e.s2[i] > 0.0) pos.push_back(e.s2[i]);
    std::sort(pos.begin(), pos.end());
    const double med = pos[pos.size() / 2];
    Eigen::VectorXd t(m);
    for (int i = 0; i < m; ++i) t[i] = std::log(e.s2[i] > 0.0 ? e.s2[i] : med);
    e.v_mean = t.mean();
    e.v_sd = std::max(std::sqrt((t.array() - e.v_mean).square().sum() /
                                std::max(m - 1, 1)),
                      1e-12);
    Eigen::VectorXd zt = (t.array() - e.v_mean) / e.v_sd;
    GpFit var_fit = train_gp(design.unit_points, zt,
                             Eigen::VectorXd::Zero(m), Rng::derive(seed, 2));
    e.var_hyper = var_fit.hyper;
    e.var_L = var_fit.L;
    e.var_alpha = var_fit.alpha;
    e.warning = e.warning || var_fit.warning;
  }
  return e;
}

EmuPrediction emulate(const Emulator& e, double x, const Eigen::VectorXd& theta) {
  Eigen::VectorXd u = unit_input(e, x, theta);
  EmuPrediction out;
  out.extrapolated = (u.array() < -1e-9).any() || (u.array() > 1.0 + 1e-9).any();

  Eigen::MatrixXd Urow = u.transpose();
  Eigen::MatrixXd ks = se_kernel(Urow, e.design.unit_points,
                                 e.mean_hyper.log_lengthscales,
                                 e.mean_hyper.log_signal_var);
  const double sv = std::exp(e.mean_hyper.log_signal_var);
  out.mean = e.y_mean + e.y_sd * ks.row(0).dot(e.mean_alpha);
  Eigen::VectorXd v = e.mean_L.triangularView<Eigen::Lower>().solve(ks.row(0).transpose());
  double surface = std::max(sv - v.squaredNorm(), 0.0) * e.y_sd * e.y_sd;

  double noise_pred;
  if (e.has_var_model) {
    Eigen::MatrixXd kv = se_kernel(Urow, e.design.unit_points,
                                   e.var_hyper.log_lengthscales,
                                   e.var_hyper.log_signal_var);
    noise_pred = std::exp(e.v_mean + e.v_sd * kv.row(0).dot(e.var_alpha));
  } else {
    noise_pred = std::exp(e.mean_hyper.log_nugget) * e.y_sd * e.y_sd;
  }
  out.variance = surface + noise_pred;
  return out;
}

double rmspe(const Emulator& e, const Eigen::MatrixXd& test_inputs,
             const Eigen::VectorXd& test_truth) {
  if (test_inputs.rows() != test_truth.size())
    throw ArgumentError("test inputs/truth length mismatch");
  if (test_inputs.cols() != e.design.dims())
    throw ArgumentError("test input dimension mismatch");
  double acc = 0.0;
  for (int i = 0; i < test_inputs.rows(); ++i) {
    Eigen::VectorXd theta = test_inputs.row(i).tail(test_inputs.cols() - 1);
    EmuPrediction p = emulate(e, test_inputs(i, 0), theta);
    acc += (p.mean - test_truth[i]) * (p.mean - test_truth[i]);
  }
  return std::sqrt(acc / test_inputs.rows());
}

EmulatorGridEval::EmulatorGridEval(const Emulator& e, const Eigen::VectorXd& xs)
    : emu_(e) {
  const int G = static_cast<int>(xs.size());
  const int m = e.design.size();
  Eigen::MatrixXd ux(G, 1);
  const double lo = e.design.lo[0], hi = e.design.hi[0];
  for (int g = 0; g < G; ++g) ux(g, 0) = (xs[g] - lo) / (hi - lo);

  auto x_block = [&](const GpHyper& h, double scale) {
    Eigen::MatrixXd K(G, m);
    const double inv_l2 = std::exp(-2.0 * h.log_lengthscales[0]);
    for (int g = 0; g < G; ++g)
      for (int i = 0; i < m; ++i) {
        double d = ux(g, 0) - e.design.unit_points(i, 0);
        K(g, i) = scale * std::exp(-0.5 * inv_l2 * d * d);
      }
    return K;
  };
  kx_mean_ = x_block(e.mean_hyper, std::exp(e.mean_hyper.log_signal_var));
  if (e.has_var_model)
    kx_var_ = x_block(e.var_hyper, std::exp(e.var_hyper.log_signal_var));
  Linv_ = e.mean_L.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd::Identity(m, m));
}

void EmulatorGridEval::eval(const Eigen::VectorXd& theta, Eigen::VectorXd& mean,
                            Eigen::VectorXd& variance) const {
  const Emulator& e = emu_;
  const int m = e.design.size();
  const int G = grid_size();
  const int q = static_cast<int>(theta.size());

  Eigen::VectorXd utheta(q);
  for (int d = 0; d < q; ++d)
    utheta[d] = (theta[d] - e.design.lo[d + 1]) / (e.design.hi[d + 1] - e.design.lo[d + 1]);

  // theta-direction kernel factor per design point
  Eigen::VectorXd c = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < m; ++i) {
    double quad = 0.0;
    for (int d = 0; d < q; ++d) {
      double dd = utheta[d] - e.design.unit_points(i, d + 1);
      quad += std::exp(-2.0 * e.mean_hyper.log_lengthscales[d + 1]) * dd * dd;
    }
    c[i] = std::exp(-0.5 * quad);
  }

  mean = ((kx_mean_ * c.cwiseProduct(e.mean_alpha)).array() * e.y_sd + e.y_mean).matrix();

  // || L^{-1} k* ||^2 for every grid point in one product
  Eigen::MatrixXd Pc = Linv_.array().rowwise() * c.transpose().array();
  Eigen::MatrixXd M = Pc * kx_mean_.transpose();  // m x G
  const double sv = std::exp(e.mean_hyper.log_signal_var);
  variance.resize(G);
  for (int g = 0; g < G; ++g)
    variance[g] =
        std::max(sv - M.col(g).squaredNorm(), 0.0) * e.y_sd * e.y_sd;

  if (e.has_var_model) {
    Eigen::VectorXd cv = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < m; ++i) {
      double quad = 0.0;
      for (int d = 0; d < q; ++d) {
        double dd = utheta[d] - e.design.unit_points(i, d + 1);
        quad += std::exp(-2.0 * e.var_hyper.log_lengthscales[d + 1]) * dd * dd;
      }
      cv[i] = std::exp(-0.5 * quad);
    }
    Eigen::VectorXd tlog = kx_var_ * cv.cwiseProduct(e.var_alpha);
    for (int g = 0; g < G; ++g)
      variance[g] += std::exp(e.v_mean + e.v_sd * tlog[g]);
  } else {
    variance.array() += std::exp(e.mean_hyper.log_nugget) * e.y_sd * e.y_sd;
  }
}

nlohmann::json emulator_to_json(const Emulator& e) {
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  std::vector<std::vector<double>> pts(e.design.size());
  for (int i = 0; i < e.design.size(); ++i) {
    pts[i].assign(e.design.unit_points.row(i).data(),
                  e.design.unit_points.row(i).data() + e.design.dims());
  }
  nlohmann::json j{
      {"design",
       {{"unit_points", pts},
        {"lo", vec(e.design.lo)},
        {"hi", vec(e.design.hi)},
        {"replicates", e.design.replicates}}},
      {"ybar", vec(e.ybar)},
      {"s2", vec(e.s2)},
      {"y_mean", e.y_mean},
      {"y_sd", e.y_sd},
      {"mean_hyper",
       {{"log_lengthscales", vec(e.mean_hyper.log_lengthscales)},
        {"log_signal_var", e.mean_hyper.log_signal_var},
        {"log_nugget", e.mean_hyper.log_nugget}}},
      {"has_var_model", e.has_var_model},
      {"warning", e.warning},
      {"outputs_digest", e.outputs_digest}};
  if (e.has_var_model) {
    j["var_hyper"] = {{"log_lengthscales", vec(e.var_hyper.log_lengthscales)},
                      {"log_signal_var", e.var_hyper.log_signal_var},
                      {"log_nugget", e.var_hyper.log_nugget}};
    j["v_mean"] = e.v_mean;
    j["v_sd"] = e.v_sd;
  }
  return j;
}

Emulator emulator_from_json(const nlohmann::json& j) {
  Emulator e;
  auto to_vec = [](const nlohmann::json& a) {
    auto v = a.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()).eval();
  };
  const auto& d = j.at("design");
  auto pts = d.at("unit_points").get<std::vector<std::vector<double>>>();
  if (pts.empty()) throw FormatError("empty design");
  e.design.unit_points.resize(pts.size(), pts[0].size());
  for (size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].size() != pts[0].size()) throw FormatError("ragged design");
    for (size_t k = 0; k < pts[i].size(); ++k) e.design.unit_points(i, k) = pts[i][k];
  }
  e.design.lo = to_vec(d.at("lo"));
  e.design.hi = to_vec(d.at("hi"));
  e.design.replicates = d.at("replicates").get<int>();
  e.ybar = to_vec(j.at("ybar"));
  e.s2 = to_vec(j.at("s2"));
  e.y_mean = j.at("y_mean").get<double>();
  e.y_sd = j.at("y_sd").get<double>();
  e.mean_hyper.log_lengthscales = to_vec(j.at("mean_hyper").at("log_lengthscales"));
  e.mean_hyper.log_signal_var = j.at("mean_hyper").at("log_signal_var").get<double>();
  e.mean_hyper.log_nugget = j.at("mean_hyper").at("log_nugget").get<double>();
  e.has_var_model = j.at("has_var_model").get<bool>();
  if (e.has_var_model) {
    e.var_hyper.log_lengthscales = to_vec(j.at("var_hyper").at("log_lengthscales"));
    e.var_hyper.log_signal_var = j.at("var_hyper").at("log_signal_var").get<double>();
    e.var_hyper.log_nugget = j.at("var_hyper").at("log_nugget").get<double>();
    e.v_mean = j.at("v_mean").get<double>();
    e.v_sd = j.at("v_sd").get<double>();
  }
  e.warning = j.value("warning", false);
  e.outputs_digest = j.value("outputs_digest", "");
  rebuild_factorizations(e);
  return e;
}

}  // namespace l2calib
