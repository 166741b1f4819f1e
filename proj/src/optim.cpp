#include "l2calib/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "l2calib/errors.hpp"
#include "l2calib/rng.hpp"

namespace l2calib {

namespace {

struct Vertex {
  Eigen::VectorXd x;
  double f;
};

// Single Nelder-Mead run from a given start, clipped to the box.
OptimResult nm_single(const std::function<double(const Eigen::VectorXd&)>& fn,
                      const Bounds& bounds, const Eigen::VectorXd& start,
                      int max_evals, double tol) {
  const int q = bounds.dim();
  const Eigen::VectorXd range = bounds.hi - bounds.lo;
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    double v = fn(bounds.clip(x));
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Vertex> simplex;
  simplex.reserve(q + 1);
  simplex.push_back({bounds.clip(start), eval(start)});
  for (int j = 0; j < q; ++j) {
    Eigen::VectorXd v = start;
    double step = 0.10 * range[j];
    v[j] = v[j] + step <= bounds.hi[j] ? v[j] + step : v[j] - step;
    v = bounds.clip(v);
    simplex.push_back({v, eval(v)});
  }

  auto order = [&] {
    std::sort(simplex.begin(), simplex.end(),
              [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
  };
  order();

  while (evals < max_evals) {
    // Convergence: simplex diameter in box-scaled coordinates.
    double diam = 0.0;
    for (int i = 1; i <= q; ++i) {
      double d = ((simplex[i].x - simplex[0].x).array() / range.array())
                     .abs()
                     .maxCoeff();
      diam = std::max(diam, d);
    }
    if (diam < tol) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(q);
    for (int i = 0; i < q; ++i) centroid += simplex[i].x;
    centroid /= q;
    const Vertex& worst = simplex[q];

    Eigen::VectorXd xr = bounds.clip(centroid + (centroid - worst.x));
    double fr = eval(xr);
    if (fr < simplex[0].f) {
      Eigen::VectorXd xe = bounds.clip(centroid + 2.0 * (centroid - worst.x));
      double fe = eval(xe);
      simplex[q] = fe < fr ? Vertex{xe, fe} : Vertex{xr, fr};
    } else if (fr < simplex[q - 1].f) {
      simplex[q] = {xr, fr};
    } else {
      bool outside = fr < worst.f;
      Eigen::VectorXd xc =
          outside ? bounds.clip(centroid + 0.5 * (xr - centroid))
                  : bounds.clip(centroid - 0.5 * (centroid - worst.x));
      double fc = eval(xc);
      if (fc < std::min(fr, worst.f)) {
        simplex[q] = {xc, fc};
      } else {
        // shrink toward the best vertex
        for (int i = 1; i <= q; ++i) {
          simplex[i].x = bounds.clip(simplex[0].x + 0.5 * (simplex[i].x - simplex[0].x));
          simplex[i].f = eval(simplex[i].x);
        }
      }
    }
    order();
  }

  OptimResult res;
  res.theta = simplex[0].x;
  res.value = simplex[0].f;
  res.n_evals = evals;
  return res;
}

}  // namespace

OptimResult nelder_mead_multistart(const std::function<double(const Eigen::VectorXd&)>& fn,
                                   const Bounds& bounds, const OptimizerConfig& cfg) {
  const int q = bounds.dim();
  if (q < 1) throw ArgumentError("empty parameter space");
  if (cfg.starts < 1) throw ArgumentError("starts must be >= 1");
  const int max_evals = cfg.max_evals_per_start > 0 ? cfg.max_evals_per_start : 250 * q;

  // Latin hypercube of start points.
  Rng rng(cfg.seed);
  Eigen::MatrixXd unit(cfg.starts, q);
  for (int j = 0; j < q; ++j) {
    std::vector<int> perm(cfg.starts);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = cfg.starts - 1; i > 0; --i)
      std::swap(perm[i], perm[static_cast<int>(rng.next_u64() % (i + 1))]);
    for (int i = 0; i < cfg.starts; ++i)
      unit(i, j) = (perm[i] + rng.uniform01()) / cfg.starts;
  }

  OptimResult best;
  best.value = std::numeric_limits<double>::infinity();
  bool any = false;
  int total_evals = 0;
  for (int s = 0; s < cfg.starts; ++s) {
    Eigen::VectorXd start =
        bounds.lo.array() + unit.row(s).transpose().array() * (bounds.hi - bounds.lo).array();
    OptimResult r = nm_single(fn, bounds, start, max_evals, cfg.tol);
    total_evals += r.n_evals;
    if (std::isfinite(r.value) && (!any || r.value < best.value)) {
      best = r;
      any = true;
    }
  }
  if (!any) throw OptError("all optimizer starts failed");
  best.n_evals = total_evals;

  const Eigen::VectorXd range = bounds.hi - bounds.lo;
  best.boundary_contact = false;
  for (int j = 0; j < q; ++j) {
    double m = 1e-9 * range[j];
    if (best.theta[j] - bounds.lo[j] <= m || bounds.hi[j] - best.theta[j] <= m)
      best.boundary_contact = true;
  }
  return best;
}

}  // namespace l2calib
