#include "l2calib/seir.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

#include <boost/numeric/odeint.hpp>

#include "l2calib/errors.hpp"
#include "l2calib/parallel.hpp"
#include "l2calib/rng.hpp"

namespace l2calib {

namespace {

using State = std::array<double, 4>;  // S, E, I, R

void validate(const SeirParams& p) {
  if (!(p.beta > 0.0 && p.kappa > 0.0 && p.gamma > 0.0))
    throw ArgumentError("beta, kappa, gamma must be > 0");
  if (p.i0 < 0.0 || p.e0 < 0.0 || p.r0_init < 0.0)
    throw ArgumentError("initial compartment counts must be >= 0");
  if (p.i0 + p.e0 + p.r0_init > p.N)
    throw ArgumentError("initial counts exceed population");
}

struct SeirRhs {
  double beta, kappa, gamma, N;
  void operator()(const State& s, State& ds, double /*t*/) const {
    const double force = beta * s[2] * s[0] / N;
    ds[0] = -force;
    ds[1] = force - kappa * s[1];
    ds[2] = kappa * s[1] - gamma * s[2];
    ds[3] = gamma * s[2];
  }
};

State initial_state(const SeirParams& p) {
  return {p.N - p.e0 - p.i0 - p.r0_init, p.e0, p.i0, p.r0_init};
}

// Integrates through the sorted time grid, recording the state at each
// requested time. times[0] may be > 0; integration always starts at 0.
std::vector<State> integrate_at(const SeirParams& p, const std::vector<double>& times) {
  namespace ode = boost::numeric::odeint;
  for (size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0.0 || (i > 0 && times[i] <= times[i - 1]))
      throw ArgumentError("times must be strictly increasing and >= 0");
  }
  SeirRhs rhs{p.beta, p.kappa, p.gamma, p.N};
  State s = initial_state(p);
  auto stepper = ode::make_controlled<ode::runge_kutta_dopri5<State>>(
      1e-8 * p.N, 1e-8);
  std::vector<State> out;
  out.reserve(times.size());
  std::vector<double> grid;
  size_t skip = 0;
  if (times.empty() || times[0] > 0.0) {
    grid.push_back(0.0);
    skip = 1;
  }
  grid.insert(grid.end(), times.begin(), times.end());
  try {
    size_t idx = 0;
    ode::integrate_times(stepper, rhs, s, grid.begin(), grid.end(), 1e-4,
                         [&](const State& st, double /*t*/) {
                           if (idx >= skip) out.push_back(st);
                           ++idx;
                         });
  } catch (const std::exception& e) {
    throw SolverError(std::string("SEIR integration failed: ") + e.what());
  }
  return out;
}

}  // namespace

Trajectory solve_seir_ode(const SeirParams& p, double horizon, double dt_out) {
  validate(p);
  if (!(horizon > 0.0) || !(dt_out > 0.0))
    throw ArgumentError("horizon and dt_out must be > 0");
  std::vector<double> times;
  for (double t = 0.0; t <= horizon + 1e-9; t += dt_out) times.push_back(t);
  auto states = integrate_at(p, times);
  Trajectory tr;
  tr.times = times;
  tr.S.reserve(times.size());
  tr.E.reserve(times.size());
  tr.I.reserve(times.size());
  tr.R.reserve(times.size());
  for (const auto& s : states) {
    tr.S.push_back(s[0]);
    tr.E.push_back(s[1]);
    tr.I.push_back(s[2]);
    tr.R.push_back(s[3]);
  }
  return tr;
}

std::vector<double> seir_exposed_at(const SeirParams& p, const std::vector<double>& xs) {
  validate(p);
  auto states = integrate_at(p, xs);
  std::vector<double> out(states.size());
  for (size_t i = 0; i < states.size(); ++i) out[i] = states[i][1];
  return out;
}

double seir_incidence(const SeirParams& p, double x) {
  if (x < 0.0) throw ArgumentError("x must be >= 0");
  if (x == 0.0) return p.kappa * p.e0;
  auto e = seir_exposed_at(p, {x});
  return p.kappa * e[0];
}

Eigen::VectorXd seir_incidence_grid(const SeirParams& p, const Eigen::VectorXd& xs) {
  std::vector<double> times(xs.data(), xs.data() + xs.size());
  auto e = seir_exposed_at(p, times);
  Eigen::VectorXd out(xs.size());
  for (int i = 0; i < xs.size(); ++i) out[i] = p.kappa * e[i];
  return out;
}

namespace detail {

void gillespie_seir_observe(
    const SeirParams& p, double horizon, std::uint64_t seed,
    const std::function<void(double, long long, long long, long long, long long)>& observer) {
  long long S = std::llround(p.N - p.e0 - p.i0 - p.r0_init);
  long long E = std::llround(p.e0);
  long long I = std::llround(p.i0);
  long long R = std::llround(p.r0_init);
  const double N = p.N;
  Rng rng(seed);
  double t = 0.0;
  for (;;) {
    const double a1 = p.beta * static_cast<double>(S) * static_cast<double>(I) / N;
    const double a2 = p.kappa * static_cast<double>(E);
    const double a3 = p.gamma * static_cast<double>(I);
    const double a0 = a1 + a2 + a3;
    if (a0 <= 0.0) break;  // absorbing state
    t += rng.exponential(a0);
    if (t >= horizon) break;
    const double u = rng.uniform01() * a0;
    if (u < a1) {
      --S;
      ++E;
    } else if (u < a1 + a2) {
      --E;
      ++I;
    } else {
      --I;
      ++R;
    }
    observer(t, S, E, I, R);
  }
}

}  // namespace detail

std::vector<double> gillespie_seir(const SeirParams& p, int horizon_days, std::uint64_t seed) {
  validate(p);
  if (horizon_days <= 0) throw ArgumentError("horizon must be positive");
  std::vector<double> incidence(horizon_days, 0.0);
  long long prevE = std::llround(p.e0);
  detail::gillespie_seir_observe(
      p, static_cast<double>(horizon_days), seed,
      [&](double t, long long, long long E, long long, long long) {
        if (E == prevE - 1) {
          // E -> I progression: one new daily infection
          int day = static_cast<int>(t);
          if (day >= 0 && day < horizon_days) incidence[day] += 1.0;
        }
        prevE = E;
      });
  return incidence;
}

Eigen::MatrixXd replicate_gillespie(const SeirParams& p, int horizon_days, int a,
                                    std::uint64_t seed, int threads) {
  validate(p);
  if (a < 1) throw ArgumentError("replicate count must be >= 1");
  Eigen::MatrixXd out(a, horizon_days);
  parallel_for(
      a,
      [&](int i) {
        auto path = gillespie_seir(p, horizon_days, Rng::derive(seed, i));
        for (int d = 0; d < horizon_days; ++d) out(i, d) = path[d];
      },
      threads);
  return out;
}

}  // namespace l2calib
