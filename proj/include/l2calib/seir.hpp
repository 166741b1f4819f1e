#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace l2calib {

/// SEIR rates and initial compartment sizes. S(0) is derived:
/// S(0) = N - E(0) - I(0) - R(0).
struct SeirParams {
  double beta = 0.0;     // contact rate, 1/day
  double kappa = 0.0;    // incubation rate, 1/day
  double gamma = 0.0;    // recovery rate, 1/day
  double i0 = 0.0;
  double e0 = 0.0;
  double r0_init = 0.0;
  double N = 0.0;        // total population

  double basic_reproduction_number() const { return beta / gamma; }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<double> S, E, I, R;
};

/// Integrates dS = -beta I S / N, dE = beta I S / N - kappa E,
/// dI = kappa E - gamma I, dR = gamma I with an adaptive Dormand-Prince
/// 5(4) stepper (abs tol 1e-8 N, rel tol 1e-8), sampled every dt_out days.
Trajectory solve_seir_ode(const SeirParams& p, double horizon, double dt_out);

/// Values of E(x) at the requested times (strictly increasing, >= 0).
std::vector<double> seir_exposed_at(const SeirParams& p, const std::vector<double>& xs);

/// Deterministic daily-infection intensity f(x, theta) = kappa E(x).
double seir_incidence(const SeirParams& p, double x);
Eigen::VectorXd seir_incidence_grid(const SeirParams& p, const Eigen::VectorXd& xs);

/// Exact continuous-time Markov simulation (Gillespie) of the SEIR
/// chain. Returns the count of E->I progressions in each day bin,
/// the stochastic counterpart of kappa E. Identical seeds give
/// identical paths.
std::vector<double> gillespie_seir(const SeirParams& p, int horizon_days, std::uint64_t seed);

/// a independent replicate paths; row i uses a seed derived
/// deterministically from (seed, i), so results do not depend on the
/// thread schedule.
Eigen::MatrixXd replicate_gillespie(const SeirParams& p, int horizon_days, int a,
                                    std::uint64_t seed, int threads = 0);

namespace detail {
/// Event-level hook for property tests: observer(t, S, E, I, R) runs
/// after every transition.
void gillespie_seir_observe(
    const SeirParams& p, double horizon, std::uint64_t seed,
    const std::function<void(double, long long, long long, long long, long long)>& observer);
}  // namespace detail

}  // namespace l2calib
