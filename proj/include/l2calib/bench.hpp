#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "l2calib/calibration.hpp"
#include "l2calib/inference.hpp"

namespace l2calib {

enum class Study { Toy1D, Toy3D, MleInconsistency };

Study study_from_name(const std::string& name);
std::string study_name(Study s);

/// Fully specified synthetic calibration problem: a known true process
/// over a fixed domain and a cheap simulator with box bounds.
struct ToyProblem {
  double x_lo, x_hi;
  Bounds bounds;
  std::function<double(double)> lambda;
  Simulator simulator;
  bool equispaced_includes_endpoints;  // data site layout
};

ToyProblem make_toy(Study s);

/// Data sites for a study: equispaced over the domain (midpoints when
/// the intensity vanishes at an endpoint), returned in normalized and
/// domain units.
void study_design(const ToyProblem& toy, int n, Eigen::VectorXd& x_unit,
                  Eigen::VectorXd& x_domain);

struct EmulatorSettings {
  int m = 100;
  int a = 100;
};

struct StudyConfig {
  Study study = Study::Toy1D;
  int n = 50;
  int replicates = 100;
  std::uint64_t seed = 1;
  bool with_emulator = false;
  EmulatorSettings emulator;
  int threads = 0;  // 0: resolve from L2CALIB_THREADS / hardware
  int optimizer_starts = 10;
};

struct MethodResult {
  std::string method;
  Eigen::VectorXd mse;         // per coordinate
  Eigen::VectorXd mean_theta;
  int failures = 0;
};

struct StudyResult {
  std::vector<MethodResult> methods;
  Eigen::VectorXd theta_star;
  int replicates = 0;
  double wall_seconds = 0.0;
};

/// Draws Poisson data from the study's true process, fits every
/// estimator on the same draws (paired seeds), and accumulates squared
/// errors against the L2-projection oracle. Failed replicates are
/// dropped; more than 10% failures aborts the study.
StudyResult run_mse_study(const StudyConfig& cfg);

struct CoverageResult {
  int covered = 0;
  int replicates = 0;
  double level = 0.95;
  bool emulated = false;
};

/// Counts replicates whose sandwich confidence interval contains the
/// oracle theta*. cfg.with_emulator switches to the emulated estimator
/// and its covariance.
CoverageResult run_coverage_study(const StudyConfig& cfg);

/// Coverage counting helper: how many intervals contain the target.
int count_coverage(const std::vector<Interval>& intervals, double target);

struct RmspeRow {
  int m = 0;
  int a = 0;
  double rmspe = 0.0;
  double fit_seconds = 0.0;
  double predict_seconds = 0.0;
};

/// Emulator accuracy table over (m, a) settings, evaluated at 10,000
/// random held-out inputs against the noise-free simulator.
std::vector<RmspeRow> run_rmspe_table(Study toy,
                                      const std::vector<std::pair<int, int>>& settings,
                                      std::uint64_t seed);

std::string study_result_csv(const StudyResult& r);
nlohmann::json study_result_to_json(const StudyResult& r);
std::string rmspe_table_csv(const std::vector<RmspeRow>& rows);

/// Builds the (x, theta) training set for a toy emulator: an LHD over
/// the joint box, `a` Poisson replicates of the simulator at each
/// point. Exposed for the CLI and the acceptance suite.
std::pair<Design, Eigen::MatrixXd> toy_computer_experiment(const ToyProblem& toy, int m,
                                                           int a, std::uint64_t seed);

}  // namespace l2calib
