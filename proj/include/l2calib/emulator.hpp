#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace l2calib {

/// Latin hypercube in [0,1]^{m x dims}: one point per stratum per
/// dimension, randomized within strata, deterministic per seed.
Eigen::MatrixXd lhd(int m, int dims, std::uint64_t seed);

/// Experimental design over (x, theta): points live in the unit box and
/// map affinely to [lo, hi] per coordinate (coordinate 0 is x).
struct Design {
  Eigen::MatrixXd unit_points;  // m x D in [0,1]^D
  Eigen::VectorXd lo, hi;       // D
  int replicates = 1;           // a, simulator runs per point

  int size() const { return static_cast<int>(unit_points.rows()); }
  int dims() const { return static_cast<int>(unit_points.cols()); }
  Eigen::VectorXd to_original(const Eigen::VectorXd& u) const {
    return lo.array() + u.array() * (hi - lo).array();
  }
  Eigen::VectorXd to_unit(const Eigen::VectorXd& p) const {
    return (p - lo).array() / (hi - lo).array();
  }
};

struct GpHyper {
  Eigen::VectorXd log_lengthscales;  // per input dimension, unit-box scale
  double log_signal_var = 0.0;
  double log_nugget = std::log(1e-6);
};

/// Heteroscedastic Gaussian-process emulator: an anisotropic
/// squared-exponential GP on per-point replicate means (noise =
/// replicate variance / a), plus a second GP smoothing log replicate
/// variances that predicts the intrinsic simulator noise.
struct Emulator {
  Design design;
  Eigen::VectorXd ybar;  // replicate means per design point
  Eigen::VectorXd s2;    // replicate variances (ddof 1), zeros when a = 1
  double y_mean = 0.0, y_sd = 1.0;
  GpHyper mean_hyper;
  bool has_var_model = false;
  GpHyper var_hyper;
  double v_mean = 0.0, v_sd = 1.0;
  bool warning = false;  // hyperparameter search did not finish cleanly
  std::string outputs_digest;

  // Cached factorizations, rebuilt on load.
  Eigen::MatrixXd mean_L;
  Eigen::VectorXd mean_alpha;
  Eigen::MatrixXd var_L;
  Eigen::VectorXd var_alpha;
};

/// Trains the emulator from an m x a matrix of replicate outputs (row i
/// holds the a replicates at design point i). a = 1 falls back to a
/// homoscedastic GP whose fitted nugget stands in for the noise level.
Emulator fit_emulator(const Design& design, const Eigen::MatrixXd& outputs,
                      std::uint64_t seed = 0);

struct EmuPrediction {
  double mean = 0.0;
  double variance = 0.0;  // mean-surface uncertainty + predicted noise
  bool extrapolated = false;
};

/// Predictive mean and variance at (x, theta) in original units.
EmuPrediction emulate(const Emulator& e, double x, const Eigen::VectorXd& theta);

/// Root mean squared prediction error of the emulator mean against
/// known values; inputs are rows of (x, theta) in original units.
double rmspe(const Emulator& e, const Eigen::MatrixXd& test_inputs,
             const Eigen::VectorXd& test_truth);

/// Repeated-theta evaluation over a fixed x grid. Caches the
/// x-direction kernel blocks so each theta costs one matrix product;
/// this is the calibration hot path.
class EmulatorGridEval {
 public:
  EmulatorGridEval(const Emulator& e, const Eigen::VectorXd& xs);
  void eval(const Eigen::VectorXd& theta, Eigen::VectorXd& mean,
            Eigen::VectorXd& variance) const;
  int grid_size() const { return static_cast<int>(kx_mean_.rows()); }

 private:
  const Emulator& emu_;
  Eigen::MatrixXd kx_mean_;  // G x m, includes the signal variance factor
  Eigen::MatrixXd kx_var_;
  Eigen::MatrixXd Linv_;     // inverse lower Cholesky factor of the mean GP
};

nlohmann::json emulator_to_json(const Emulator& e);
Emulator emulator_from_json(const nlohmann::json& j);

}  // namespace l2calib
