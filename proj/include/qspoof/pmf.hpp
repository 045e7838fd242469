#pragma once

#include <Eigen/Dense>
#include <random>

#include "qspoof/model.hpp"

namespace qspoof {

/// Probability floor applied to quantized pmf entries before renormalization;
/// keeps every log(p) and 1/p finite.
inline constexpr double kPmfFloor = 1e-12;

/// Quantized pmf of one (sensor, pattern) under one hypothesis, with
/// derivatives w.r.t. the desired parameters and (for the attacked
/// hypothesis) the attack parameters.
///
/// Second-derivative blocks are stored level-major: column r of d2_tt holds
/// the flattened D_theta x D_theta matrix of second derivatives of p_r.
struct PmfBundle {
  Eigen::VectorXd pmf;      // R
  Eigen::MatrixXd d_theta;  // D_theta x R
  Eigen::MatrixXd d_xi;     // D_xi x R (0 rows under the unattacked hypothesis)
  Eigen::MatrixXd d2_tt;    // (D_theta*D_theta) x R
  Eigen::MatrixXd d2_tx;    // (D_theta*D_xi) x R
  Eigen::MatrixXd d2_xx;    // (D_xi*D_xi) x R
  bool has_second = false;

  double d2tt(int l, int m, int r) const { return d2_tt(l + m * d_theta.rows(), r); }
  double d2tx(int l, int m, int r) const { return d2_tx(l + m * d_theta.rows(), r); }
  double d2xx(int l, int m, int r) const { return d2_xx(l + m * d_xi.rows(), r); }
};

/// Gaussian observation moments and their parameter derivatives for one
/// (sensor, pattern, hypothesis); every built-in family and attack form
/// reduces to this.
struct GaussMoments {
  double mean = 0.0;
  double var = 1.0;
  Eigen::VectorXd dmean_dtheta, dvar_dtheta;  // D_theta
  Eigen::VectorXd dmean_dxi, dvar_dxi;        // D_xi (size 0 when unattacked)
};

/// Moments of sensor j at the given pattern. xi == nullptr selects the
/// before-attack family; otherwise the sensor's attack form is applied.
/// Throws ModelError on non-finite parameters or variance <= 0.
GaussMoments observation_moments(const Sensor& sensor, const Eigen::VectorXd& theta,
                                 const Eigen::VectorXd* xi, int pattern);

/// Pmf bundle for sensor j at the given pattern. Entries are floored at
/// kPmfFloor and renormalized; derivative rows are left unfloored so each
/// still sums to zero.
PmfBundle sensor_pmf_bundle(const Sensor& sensor, const Eigen::VectorXd& theta,
                            const Eigen::VectorXd* xi, int pattern, bool want_second = false);

/// Pmf values only (no derivatives); cheaper for likelihood evaluations.
Eigen::VectorXd sensor_pmf(const Sensor& sensor, const Eigen::VectorXd& theta,
                           const Eigen::VectorXd* xi, int pattern);

/// Spec-level entry point resolving xi from the sensor's attack group.
/// attacked_hypothesis = true requires sensor to belong to a group.
PmfBundle pmf_bundle(const NetworkModel& model, const ParameterPoint& point, int sensor, long k,
                     bool attacked_hypothesis, bool want_second = false);

/// Draws one after-attack quantized level for (sensor, k) at the given point,
/// using the sensor's true group membership. Deterministic per stream state.
int sample_level(const NetworkModel& model, const ParameterPoint& point, int sensor, long k,
                 std::mt19937_64& rng);

/// Average L2 pmf distortion between the attacked and unattacked hypotheses
/// of sensor j, (1/K_j) sum_k ||q~ - q||_2, evaluated at the group's tau.
double pmf_distortion(const NetworkModel& model, const ParameterPoint& point, int sensor);

/// Same distortion for an explicit per-sensor xi (estimator-side use).
double sensor_distortion(const Sensor& sensor, const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& xi);

/// Gradient of sensor_distortion w.r.t. [theta; xi], stacked in that order.
Eigen::VectorXd sensor_distortion_gradient(const Sensor& sensor, const Eigen::VectorXd& theta,
                                           const Eigen::VectorXd& xi);

}  // namespace qspoof
