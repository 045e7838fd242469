#pragma once

#include <Eigen/Dense>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qspoof/quantizer.hpp"

namespace qspoof {

/// Error thrown for invalid models, parameter points, or evaluation at
/// impossible parameters (e.g. nonpositive variance).
class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

/// Before-attack observation distribution of one sensor. All built-in
/// families are Gaussian with a parameter-dependent mean and variance.
enum class FamilyKind {
  GaussianMean,          // mean = theta[mean_index], fixed variance
  GaussianMeanVariance,  // mean = theta[mean_index], variance = theta[var_index]
  GaussianPulseDelay,    // mean = sqrt(E)*a*s(t_m - theta[delay_index]), fixed variance
  LinearGaussian,        // mean = h . theta, fixed variance
};

struct ObservationFamily {
  FamilyKind kind = FamilyKind::GaussianMean;
  double noise_var = 1.0;  // sigma^2; ignored for GaussianMeanVariance
  int mean_index = 0;
  int var_index = 1;
  // GaussianPulseDelay: unit-energy Gaussian pulse of width T sampled at the
  // given per-pattern times.
  double energy = 1.0;
  double amplitude = 1.0;
  double pulse_width = 1.0;
  std::vector<double> sample_times;
  int delay_index = 0;
  // LinearGaussian
  Eigen::VectorXd h;

  /// Number of distinct per-sample statistical patterns; samples k repeat the
  /// pattern cycle (k-1) mod pattern_count().
  int pattern_count() const {
    return kind == FamilyKind::GaussianPulseDelay ? static_cast<int>(sample_times.size()) : 1;
  }

  bool operator==(const ObservationFamily& other) const;
};

/// Functional form of the hypothesized attack at a sensor: how the
/// after-attack distribution derives from the before-attack family and the
/// attack parameter vector xi.
enum class AttackForm {
  ParameterShift,         // g(x | theta, xi) = f(x | shift_scale*theta + xi); dim == D_theta
  AdditiveMeanOffset,     // mean += xi[0]
  MeanAndVarianceOffset,  // mean += xi[0], variance += xi[1]
  DelayOffset,            // pulse delay += xi[0] (DRFM)
  OverparamAdditive,      // mean += sum_i xi[i]*basis(i, pattern)
};

struct AttackModel {
  AttackForm form = AttackForm::AdditiveMeanOffset;
  int dim = 1;
  double shift_scale = 1.0;   // lambda for ParameterShift
  Eigen::MatrixXd basis;      // OverparamAdditive: dim x pattern_count

  /// Declared shift scale when the form is structurally of the
  /// parameter-shift class, nothing otherwise.
  std::optional<double> declared_shift() const {
    if (form == AttackForm::ParameterShift) return shift_scale;
    if (form == AttackForm::DelayOffset) return 1.0;
    return std::nullopt;
  }

  bool operator==(const AttackModel& other) const;
};

struct Sensor {
  Quantizer quantizer;
  ObservationFamily family;
  long repeats = 1;    // i.i.d. repetitions of the pattern block
  AttackModel attack;  // attack form hypothesized for this sensor

  /// Distinct per-sample statistical patterns: the family cycle joined with
  /// the attack-basis cycle (over-parameterized attacks may vary with k).
  int pattern_count() const {
    int m = family.pattern_count();
    if (attack.form == AttackForm::OverparamAdditive && attack.basis.cols() > 0)
      m = static_cast<int>(std::lcm<long>(m, attack.basis.cols()));
    return m;
  }
  long sample_count() const { return repeats * pattern_count(); }
  int pattern_of(long k) const { return static_cast<int>((k - 1) % pattern_count()); }
};

/// One group of sensors attacked with a common attack parameter vector.
struct AttackGroup {
  std::vector<int> sensors;  // 0-based sensor indices
};

/// Sensor network: quantizers, observation families, the attack-group
/// partition, and parameter dimensions.
struct NetworkModel {
  int d_theta = 1;
  std::vector<Sensor> sensors;
  std::vector<AttackGroup> groups;  // groups[p-1] is A_p, p = 1..P

  int sensor_count() const { return static_cast<int>(sensors.size()); }
  int group_count() const { return static_cast<int>(groups.size()); }

  /// Attack dimension D_p of group p in 1..P.
  int group_dim(int p) const;

  /// Group of a sensor: 0 if unattacked, else p in 1..P.
  int group_of(int sensor) const;

  /// Sensors in A_0 (unattacked), ascending.
  std::vector<int> unattacked() const;

  /// D_theta + sum_p D_p.
  int joint_dim() const;

  /// sum over j in A_p of K_j * (R_j - 1): the rank bound for J_tau.
  long group_rank_bound(int p) const;

  /// Index of the class of sensors sharing an identical (family, quantizer)
  /// pair; used to share before-attack pmf evaluations.
  std::vector<int> family_classes() const;

  /// Throws ModelError when structurally invalid (overlapping groups, bad
  /// dimensions, empty groups, nonpositive variances, ...).
  void validate() const;
};

/// Joint parameter point Theta = [theta; tau^(1); ...; tau^(P)].
struct ParameterPoint {
  Eigen::VectorXd theta;
  std::vector<Eigen::VectorXd> tau;

  /// Throws ModelError unless dimensions match the model.
  void check_dims(const NetworkModel& model) const;
};

}  // namespace qspoof
