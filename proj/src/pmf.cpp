#include "qspoof/pmf.hpp"

#include <cmath>
#include <limits>

#include "qspoof/random.hpp"

namespace qspoof {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double norm_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }
double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

/// Gaussian pulse of width T, unit energy: s(t) = (2/T^2)^(1/4) exp(-pi t^2 / T^2).
double pulse_value(double t, double T) {
  return std::pow(2.0 / (T * T), 0.25) * std::exp(-M_PI * t * t / (T * T));
}

/// Before-attack moments of the family at theta for one pattern.
GaussMoments base_moments(const ObservationFamily& f, const Eigen::VectorXd& theta, int pattern) {
  GaussMoments mm;
  const int d = static_cast<int>(theta.size());
  mm.dmean_dtheta = Eigen::VectorXd::Zero(d);
  mm.dvar_dtheta = Eigen::VectorXd::Zero(d);
  switch (f.kind) {
    case FamilyKind::GaussianMean:
      mm.mean = theta[f.mean_index];
      mm.var = f.noise_var;
      mm.dmean_dtheta[f.mean_index] = 1.0;
      break;
    case FamilyKind::GaussianMeanVariance:
      mm.mean = theta[f.mean_index];
      mm.var = theta[f.var_index];
      mm.dmean_dtheta[f.mean_index] = 1.0;
      mm.dvar_dtheta[f.var_index] = 1.0;
      break;
    case FamilyKind::GaussianPulseDelay: {
      const double t = f.sample_times[pattern % f.sample_times.size()] - theta[f.delay_index];
      const double T = f.pulse_width;
      mm.mean = std::sqrt(f.energy) * f.amplitude * pulse_value(t, T);
      mm.var = f.noise_var;
      // d mean / d delay = mean * 2 pi (t - delay) / T^2
      mm.dmean_dtheta[f.delay_index] = mm.mean * 2.0 * M_PI * t / (T * T);
      break;
    }
    case FamilyKind::LinearGaussian:
      mm.mean = f.h.dot(theta);
      mm.var = f.noise_var;
      mm.dmean_dtheta = f.h;
      break;
  }
  return mm;
}

}  // namespace

GaussMoments observation_moments(const Sensor& sensor, const Eigen::VectorXd& theta,
                                 const Eigen::VectorXd* xi, int pattern) {
  if (!theta.allFinite()) throw ModelError("non-finite theta");
  if (xi == nullptr) {
    GaussMoments mm = base_moments(sensor.family, theta, pattern);
    mm.dmean_dxi.resize(0);
    mm.dvar_dxi.resize(0);
    if (!(mm.var > 0)) throw ModelError("observation variance must be positive");
    return mm;
  }
  const AttackModel& a = sensor.attack;
  if (xi->size() != a.dim) throw ModelError("xi has wrong dimension");
  if (!xi->allFinite()) throw ModelError("non-finite xi");

  GaussMoments mm;
  switch (a.form) {
    case AttackForm::ParameterShift: {
      const Eigen::VectorXd shifted = a.shift_scale * theta + *xi;
      mm = base_moments(sensor.family, shifted, pattern);
      mm.dmean_dxi = mm.dmean_dtheta;
      mm.dvar_dxi = mm.dvar_dtheta;
      mm.dmean_dtheta = a.shift_scale * mm.dmean_dxi;
      mm.dvar_dtheta = a.shift_scale * mm.dvar_dxi;
      break;
    }
    case AttackForm::AdditiveMeanOffset:
      mm = base_moments(sensor.family, theta, pattern);
      mm.mean += (*xi)[0];
      mm.dmean_dxi = Eigen::VectorXd::Ones(1);
      mm.dvar_dxi = Eigen::VectorXd::Zero(1);
      break;
    case AttackForm::MeanAndVarianceOffset:
      mm = base_moments(sensor.family, theta, pattern);
      mm.mean += (*xi)[0];
      mm.var += (*xi)[1];
      mm.dmean_dxi = Eigen::VectorXd::Zero(2);
      mm.dvar_dxi = Eigen::VectorXd::Zero(2);
      mm.dmean_dxi[0] = 1.0;
      mm.dvar_dxi[1] = 1.0;
      break;
    case AttackForm::DelayOffset: {
      Eigen::VectorXd shifted = theta;
      shifted[sensor.family.delay_index] += (*xi)[0];
      mm = base_moments(sensor.family, shifted, pattern);
      mm.dmean_dxi = Eigen::VectorXd::Constant(1, mm.dmean_dtheta[sensor.family.delay_index]);
      mm.dvar_dxi = Eigen::VectorXd::Constant(1, mm.dvar_dtheta[sensor.family.delay_index]);
      break;
    }
    case AttackForm::OverparamAdditive: {
      mm = base_moments(sensor.family, theta, pattern);
      const int col = pattern % static_cast<int>(a.basis.cols());
      mm.mean += a.basis.col(col).dot(*xi);
      mm.dmean_dxi = a.basis.col(col);
      mm.dvar_dxi = Eigen::VectorXd::Zero(a.dim);
      break;
    }
  }
  if (!(mm.var > 0)) throw ModelError("variance not positive after applying attack offsets");
  return mm;
}

namespace {

/// Pmf and analytic first derivatives from the moments: p_r = F(t_r) - F(t_{r-1})
/// with F the Gaussian cdf; dF/du = -phi(z)/sigma * (dm/du + z dv/du / (2 sigma)).
void first_order(const Quantizer& q, const GaussMoments& mm, Eigen::VectorXd& pmf,
                 Eigen::MatrixXd& d_theta, Eigen::MatrixXd& d_xi) {
  const int R = q.levels();
  const int dt = static_cast<int>(mm.dmean_dtheta.size());
  const int dx = static_cast<int>(mm.dmean_dxi.size());
  const double sigma = std::sqrt(mm.var);

  pmf.resize(R);
  d_theta.setZero(dt, R);
  d_xi.setZero(dx, R);

  double cdf_prev = 0.0;
  Eigen::VectorXd dth_prev = Eigen::VectorXd::Zero(dt);
  Eigen::VectorXd dxi_prev = Eigen::VectorXd::Zero(dx);
  for (int r = 1; r <= R; ++r) {
    double cdf_cur;
    Eigen::VectorXd dth_cur, dxi_cur;
    if (r == R) {
      cdf_cur = 1.0;
      dth_cur = Eigen::VectorXd::Zero(dt);
      dxi_cur = Eigen::VectorXd::Zero(dx);
    } else {
      const double z = (q.thresholds()[r - 1] - mm.mean) / sigma;
      cdf_cur = norm_cdf(z);
      const double w = -norm_pdf(z) / sigma;
      const double half_z_over_sigma = 0.5 * z / sigma;
      dth_cur = w * (mm.dmean_dtheta + half_z_over_sigma * mm.dvar_dtheta);
      dxi_cur = w * (mm.dmean_dxi + half_z_over_sigma * mm.dvar_dxi);
    }
    pmf[r - 1] = cdf_cur - cdf_prev;
    d_theta.col(r - 1) = dth_cur - dth_prev;
    d_xi.col(r - 1) = dxi_cur - dxi_prev;
    cdf_prev = cdf_cur;
    dth_prev.swap(dth_cur);
    dxi_prev.swap(dxi_cur);
  }

  double total = 0.0;
  for (int r = 0; r < R; ++r) {
    if (pmf[r] < kPmfFloor) pmf[r] = kPmfFloor;
    total += pmf[r];
  }
  pmf /= total;
}

double fd_step(double value) {
  static const double cbrt_eps = std::cbrt(std::numeric_limits<double>::epsilon());
  return cbrt_eps * (1.0 + std::abs(value));
}

}  // namespace

PmfBundle sensor_pmf_bundle(const Sensor& sensor, const Eigen::VectorXd& theta,
                            const Eigen::VectorXd* xi, int pattern, bool want_second) {
  PmfBundle b;
  const GaussMoments mm = observation_moments(sensor, theta, xi, pattern);
  first_order(sensor.quantizer, mm, b.pmf, b.d_theta, b.d_xi);
  if (!want_second) return b;

  const int R = sensor.quantizer.levels();
  const int dt = static_cast<int>(theta.size());
  const int dx = static_cast<int>(b.d_xi.rows());
  b.d2_tt.setZero(dt * dt, R);
  b.d2_tx.setZero(dt * dx, R);
  b.d2_xx.setZero(dx * dx, R);
  b.has_second = true;

  // Second derivatives: central differences of the analytic first derivatives.
  Eigen::VectorXd p_dummy;
  Eigen::MatrixXd dth_hi, dth_lo, dxi_hi, dxi_lo;
  for (int m = 0; m < dt; ++m) {
    Eigen::VectorXd th = theta;
    const double h = fd_step(theta[m]);
    th[m] = theta[m] + h;
    first_order(sensor.quantizer, observation_moments(sensor, th, xi, pattern), p_dummy, dth_hi, dxi_hi);
    th[m] = theta[m] - h;
    first_order(sensor.quantizer, observation_moments(sensor, th, xi, pattern), p_dummy, dth_lo, dxi_lo);
    const double inv2h = 1.0 / (2.0 * h);
    for (int l = 0; l < dt; ++l)
      b.d2_tt.row(l + m * dt) = (dth_hi.row(l) - dth_lo.row(l)) * inv2h;
  }
  if (dx > 0) {
    for (int m = 0; m < dx; ++m) {
      Eigen::VectorXd x = *xi;
      const double h = fd_step(x[m]);
      x[m] = (*xi)[m] + h;
      first_order(sensor.quantizer, observation_moments(sensor, theta, &x, pattern), p_dummy, dth_hi, dxi_hi);
      x[m] = (*xi)[m] - h;
      first_order(sensor.quantizer, observation_moments(sensor, theta, &x, pattern), p_dummy, dth_lo, dxi_lo);
      const double inv2h = 1.0 / (2.0 * h);
      for (int l = 0; l < dt; ++l)
        b.d2_tx.row(l + m * dt) = (dth_hi.row(l) - dth_lo.row(l)) * inv2h;
      for (int l = 0; l < dx; ++l)
        b.d2_xx.row(l + m * dx) = (dxi_hi.row(l) - dxi_lo.row(l)) * inv2h;
    }
    // Symmetrize the pure second-derivative blocks.
    for (int l = 0; l < dx; ++l)
      for (int m = l + 1; m < dx; ++m) {
        const Eigen::RowVectorXd avg =
            0.5 * (b.d2_xx.row(l + m * dx) + b.d2_xx.row(m + l * dx));
        b.d2_xx.row(l + m * dx) = avg;
        b.d2_xx.row(m + l * dx) = avg;
      }
  }
  for (int l = 0; l < dt; ++l)
    for (int m = l + 1; m < dt; ++m) {
      const Eigen::RowVectorXd avg = 0.5 * (b.d2_tt.row(l + m * dt) + b.d2_tt.row(m + l * dt));
      b.d2_tt.row(l + m * dt) = avg;
      b.d2_tt.row(m + l * dt) = avg;
    }
  return b;
}

Eigen::VectorXd sensor_pmf(const Sensor& sensor, const Eigen::VectorXd& theta,
                           const Eigen::VectorXd* xi, int pattern) {
  const GaussMoments mm = observation_moments(sensor, theta, xi, pattern);
  const Quantizer& q = sensor.quantizer;
  const int R = q.levels();
  const double sigma = std::sqrt(mm.var);
  Eigen::VectorXd pmf(R);
  double prev = 0.0;
  for (int r = 1; r <= R; ++r) {
    const double cur = (r == R) ? 1.0 : norm_cdf((q.thresholds()[r - 1] - mm.mean) / sigma);
    pmf[r - 1] = cur - prev;
    prev = cur;
  }
  double total = 0.0;
  for (int r = 0; r < R; ++r) {
    if (pmf[r] < kPmfFloor) pmf[r] = kPmfFloor;
    total += pmf[r];
  }
  pmf /= total;
  return pmf;
}

namespace {

const Eigen::VectorXd* group_xi(const NetworkModel& model, const ParameterPoint& point, int sensor,
                                bool attacked) {
  if (!attacked) return nullptr;
  const int p = model.group_of(sensor);
  if (p == 0) throw ModelError("attacked hypothesis requested for a sensor outside every group");
  return &point.tau[p - 1];
}

}  // namespace

PmfBundle pmf_bundle(const NetworkModel& model, const ParameterPoint& point, int sensor, long k,
                     bool attacked_hypothesis, bool want_second) {
  point.check_dims(model);
  const Sensor& s = model.sensors[sensor];
  if (k < 1 || k > s.sample_count()) throw ModelError("sample index out of range");
  return sensor_pmf_bundle(s, point.theta, group_xi(model, point, sensor, attacked_hypothesis),
                           s.pattern_of(k), want_second);
}

int sample_level(const NetworkModel& model, const ParameterPoint& point, int sensor, long k,
                 std::mt19937_64& rng) {
  const Sensor& s = model.sensors[sensor];
  if (k < 1 || k > s.sample_count()) throw ModelError("sample index out of range");
  const int p = model.group_of(sensor);
  const Eigen::VectorXd* xi = (p == 0) ? nullptr : &point.tau[p - 1];
  const GaussMoments mm = observation_moments(s, point.theta, xi, s.pattern_of(k));
  const double x = mm.mean + std::sqrt(mm.var) * standard_normal(rng);
  return s.quantizer.quantize(x);
}

double sensor_distortion(const Sensor& sensor, const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& xi) {
  const int M = sensor.pattern_count();
  double acc = 0.0;
  for (int m = 0; m < M; ++m)
    acc += (sensor_pmf(sensor, theta, &xi, m) - sensor_pmf(sensor, theta, nullptr, m)).norm();
  return acc / M;
}

double pmf_distortion(const NetworkModel& model, const ParameterPoint& point, int sensor) {
  point.check_dims(model);
  const int p = model.group_of(sensor);
  if (p == 0) throw ModelError("pmf_distortion: sensor has no attacked hypothesis");
  return sensor_distortion(model.sensors[sensor], point.theta, point.tau[p - 1]);
}

Eigen::VectorXd sensor_distortion_gradient(const Sensor& sensor, const Eigen::VectorXd& theta,
                                           const Eigen::VectorXd& xi) {
  const int M = sensor.pattern_count();
  const int dt = static_cast<int>(theta.size());
  const int dx = static_cast<int>(xi.size());
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(dt + dx);
  for (int m = 0; m < M; ++m) {
    const PmfBundle before = sensor_pmf_bundle(sensor, theta, nullptr, m);
    const PmfBundle after = sensor_pmf_bundle(sensor, theta, &xi, m);
    const Eigen::VectorXd delta = after.pmf - before.pmf;
    const double nrm = delta.norm();
    if (nrm < 1e-300) continue;  // subgradient 0 at the kink
    grad.head(dt) += ((after.d_theta - before.d_theta) * delta) / nrm;
    grad.tail(dx) += (after.d_xi * delta) / nrm;
  }
  return grad / M;
}

}  // namespace qspoof
