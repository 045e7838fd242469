#pragma once

// Test-only helpers: model builders and independent numeric oracles (finite
// differences, golden-section search). These must not reuse the library's
// derivative paths they are checking.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "qspoof/model.hpp"
#include "qspoof/pmf.hpp"

namespace testutil {

inline double fd_step(double value) {
  static const double cbrt_eps = std::cbrt(std::numeric_limits<double>::epsilon());
  return cbrt_eps * (1.0 + std::abs(value));
}

/// Central-difference derivative of a scalar->vector map.
inline Eigen::VectorXd central_diff(const std::function<Eigen::VectorXd(double)>& f, double x) {
  const double h = fd_step(x);
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Golden-section maximizer of a unimodal scalar function on [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo, double hi,
                         double tol = 1e-10) {
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

inline qspoof::Sensor gaussian_mean_sensor(std::vector<double> thresholds, double noise_var = 1.0,
                                           long repeats = 1) {
  qspoof::Sensor s;
  s.quantizer = qspoof::Quantizer(std::move(thresholds));
  s.family.kind = qspoof::FamilyKind::GaussianMean;
  s.family.noise_var = noise_var;
  s.family.mean_index = 0;
  s.repeats = repeats;
  s.attack.form = qspoof::AttackForm::AdditiveMeanOffset;
  s.attack.dim = 1;
  return s;
}

inline qspoof::Sensor pulse_sensor(int samples, double noise_var = 5.0, long repeats = 1) {
  qspoof::Sensor s;
  std::vector<double> thr;
  for (int v = -5; v <= 9; ++v) thr.push_back(v);
  s.quantizer = qspoof::Quantizer(thr);
  s.family.kind = qspoof::FamilyKind::GaussianPulseDelay;
  s.family.noise_var = noise_var;
  s.family.energy = 1.0;
  s.family.amplitude = 1.0;
  s.family.pulse_width = 0.1;
  for (int m = 0; m < samples; ++m) s.family.sample_times.push_back(m * 0.001);
  s.family.delay_index = 0;
  s.repeats = repeats;
  s.attack.form = qspoof::AttackForm::DelayOffset;
  s.attack.dim = 1;
  return s;
}

/// Single-group network of identical sensors; the first `attacked` sensors
/// form singleton groups.
inline qspoof::NetworkModel singleton_network(const qspoof::Sensor& proto, int n, int attacked,
                                              int d_theta = 1) {
  qspoof::NetworkModel model;
  model.d_theta = d_theta;
  for (int j = 0; j < n; ++j) model.sensors.push_back(proto);
  for (int j = 0; j < attacked; ++j) model.groups.push_back({{j}});
  return model;
}

}  // namespace testutil
