#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "qspoof/pmf.hpp"
#include "qspoof/quantizer.hpp"
#include "qspoof/random.hpp"

using namespace qspoof;

namespace {

std::vector<double> radar_thresholds() {
  std::vector<double> t;
  for (int v = -5; v <= 9; ++v) t.push_back(v);
  return t;
}

double norm_cdf_oracle(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Finite-difference pmf derivative w.r.t. one parameter component, via the
/// value-only pmf path.
Eigen::VectorXd fd_pmf_row(const Sensor& s, const Eigen::VectorXd& theta,
                           const Eigen::VectorXd* xi, int pattern, bool wrt_theta, int comp) {
  auto eval = [&](double v) {
    Eigen::VectorXd th = theta;
    Eigen::VectorXd x = xi ? *xi : Eigen::VectorXd();
    if (wrt_theta) th[comp] = v;
    else x[comp] = v;
    return sensor_pmf(s, th, xi ? &x : nullptr, pattern);
  };
  const double base = wrt_theta ? theta[comp] : (*xi)[comp];
  return testutil::central_diff(eval, base);
}

}  // namespace

TEST_CASE("quantizer: boundary convention and region count") {
  Quantizer q(radar_thresholds());
  CHECK(q.levels() == 16);
  CHECK(q.quantize(-6.0) == 1);
  CHECK(q.quantize(-5.0) == 1);  // boundary belongs to the lower region
  CHECK(q.quantize(-4.999) == 2);
  CHECK(q.quantize(10.0) == 16);
  CHECK(q.quantize(9.0) == 15);
  CHECK_THROWS_AS(q.quantize(std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
  CHECK_THROWS_AS(Quantizer({1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("pmf: gaussian-mean examples against the normal-cdf oracle") {
  Sensor s = testutil::gaussian_mean_sensor({0.0});
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(1);
  const PmfBundle b = sensor_pmf_bundle(s, theta, nullptr, 0);
  CHECK(b.pmf[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(b.pmf[1] == doctest::Approx(0.5).epsilon(1e-12));

  Sensor s2 = testutil::gaussian_mean_sensor({-1.0, 1.0});
  const PmfBundle b2 = sensor_pmf_bundle(s2, theta, nullptr, 0);
  const double lo = norm_cdf_oracle(-1.0);
  const double mid = norm_cdf_oracle(1.0) - norm_cdf_oracle(-1.0);
  CHECK(b2.pmf[0] == doctest::Approx(lo).epsilon(1e-12));
  CHECK(b2.pmf[1] == doctest::Approx(mid).epsilon(1e-12));
  CHECK(b2.pmf[2] == doctest::Approx(lo).epsilon(1e-12));
  CHECK(b2.pmf[0] == doctest::Approx(0.158655).epsilon(1e-5));
  CHECK(b2.pmf[1] == doctest::Approx(0.682689).epsilon(1e-5));
}

TEST_CASE("pmf: d_theta equals the cdf-difference derivative") {
  Sensor s = testutil::gaussian_mean_sensor({0.0});
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(1);
  const PmfBundle b = sensor_pmf_bundle(s, theta, nullptr, 0);
  const double phi0 = 0.3989422804014327;
  CHECK(b.d_theta(0, 0) == doctest::Approx(-phi0).epsilon(1e-10));
  CHECK(b.d_theta(0, 1) == doctest::Approx(phi0).epsilon(1e-10));
  const Eigen::VectorXd fd = fd_pmf_row(s, theta, nullptr, 0, true, 0);
  CHECK((b.d_theta.row(0).transpose() - fd).norm() < 1e-8);
}

TEST_CASE("pmf: analytic derivatives match central differences on randomized models") {
  std::mt19937_64 rng(20240601);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int kind = trial % 4;
    Sensor s;
    std::vector<double> thr;
    const int nthr = 1 + static_cast<int>(rng() % 6);
    double t = -2.0 + uniform_unit(rng);
    for (int i = 0; i < nthr; ++i) {
      thr.push_back(t);
      t += 0.3 + uniform_unit(rng);
    }
    s.quantizer = Quantizer(thr);
    Eigen::VectorXd theta;
    if (kind == 0) {
      s = testutil::gaussian_mean_sensor(thr, 0.5 + uniform_unit(rng));
      s.attack.form = AttackForm::AdditiveMeanOffset;
      theta = Eigen::VectorXd::Constant(1, standard_normal(rng));
    } else if (kind == 1) {
      s.family.kind = FamilyKind::GaussianMeanVariance;
      s.family.mean_index = 0;
      s.family.var_index = 1;
      s.attack.form = AttackForm::MeanAndVarianceOffset;
      s.attack.dim = 2;
      theta = Eigen::VectorXd(2);
      theta << standard_normal(rng), 1.0 + uniform_unit(rng);
    } else if (kind == 2) {
      s = testutil::pulse_sensor(3, 2.0 + uniform_unit(rng));
      s.quantizer = Quantizer(thr);
      theta = Eigen::VectorXd::Constant(1, 0.05 * standard_normal(rng));
    } else {
      s.family.kind = FamilyKind::LinearGaussian;
      s.family.noise_var = 0.5 + uniform_unit(rng);
      s.family.h = Eigen::Vector2d(standard_normal(rng), standard_normal(rng));
      s.attack.form = AttackForm::ParameterShift;
      s.attack.shift_scale = 0.5 + uniform_unit(rng);
      s.attack.dim = 2;
      theta = Eigen::Vector2d(standard_normal(rng), standard_normal(rng));
    }
    Eigen::VectorXd xi(s.attack.dim);
    for (int i = 0; i < xi.size(); ++i) xi[i] = 0.3 * standard_normal(rng);
    if (s.attack.form == AttackForm::MeanAndVarianceOffset) xi[1] = std::abs(xi[1]);

    for (int pattern = 0; pattern < s.pattern_count(); ++pattern) {
      const PmfBundle attacked = sensor_pmf_bundle(s, theta, &xi, pattern);
      const PmfBundle clean = sensor_pmf_bundle(s, theta, nullptr, pattern);
      for (int c = 0; c < theta.size(); ++c) {
        const Eigen::VectorXd fd_att = fd_pmf_row(s, theta, &xi, pattern, true, c);
        const Eigen::VectorXd fd_cln = fd_pmf_row(s, theta, nullptr, pattern, true, c);
        const double scale_att = std::max(fd_att.cwiseAbs().maxCoeff(), 1e-3);
        const double scale_cln = std::max(fd_cln.cwiseAbs().maxCoeff(), 1e-3);
        CHECK((attacked.d_theta.row(c).transpose() - fd_att).cwiseAbs().maxCoeff() / scale_att <
              1e-6);
        CHECK((clean.d_theta.row(c).transpose() - fd_cln).cwiseAbs().maxCoeff() / scale_cln < 1e-6);
      }
      for (int c = 0; c < xi.size(); ++c) {
        const Eigen::VectorXd fd = fd_pmf_row(s, theta, &xi, pattern, false, c);
        const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-3);
        CHECK((attacked.d_xi.row(c).transpose() - fd).cwiseAbs().maxCoeff() / scale < 1e-6);
      }
      ++checked;
    }
  }
  CHECK(checked >= 80);
}

TEST_CASE("pmf: normalization and zero-sum derivative rows") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Sensor s = testutil::pulse_sensor(2, 1.0 + uniform_unit(rng));
    const Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 0.02 * standard_normal(rng));
    const Eigen::VectorXd xi = Eigen::VectorXd::Constant(1, 0.05 * standard_normal(rng));
    const PmfBundle b = sensor_pmf_bundle(s, theta, &xi, 0);
    CHECK(std::abs(b.pmf.sum() - 1.0) < 1e-12);
    CHECK((b.pmf.array() > 0).all());
    for (int c = 0; c < b.d_theta.rows(); ++c) CHECK(std::abs(b.d_theta.row(c).sum()) < 1e-10);
    for (int c = 0; c < b.d_xi.rows(); ++c) CHECK(std::abs(b.d_xi.row(c).sum()) < 1e-10);
  }
}

TEST_CASE("pmf: parameter-shift families satisfy the shift identity") {
  std::mt19937_64 rng(99);
  Sensor s;
  s.quantizer = Quantizer({-1.0, 0.5, 2.0});
  s.family.kind = FamilyKind::LinearGaussian;
  s.family.noise_var = 1.3;
  s.family.h = Eigen::Vector2d(0.8, -0.6);
  s.attack.form = AttackForm::ParameterShift;
  s.attack.dim = 2;
  for (double lambda : {1.0, 2.0, -0.7}) {
    s.attack.shift_scale = lambda;
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::VectorXd theta = Eigen::Vector2d(standard_normal(rng), standard_normal(rng));
      const Eigen::VectorXd xi = Eigen::Vector2d(standard_normal(rng), standard_normal(rng));
      const Eigen::VectorXd delta = Eigen::Vector2d(standard_normal(rng), standard_normal(rng));
      const Eigen::VectorXd p1 = sensor_pmf(s, theta, &xi, 0);
      const Eigen::VectorXd theta2 = theta + delta;
      const Eigen::VectorXd xi2 = xi - lambda * delta;
      const Eigen::VectorXd p2 = sensor_pmf(s, theta2, &xi2, 0);
      CHECK((p1 - p2).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("sample_level: degenerate, binomial, and total-variation checks") {
  // Degenerate variance: all mass in the region containing the mean.
  Sensor tight = testutil::gaussian_mean_sensor({0.0, 1.0}, 1e-12);
  NetworkModel m1 = testutil::singleton_network(tight, 1, 0);
  ParameterPoint pt1{Eigen::VectorXd::Constant(1, 0.5), {}};
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) CHECK(sample_level(m1, pt1, 0, 1, rng) == 2);

  // Bernoulli frequency at 1e5 draws.
  Sensor bern = testutil::gaussian_mean_sensor({0.0});
  NetworkModel m2 = testutil::singleton_network(bern, 1, 0);
  ParameterPoint pt2{Eigen::VectorXd::Zero(1), {}};
  long count1 = 0;
  const int n = 100000;
  std::mt19937_64 rng2(2);
  for (int i = 0; i < n; ++i)
    if (sample_level(m2, pt2, 0, 1, rng2) == 1) ++count1;
  CHECK(std::abs(count1 / static_cast<double>(n) - 0.5) < 0.01);

  // Radar preset sensor at fixed k: empirical pmf close to the analytic one.
  Sensor radar = testutil::pulse_sensor(3);
  NetworkModel m3 = testutil::singleton_network(radar, 1, 1);
  ParameterPoint pt3{Eigen::VectorXd::Constant(1, 0.02), {Eigen::VectorXd::Constant(1, 0.04)}};
  const Eigen::VectorXd analytic = pmf_bundle(m3, pt3, 0, 1, true).pmf;
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(16);
  std::mt19937_64 rng3(3);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) freq[sample_level(m3, pt3, 0, 1, rng3) - 1] += 1.0;
  freq /= draws;
  CHECK(0.5 * (freq - analytic).cwiseAbs().sum() < 0.02);

  // Convergence contract: TV < 3*sqrt(R/n) at n = 1e5.
  Eigen::VectorXd freq2 = Eigen::VectorXd::Zero(16);
  std::mt19937_64 rng4(4);
  for (int i = 0; i < n; ++i) freq2[sample_level(m3, pt3, 0, 1, rng4) - 1] += 1.0;
  freq2 /= n;
  CHECK(0.5 * (freq2 - analytic).cwiseAbs().sum() < 3.0 * std::sqrt(16.0 / n));

  // Identical stream and inputs give identical outputs.
  std::mt19937_64 ra(42), rb(42);
  for (int i = 0; i < 100; ++i)
    CHECK(sample_level(m3, pt3, 0, 1, ra) == sample_level(m3, pt3, 0, 1, rb));
}

TEST_CASE("pmf_distortion: zero at identical pmfs, radar admissibility, frozen value") {
  // tau = 0 makes the attacked hypothesis coincide with the clean family.
  Sensor radar = testutil::pulse_sensor(3);
  NetworkModel model = testutil::singleton_network(radar, 2, 1);
  ParameterPoint zero{Eigen::VectorXd::Constant(1, 0.02), {Eigen::VectorXd::Zero(1)}};
  CHECK(pmf_distortion(model, zero, 0) == doctest::Approx(0.0).epsilon(1e-12));

  // Radar scenario significance level: xi = 0.04 must clear d_q = 0.15.
  ParameterPoint attacked{Eigen::VectorXd::Constant(1, 0.02),
                          {Eigen::VectorXd::Constant(1, 0.04)}};
  CHECK(pmf_distortion(model, attacked, 0) >= 0.15);

  // Hand value: ||[0.5,0.5]-[0.9,0.1]|| = sqrt(0.32).
  Sensor bern = testutil::gaussian_mean_sensor({0.0});
  const Eigen::VectorXd p = sensor_pmf(bern, Eigen::VectorXd::Zero(1), nullptr, 0);
  Eigen::VectorXd q(2);
  q << 0.9, 0.1;
  CHECK((p - q).norm() == doctest::Approx(0.5656854249492381).epsilon(1e-12));
}

TEST_CASE("pmf bundle: errors on invalid parameters") {
  Sensor s;
  s.quantizer = Quantizer({0.0});
  s.family.kind = FamilyKind::GaussianMeanVariance;
  s.family.mean_index = 0;
  s.family.var_index = 1;
  s.attack.form = AttackForm::MeanAndVarianceOffset;
  s.attack.dim = 2;
  Eigen::VectorXd theta(2);
  theta << 0.0, 1.0;
  Eigen::VectorXd bad_xi(2);
  bad_xi << 0.0, -2.0;  // variance would become -1
  CHECK_THROWS_AS(sensor_pmf(s, theta, &bad_xi, 0), ModelError);
  Eigen::VectorXd nan_theta(2);
  nan_theta << std::numeric_limits<double>::quiet_NaN(), 1.0;
  CHECK_THROWS_AS(sensor_pmf(s, nan_theta, nullptr, 0), ModelError);
}
