#include "qspoof/classifier.hpp"

#include <cmath>

#include "qspoof/pmf.hpp"

namespace qspoof {

AttackVerdict classify_group(const NetworkModel& model, const ParameterPoint& point, int p,
                             const NumericOptions& opts) {
  if (p < 1 || p > model.group_count()) throw ModelError("classify_group: group index out of range");
  AttackVerdict v;
  v.group = p;
  const int dp = model.group_dim(p);
  v.dim = dp;
  v.rank_bound = model.group_rank_bound(p);
  v.dimension_check = dp > v.rank_bound;

  const PhiPair phi = build_phi(model, point, p);
  if (!phi.phi_theta.allFinite() || !phi.phi_tau.allFinite())
    throw ModelError("classify_group: non-finite phi entries");

  const SvdFactors tau_svd = svd_factors(phi.phi_tau, opts);
  v.rank_j_tau = tau_svd.rank;
  v.singular_values = tau_svd.singular_values.array().square();
  v.is_isa = v.rank_j_tau < dp;

  // Range-inclusion test of Theorem-2 type: project the stacked theta-score
  // directions onto range(phi_tau^T) and measure what is left.
  const Eigen::MatrixXd theta_t = phi.phi_theta.transpose();  // M_p x D_theta
  const Eigen::MatrixXd v_r = tau_svd.v.leftCols(tau_svd.rank);
  const Eigen::MatrixXd residual = theta_t - v_r * (v_r.transpose() * theta_t);
  v.inclusion_residual = residual.norm() / std::max(1.0, phi.phi_theta.norm());

  // Information-loss route (equality case of the CRB upper bound).
  const Eigen::MatrixXd j_ap = phi.phi_theta * theta_t;
  const Eigen::MatrixXd j_tau = phi.phi_tau * phi.phi_tau.transpose();
  bool loss_small = false;
  if (!v.is_isa) {
    const SymInverse inv_tau = sym_inverse(j_tau, opts);
    if (!inv_tau.singular) {
      const Eigen::MatrixXd loss =
          j_ap - (phi.phi_theta * phi.phi_tau.transpose()) * inv_tau.inverse *
                     (phi.phi_tau * theta_t);
      v.information_loss_norm = loss.norm();
      loss_small = v.information_loss_norm < opts.info_loss_tol * std::max(1.0, j_ap.norm());
    }
  } else {
    v.information_loss_norm = j_ap.norm();
  }

  v.is_oesa = !v.is_isa && v.inclusion_residual < opts.inclusion_tol;
  v.paths_agree = v.is_isa || (v.is_oesa == loss_small);
  v.is_ogdsa_component = v.is_isa || v.is_oesa;

  if (model.sensors[model.groups[p - 1].sensors.front()].attack.declared_shift()) {
    try {
      v.point_independent = shift_form_check(model, point, p).has_value();
    } catch (const ModelError&) {
      v.point_independent = false;
    }
  }
  return v;
}

ClassificationReport classify_all(const NetworkModel& model, const ParameterPoint& point,
                                  const NumericOptions& opts) {
  ClassificationReport report;
  report.ogdsa = model.group_count() > 0;
  for (int p = 1; p <= model.group_count(); ++p) {
    report.verdicts.push_back(classify_group(model, point, p, opts));
    report.ogdsa = report.ogdsa && report.verdicts.back().is_ogdsa_component;
  }
  return report;
}

std::optional<double> shift_form_check(const NetworkModel& model, const ParameterPoint& point,
                                       int p, double tol) {
  if (p < 1 || p > model.group_count()) throw ModelError("shift_form_check: group index out of range");
  const auto& members = model.groups[p - 1].sensors;
  const auto declared = model.sensors[members.front()].attack.declared_shift();
  if (!declared) return std::nullopt;

  const PhiPair phi = build_phi(model, point, p);
  const double scale = std::max(1.0, phi.phi_theta.cwiseAbs().maxCoeff());
  const double err = (phi.phi_theta - *declared * phi.phi_tau).cwiseAbs().maxCoeff();
  if (err > tol * scale)
    throw ModelError("declared parameter-shift attack fails the numeric check (group " +
                     std::to_string(p) + ")");
  return declared;
}

std::optional<Eigen::VectorXd> pmf_direction_coefficients(const NetworkModel& model,
                                                          const ParameterPoint& point, int p,
                                                          int theta_index, double tol) {
  if (p < 1 || p > model.group_count()) throw ModelError("group index out of range");
  if (theta_index < 0 || theta_index >= model.d_theta) throw ModelError("theta index out of range");
  point.check_dims(model);

  const int dp = model.group_dim(p);
  long rows = 0;
  for (int j : model.groups[p - 1].sensors)
    rows += model.sensors[j].pattern_count() * model.sensors[j].quantizer.levels();

  Eigen::MatrixXd a(rows, dp);
  Eigen::VectorXd y(rows);
  long row = 0;
  for (int j : model.groups[p - 1].sensors) {
    const Sensor& s = model.sensors[j];
    const double w = std::sqrt(static_cast<double>(s.repeats));
    for (int m = 0; m < s.pattern_count(); ++m) {
      const PmfBundle b = sensor_pmf_bundle(s, point.theta, &point.tau[p - 1], m);
      for (int r = 0; r < s.quantizer.levels(); ++r, ++row) {
        y[row] = w * b.d_theta(theta_index, r);
        a.row(row) = w * b.d_xi.col(r).transpose();
      }
    }
  }

  const double ynorm = y.norm();
  if (ynorm == 0.0 && a.norm() == 0.0)
    throw ModelError("pmf_direction_coefficients: all-zero derivative stacks");
  if (ynorm == 0.0) return Eigen::VectorXd::Zero(dp);

  const Eigen::VectorXd alpha = a.colPivHouseholderQr().solve(y);
  if ((a * alpha - y).norm() < tol * ynorm) return alpha;
  return std::nullopt;
}

}  // namespace qspoof
