#include "qspoof/fisher.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "qspoof/pmf.hpp"

namespace qspoof {

SvdFactors svd_factors(const Eigen::MatrixXd& phi, const NumericOptions& opts) {
  SvdFactors f;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(phi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  f.u = svd.matrixU();
  f.singular_values = svd.singularValues();
  f.v = svd.matrixV();
  const double eps = std::numeric_limits<double>::epsilon();
  const double dim = static_cast<double>(std::max(phi.rows(), phi.cols()));
  const double cut = f.singular_values.size() == 0
                         ? 0.0
                         : f.singular_values[0] * dim * eps * opts.rank_factor;
  f.rank = 0;
  for (int i = 0; i < f.singular_values.size(); ++i)
    if (f.singular_values[i] > cut) ++f.rank;
  return f;
}

PhiPair build_phi(const NetworkModel& model, const ParameterPoint& point, int p) {
  point.check_dims(model);
  if (p < 0 || p > model.group_count()) throw ModelError("group index out of range");
  PhiPair pair;
  pair.group = p;
  pair.sensors = (p == 0) ? model.unattacked() : model.groups[p - 1].sensors;
  if (pair.sensors.empty()) throw ModelError("build_phi: empty group");

  const int d_tau = (p == 0) ? 0 : model.group_dim(p);
  const Eigen::VectorXd* xi = (p == 0) ? nullptr : &point.tau[p - 1];

  long cols = 0;
  for (int j : pair.sensors) {
    pair.col_offset.push_back(cols);
    pair.levels.push_back(model.sensors[j].quantizer.levels());
    cols += model.sensors[j].sample_count() * model.sensors[j].quantizer.levels();
  }
  pair.phi_theta.resize(model.d_theta, cols);
  pair.phi_tau.resize(d_tau, cols);

  long c = 0;
  for (int j : pair.sensors) {
    const Sensor& s = model.sensors[j];
    const int M = s.pattern_count();
    const int R = s.quantizer.levels();
    std::vector<PmfBundle> cache(M);
    for (int m = 0; m < M; ++m) cache[m] = sensor_pmf_bundle(s, point.theta, xi, m);
    for (long k = 1; k <= s.sample_count(); ++k) {
      const PmfBundle& b = cache[s.pattern_of(k)];
      for (int r = 0; r < R; ++r, ++c) {
        const double w = 1.0 / std::sqrt(b.pmf[r]);
        pair.phi_theta.col(c) = w * b.d_theta.col(r);
        if (d_tau > 0) pair.phi_tau.col(c) = w * b.d_xi.col(r);
      }
    }
  }
  return pair;
}

namespace {

/// Accumulates the three per-group FIM blocks over (sensor, pattern, level)
/// with pattern multiplicities; deterministic summation order.
void accumulate_group(const NetworkModel& model, const ParameterPoint& point,
                      const std::vector<int>& members, const Eigen::VectorXd* xi,
                      Eigen::MatrixXd* j_theta, Eigen::MatrixXd* b_block,
                      Eigen::MatrixXd* j_tau) {
  for (int j : members) {
    const Sensor& s = model.sensors[j];
    const int M = s.pattern_count();
    const double w = static_cast<double>(s.repeats);
    Eigen::MatrixXd jt = Eigen::MatrixXd::Zero(j_theta->rows(), j_theta->cols());
    Eigen::MatrixXd bb, jx;
    if (b_block) bb = Eigen::MatrixXd::Zero(b_block->rows(), b_block->cols());
    if (j_tau) jx = Eigen::MatrixXd::Zero(j_tau->rows(), j_tau->cols());
    for (int m = 0; m < M; ++m) {
      const PmfBundle bundle = sensor_pmf_bundle(s, point.theta, xi, m);
      for (int r = 0; r < s.quantizer.levels(); ++r) {
        const double inv_p = 1.0 / bundle.pmf[r];
        const Eigen::VectorXd dth = bundle.d_theta.col(r);
        jt.noalias() += inv_p * dth * dth.transpose();
        if (xi != nullptr) {
          const Eigen::VectorXd dxi = bundle.d_xi.col(r);
          if (b_block) bb.noalias() += inv_p * dth * dxi.transpose();
          if (j_tau) jx.noalias() += inv_p * dxi * dxi.transpose();
        }
      }
    }
    *j_theta += w * jt;
    if (b_block) *b_block += w * bb;
    if (j_tau) *j_tau += w * jx;
  }
}

}  // namespace

FimBundle build_fim_bundle(const NetworkModel& model, const ParameterPoint& point) {
  point.check_dims(model);
  FimBundle f;
  const int dt = model.d_theta;
  const int P = model.group_count();
  f.j_group.assign(P + 1, Eigen::MatrixXd::Zero(dt, dt));
  f.b.resize(P);
  f.j_tau.resize(P);

  accumulate_group(model, point, model.unattacked(), nullptr, &f.j_group[0], nullptr, nullptr);
  for (int p = 1; p <= P; ++p) {
    const int dp = model.group_dim(p);
    f.b[p - 1] = Eigen::MatrixXd::Zero(dt, dp);
    f.j_tau[p - 1] = Eigen::MatrixXd::Zero(dp, dp);
    accumulate_group(model, point, model.groups[p - 1].sensors, &point.tau[p - 1],
                     &f.j_group[p], &f.b[p - 1], &f.j_tau[p - 1]);
  }

  f.j_theta = Eigen::MatrixXd::Zero(dt, dt);
  for (int p = 0; p <= P; ++p) f.j_theta += f.j_group[p];

  const int total = model.joint_dim();
  f.j_joint = Eigen::MatrixXd::Zero(total, total);
  f.j_joint.topLeftCorner(dt, dt) = f.j_theta;
  int off = dt;
  for (int p = 1; p <= P; ++p) {
    const int dp = model.group_dim(p);
    f.j_joint.block(0, off, dt, dp) = f.b[p - 1];
    f.j_joint.block(off, 0, dp, dt) = f.b[p - 1].transpose();
    f.j_joint.block(off, off, dp, dp) = f.j_tau[p - 1];
    off += dp;
  }
  return f;
}

SymInverse sym_inverse(const Eigen::MatrixXd& a, const NumericOptions& opts) {
  SymInverse out;
  if (a.rows() == 0) {
    out.singular = true;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double amax = ev.cwiseAbs().maxCoeff();
  const double eps = std::numeric_limits<double>::epsilon();
  const double cut = amax * a.rows() * eps * opts.rank_factor;
  double amin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < ev.size(); ++i) {
    const double m = std::abs(ev[i]);
    if (m <= cut) out.singular = true;
    amin = std::min(amin, m);
  }
  if (amax == 0.0) out.singular = true;
  if (out.singular) return out;
  out.cond = amax / amin;
  out.inverse = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  return out;
}

CrbReport crb(const NetworkModel& model, const ParameterPoint& point, const FimBundle& bundle,
              const NumericOptions& opts) {
  point.check_dims(model);
  CrbReport report;
  const int P = model.group_count();

  const SymInverse inv_a0 = sym_inverse(bundle.j_group[0], opts);
  if (inv_a0.singular) {
    report.warnings.push_back("unattacked data insufficient: J_A0 singular");
  } else {
    if (inv_a0.cond > opts.cond_flag)
      report.warnings.push_back("crb_unattacked ill-conditioned (cond > " +
                                std::to_string(opts.cond_flag) + ")");
    report.crb_unattacked = inv_a0.inverse;
  }

  bool all_estimable = true;
  Eigen::MatrixXd reduced = bundle.j_theta;
  for (int p = 1; p <= P; ++p) {
    const SymInverse inv_tau = sym_inverse(bundle.j_tau[p - 1], opts);
    if (inv_tau.singular) {
      all_estimable = false;
      report.warnings.push_back("J_tau(" + std::to_string(p) + ") singular: ISA path applies");
      report.information_loss.push_back(bundle.j_group[p]);
      continue;
    }
    if (inv_tau.cond > opts.cond_flag)
      report.warnings.push_back("J_tau(" + std::to_string(p) + ") ill-conditioned");
    const Eigen::MatrixXd degr =
        bundle.b[p - 1] * inv_tau.inverse * bundle.b[p - 1].transpose();
    report.information_loss.push_back(bundle.j_group[p] - degr);
    reduced -= degr;
  }
  if (all_estimable) {
    const SymInverse inv_red = sym_inverse(0.5 * (reduced + reduced.transpose()), opts);
    if (inv_red.singular) {
      report.warnings.push_back("reduced information matrix singular");
    } else {
      if (inv_red.cond > opts.cond_flag) report.warnings.push_back("crb_esa ill-conditioned");
      report.crb_esa = 0.5 * (inv_red.inverse + inv_red.inverse.transpose());
    }
  }

  const SymInverse inv_joint = sym_inverse(bundle.j_joint, opts);
  if (inv_joint.singular) {
    report.warnings.push_back("joint FIM singular (inestimable attack present)");
  } else {
    if (inv_joint.cond > opts.cond_flag) report.warnings.push_back("J_joint ill-conditioned");
    report.crb_alldata_known_attacks =
        inv_joint.inverse.topLeftCorner(model.d_theta, model.d_theta);
  }
  return report;
}

void write_matrix(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << m.rows() << " " << m.cols() << "\n";
  char buf[64];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      out << buf << (j + 1 == m.cols() ? "" : " ");
    }
    out << "\n";
  }
}

Eigen::MatrixXd read_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Eigen::Index rows = 0, cols = 0;
  in >> rows >> cols;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) in >> m(i, j);
  if (!in) throw std::runtime_error("malformed matrix file " + path);
  return m;
}

}  // namespace qspoof
