#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "qspoof/model.hpp"

namespace qspoof {

/// Numeric knobs shared by the FIM and classifier paths.
struct NumericOptions {
  double rank_factor = 100.0;    // sigma counts toward rank iff > max*dim*eps*rank_factor
  double inclusion_tol = 1e-8;   // relative residual for the range-inclusion test
  double info_loss_tol = 1e-8;   // relative Frobenius threshold on the information loss
  double cond_flag = 1e12;       // condition numbers above this are flagged
};

/// The per-group score matrices: column (j,k,r) holds (1 / sqrt(p_jr^k)) times
/// the pmf derivative, enumerated sensor-major, then time, then level.
struct PhiPair {
  int group = 0;                  // p; 0 = unattacked set
  Eigen::MatrixXd phi_theta;      // D_theta x M_p
  Eigen::MatrixXd phi_tau;        // D_p x M_p (0 rows for p = 0)
  std::vector<int> sensors;       // group members in enumeration order
  std::vector<long> col_offset;   // per member, first column index
  std::vector<int> levels;        // per member, R_j

  long cols() const { return phi_theta.cols(); }
  /// Column of (member index i, sample k, level r), all 1-based except i.
  long col_index(int member, long k, int r) const {
    return col_offset[member] + (k - 1) * levels[member] + (r - 1);
  }
};

/// Thin SVD of a Phi matrix plus the induced numerical rank.
struct SvdFactors {
  Eigen::MatrixXd u;
  Eigen::VectorXd singular_values;
  Eigen::MatrixXd v;
  int rank = 0;

  Eigen::MatrixXd reconstruct() const { return u * singular_values.asDiagonal() * v.transpose(); }
};

SvdFactors svd_factors(const Eigen::MatrixXd& phi, const NumericOptions& opts = {});

/// All FIM blocks of the joint parameter Theta = [theta; tau^(1..P)] in the
/// arrowhead layout: diagonal blocks J_theta, J_tau^(p); borders B_p; zero
/// blocks between distinct attack groups.
struct FimBundle {
  Eigen::MatrixXd j_theta;               // D_theta x D_theta
  std::vector<Eigen::MatrixXd> j_group;  // p = 0..P contributions J_{A_p}
  std::vector<Eigen::MatrixXd> b;        // p = 1..P cross blocks
  std::vector<Eigen::MatrixXd> j_tau;    // p = 1..P attack blocks
  Eigen::MatrixXd j_joint;               // joint_dim x joint_dim
};

/// Builds the Phi pair of group p (p = 0 gives the unattacked phi_theta only).
PhiPair build_phi(const NetworkModel& model, const ParameterPoint& point, int p);

FimBundle build_fim_bundle(const NetworkModel& model, const ParameterPoint& point);

/// Symmetric spectral inverse with conditioning diagnostics.
struct SymInverse {
  Eigen::MatrixXd inverse;
  double cond = 0.0;
  bool singular = false;
};
SymInverse sym_inverse(const Eigen::MatrixXd& a, const NumericOptions& opts = {});

/// Cramer-Rao bounds for theta under the different knowledge assumptions.
struct CrbReport {
  std::optional<Eigen::MatrixXd> crb_unattacked;  // J_{A_0}^{-1}
  std::optional<Eigen::MatrixXd> crb_esa;         // Schur form, needs every J_tau nonsingular
  std::optional<Eigen::MatrixXd> crb_alldata_known_attacks;  // leading block of J_joint^{-1}
  std::vector<Eigen::MatrixXd> information_loss;  // per group J_{A_p} - B_p J_tau^{-1} B_p^T
  std::vector<std::string> warnings;              // singularities / conditioning flags
};

CrbReport crb(const NetworkModel& model, const ParameterPoint& point, const FimBundle& bundle,
              const NumericOptions& opts = {});

/// Plain-text matrix dump: row-major, space separated, 17 significant digits.
void write_matrix(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix(const std::string& path);

}  // namespace qspoof
