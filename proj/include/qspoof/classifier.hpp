#pragma once

#include <Eigen/Dense>
#include <optional>

#include "qspoof/fisher.hpp"
#include "qspoof/model.hpp"

namespace qspoof {

/// Classification of one attack group: inestimable (singular J_tau), optimal
/// estimable (attacked data useless for the CRB), or estimable-non-optimal.
struct AttackVerdict {
  int group = 0;
  int dim = 0;                         // D_p
  bool dimension_check = false;        // D_p exceeds the rank bound
  long rank_bound = 0;                 // sum_j K_j (R_j - 1)
  int rank_j_tau = 0;
  Eigen::VectorXd singular_values;     // of J_tau, descending
  bool is_isa = false;
  double inclusion_residual = 0.0;     // relative, 0 when the range inclusion holds
  bool is_oesa = false;
  double information_loss_norm = 0.0;  // ||J_Ap - B J_tau^{-1} B^T||_F
  bool paths_agree = true;             // inclusion verdict vs information-loss verdict
  bool point_independent = false;      // structurally a parameter-shift attack
  bool is_ogdsa_component = false;     // ISA or OESA
};

AttackVerdict classify_group(const NetworkModel& model, const ParameterPoint& point, int p,
                             const NumericOptions& opts = {});

/// All-group classification plus the network-level OGDSA flag (every group is
/// an OGDSA component).
struct ClassificationReport {
  std::vector<AttackVerdict> verdicts;
  bool ogdsa = false;
};
ClassificationReport classify_all(const NetworkModel& model, const ParameterPoint& point,
                                  const NumericOptions& opts = {});

/// Returns the declared shift scale lambda_p when group p's attack form is of
/// the parameter-shift class, after verifying phi_theta == lambda * phi_tau
/// entrywise at the point. Throws ModelError when the declared structure fails
/// the numeric check; returns nullopt for non-shift forms.
std::optional<double> shift_form_check(const NetworkModel& model, const ParameterPoint& point,
                                       int p, double tol = 1e-10);

/// Least-squares coefficients alpha reproducing d psi / d theta_i by the
/// attack-parameter directions of group p, or nullopt when no combination
/// fits within the tolerance.
std::optional<Eigen::VectorXd> pmf_direction_coefficients(const NetworkModel& model,
                                                          const ParameterPoint& point, int p,
                                                          int theta_index, double tol = 1e-8);

}  // namespace qspoof
