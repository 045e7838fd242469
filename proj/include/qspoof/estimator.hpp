#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "qspoof/model.hpp"

namespace qspoof {

/// Quantized observations: one level per (sensor, time), levels 1..R_j.
struct QuantizedDataset {
  std::vector<std::vector<int>> levels;  // levels[j][k-1]

  long sample_count(int j) const { return static_cast<long>(levels[j].size()); }
  int sensor_count() const { return static_cast<int>(levels.size()); }

  /// Throws ModelError on level out of range or sensor count mismatch.
  void validate(const NetworkModel& model) const;

  /// Per-sensor (pattern x level) occurrence counts; the sufficient statistic
  /// for every likelihood computation here.
  std::vector<Eigen::MatrixXd> counts(const NetworkModel& model) const;

  /// Three-column CSV `sensor,k,level` (1-based, with header).
  static QuantizedDataset from_csv(const std::string& path);
  void to_csv(const std::string& path) const;
};

/// Layout of the stacked estimation vector Xi = [theta; xi^(1); ...; xi^(N)].
struct XiLayout {
  int d_theta = 0;
  std::vector<int> offset;  // per sensor
  std::vector<int> dim;     // per sensor
  int total = 0;

  static XiLayout of(const NetworkModel& model);
  Eigen::VectorXd theta(const Eigen::VectorXd& stack) const { return stack.head(d_theta); }
  Eigen::VectorXd xi(const Eigen::VectorXd& stack, int j) const {
    return stack.segment(offset[j], dim[j]);
  }
};

struct SolverOptions {
  double em_tol = 1e-8;
  int em_max_iter = 500;
  double newton_tol = 1e-8;
  int newton_max_iter = 15;
  double armijo_c = 1e-4;
  double armijo_backtrack = 0.5;
  int armijo_max_halvings = 40;
  double mu0 = 1.0;
  double mu_decay = 0.1;
  double mu_min = 1e-6;
  int restarts = 5;
  double d_q = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Output of the random-relaxation EM stage.
struct RelaxedState {
  Eigen::VectorXd xi_stack;               // Xi-hat
  Eigen::VectorXd pi;                     // attack probabilities
  std::vector<Eigen::MatrixXd> upsilon;   // per sensor (pattern x level) responsibilities
  double objective = 0.0;                 // observed-data relaxed log-likelihood
  std::vector<double> trace;              // objective per iteration of the kept restart
  bool converged = false;
  bool flagged = false;
  std::string flag_reason;
};

/// Final rounded output of the joint identification / estimation pipeline.
struct RoundedEstimate {
  Eigen::VectorXi eta;                      // binary states, sum < N/2
  Eigen::VectorXd xi_stack;                 // Xi-hat_R
  int selected = -1;                        // index into candidates
  std::vector<Eigen::VectorXi> candidates;  // CVTR output
  std::vector<double> objective;            // L_* per candidate (NaN = infeasible)
  std::vector<bool> feasible;
  bool flagged = false;
  std::string flag_reason;
};

struct EstimateReport {
  RelaxedState relaxed;
  RoundedEstimate rounded;
  double wall_ms = 0.0;
};

/// Log-likelihood of (Xi, eta) for the dataset (binary attack states).
double loglik(const NetworkModel& model, const QuantizedDataset& data,
              const Eigen::VectorXd& xi_stack, const Eigen::VectorXi& eta);

/// Observed-data objective of the relaxed problem.
double relaxed_objective(const NetworkModel& model, const QuantizedDataset& data,
                         const Eigen::VectorXd& xi_stack, const Eigen::VectorXd& pi);

/// E-step: posterior attack responsibilities per (sensor, pattern, level).
std::vector<Eigen::MatrixXd> e_step(const NetworkModel& model, const QuantizedDataset& data,
                                    const Eigen::VectorXd& xi_stack, const Eigen::VectorXd& pi);

/// M-step for pi: per-sensor responsibility means.
Eigen::VectorXd m_step_pi(const NetworkModel& model, const QuantizedDataset& data,
                          const std::vector<Eigen::MatrixXd>& upsilon);

struct MStepResult {
  Eigen::VectorXd xi_stack;
  bool converged = false;
  bool line_search_failed = false;
};

/// M-step for Xi: damped-Newton ascent of the expected complete-data
/// log-likelihood; never returns a point below the start value.
MStepResult m_step_xi(const NetworkModel& model, const QuantizedDataset& data,
                      const std::vector<Eigen::MatrixXd>& upsilon,
                      const Eigen::VectorXd& xi_start, const SolverOptions& options);

/// Gradient and Hessian of the M-step objective at xi_stack (exposed for
/// verification against finite differences).
double q_objective(const NetworkModel& model, const QuantizedDataset& data,
                   const std::vector<Eigen::MatrixXd>& upsilon, const Eigen::VectorXd& xi_stack,
                   Eigen::VectorXd* grad = nullptr, Eigen::MatrixXd* hess = nullptr);

struct EmInit {
  Eigen::VectorXd theta;
  std::vector<Eigen::VectorXd> xi;
  Eigen::VectorXd pi;
};

/// Default initialization: theta from the all-unattacked constrained MLE,
/// small random xi, pi = 1/2.
EmInit default_init(const NetworkModel& model, const QuantizedDataset& data,
                    const SolverOptions& options);

/// Moment / coarse-scan starting guess for theta (no Newton polish).
Eigen::VectorXd initial_theta_guess(const NetworkModel& model, const QuantizedDataset& data);

/// MLE of theta treating every sensor as unattacked, Newton-polished from the
/// moment guess.
Eigen::VectorXd unattacked_mle(const NetworkModel& model, const QuantizedDataset& data,
                               const SolverOptions& options);

/// Random relaxation + EM with restarts; keeps the best final objective.
RelaxedState em_relaxed(const NetworkModel& model, const QuantizedDataset& data,
                        const EmInit& init, const SolverOptions& options);

/// Constrained variable-threshold rounding: the binary candidates obtained by
/// sweeping a threshold over pi-hat, keeping sum(eta) < N/2. The all-zeros
/// vector is always present.
std::vector<Eigen::VectorXi> cvtr_candidates(const Eigen::VectorXd& pi_hat, int n);

struct BarrierResult {
  Eigen::VectorXd xi_stack;
  double objective = 0.0;  // unpenalized log-likelihood at the solution
  bool feasible = false;
  bool flagged = false;
  std::string flag_reason;
};

/// Log-barrier refinement of Xi for a fixed binary eta under the minimum
/// pmf-distortion constraint for every declared-attacked sensor.
BarrierResult barrier_solve(const NetworkModel& model, const QuantizedDataset& data,
                            const Eigen::VectorXi& eta, const Eigen::VectorXd& xi_start,
                            const SolverOptions& options);

/// Full pipeline: EM, CVTR candidates, per-candidate barrier refinement,
/// argmax selection (ties: fewer attacked sensors, then lexicographic).
EstimateReport joint_identify_estimate(const NetworkModel& model, const QuantizedDataset& data,
                                       const SolverOptions& options);

}  // namespace qspoof
