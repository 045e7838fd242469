#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qspoof/estimator.hpp"
#include "qspoof/fisher.hpp"
#include "qspoof/model.hpp"

namespace qspoof {

/// Fully resolved experiment scenario: network, true parameters, and the
/// minimum-distortion level the attacks must clear.
struct Scenario {
  std::string id;
  NetworkModel model;
  ParameterPoint truth;
  double d_q = 0.0;
  SolverOptions solver;
};

/// Documented override keys for make_scenario.
struct ScenarioOverrides {
  std::optional<long> k;                       // repeats (pulses / time samples)
  std::optional<int> n;                        // sensor count
  std::optional<std::vector<int>> attacked;    // 1-based attacked sensor ids
  std::optional<double> noise_var;
  std::optional<std::uint64_t> seed;
  std::optional<int> d_p;                      // overparam-isa attack dimension
  std::optional<int> r_levels;                 // overparam-isa quantizer levels
};

/// Builds one of the presets: drfm-delay, rss-injection, delay-injection,
/// linear-dc-powerflow, overparam-isa. Throws ModelError on unknown ids and
/// on presets whose true attacks fail the d_q admissibility check.
Scenario make_scenario(const std::string& preset, const ScenarioOverrides& overrides = {});

/// All preset ids, for help texts and validation.
const std::vector<std::string>& scenario_presets();

/// Draws one dataset from the model at the true point; per-sensor streams are
/// derived from the seed, so outputs are reproducible and order-independent.
QuantizedDataset sample_dataset(const NetworkModel& model, const ParameterPoint& truth,
                                std::uint64_t seed);

struct TrialResult {
  Eigen::VectorXi eta_true;
  Eigen::VectorXi eta_hat;
  Eigen::VectorXd theta_true;
  Eigen::VectorXd theta_hat;
  EstimateReport report;
};

/// One seeded trial at K repeats per sensor: sample, estimate, compare.
TrialResult run_trial(const Scenario& scenario, long k, std::uint64_t seed);

struct ExperimentRow {
  long k = 0;
  long trials = 0;
  double misclass_frac = 0.0;
  Eigen::VectorXd mse;  // per theta component
  double crb_unattacked_trace = 0.0;
  double crb_alldata_trace = 0.0;  // NaN when the joint FIM is singular
  long failures = 0;
  double wall_ms = 0.0;
  long cvtr_violations = 0;  // trials violating the CVTR contract (must stay 0)
  long max_candidates = 0;
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;
  int d_theta = 0;
};

/// Repeated seeded trials over a K grid; trial seeds derive from the master
/// seed, aggregation is in trial order, so results do not depend on `jobs`.
ExperimentResult run_experiment(const Scenario& scenario, const std::vector<long>& k_grid,
                                long trials, std::uint64_t master_seed, int jobs = 1);

/// CSV with a fixed header and 17-significant-digit values. wall_ms is
/// written as 0 unless include_timing is set, keeping reruns byte-identical.
void write_experiment_csv(const ExperimentResult& result, const std::string& path,
                          bool include_timing = false);

struct CrbCurveRow {
  long k = 0;
  double crb_unattacked_trace = 0.0;
  std::optional<double> crb_esa_trace;
  std::optional<double> crb_alldata_trace;
};

/// CRB traces versus K; the FIM is linear in the repeat count, so blocks are
/// computed once and scaled.
std::vector<CrbCurveRow> crb_curves(const Scenario& scenario, const std::vector<long>& k_grid);

/// Copy of the scenario model with every sensor's repeat count set to k.
NetworkModel model_at_k(const NetworkModel& model, long k);

}  // namespace qspoof
