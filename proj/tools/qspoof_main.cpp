#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qspoof/classifier.hpp"
#include "qspoof/config.hpp"
#include "qspoof/report.hpp"
#include "qspoof/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

/// Resolves a config path, consulting QSPOOF_CONFIG_PATH for relative names
/// that do not exist in the working directory.
std::string resolve_config(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::exists(path) || fs::path(path).is_absolute()) return path;
  if (const char* base = std::getenv("QSPOOF_CONFIG_PATH")) {
    const fs::path candidate = fs::path(base) / path;
    if (fs::exists(candidate)) return candidate.string();
  }
  return path;
}

qspoof::ReportFormat parse_format(const std::string& format) {
  if (format == "json") return qspoof::ReportFormat::Json;
  return qspoof::ReportFormat::Human;
}

int run(int argc, char** argv) {
  CLI::App app{"quantized-network spoofing-attack analysis workbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::string format = "human";
  std::string data_path;
  std::string out_path;
  std::string dump_dir;
  long trials = -1;
  long seed = -1;
  long jobs = -1;
  bool timing = false;
  std::vector<long> k_grid;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON configuration file")->required();
    cmd->add_option("--format", format, "report format: human|json")
        ->check(CLI::IsMember({"human", "json"}));
  };

  CLI::App* classify = app.add_subcommand("classify", "classify each attack group (ISA/OESA)");
  add_common(classify);
  CLI::App* crb_cmd = app.add_subcommand("crb", "compute the Cramer-Rao bounds");
  add_common(crb_cmd);
  crb_cmd->add_option("--dump", dump_dir, "directory for plain-text matrix dumps");
  CLI::App* estimate = app.add_subcommand("estimate", "joint attack identification + estimation");
  add_common(estimate);
  estimate->add_option("--data", data_path, "quantized dataset CSV (sensor,k,level)")->required();
  CLI::App* simulate = app.add_subcommand("simulate", "run a seeded Monte Carlo experiment");
  add_common(simulate);
  simulate->add_option("--trials", trials, "trials per K (overrides config)");
  simulate->add_option("--seed", seed, "master seed (overrides config)");
  simulate->add_option("--k-grid", k_grid, "K grid (overrides config)");
  simulate->add_option("--out", out_path, "output CSV path (overrides config)");
  simulate->add_option("--jobs", jobs, "worker threads (results independent of this)");
  simulate->add_flag("--timing", timing, "write measured wall_ms instead of 0");
  CLI::App* validate = app.add_subcommand("validate", "schema-check a configuration");
  add_common(validate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  qspoof::ConfigDocument doc;
  try {
    doc = qspoof::parse_config(resolve_config(config_path));
  } catch (const qspoof::ConfigError& e) {
    for (const std::string& msg : e.errors()) std::cerr << "error: " << msg << "\n";
    return kExitConfig;
  }

  const qspoof::ReportFormat fmt = parse_format(format);

  try {
    if (validate->parsed()) {
      std::cout << "ok: " << doc.scenario.id << " (" << doc.scenario.model.sensor_count()
                << " sensors, " << doc.scenario.model.group_count() << " attack groups)\n";
      return kExitOk;
    }

    if (classify->parsed()) {
      const qspoof::ClassificationReport report =
          qspoof::classify_all(doc.scenario.model, doc.scenario.truth, doc.numeric);
      qspoof::print_classification(std::cout, report, fmt);
      for (const auto& v : report.verdicts)
        if (!v.paths_agree) {
          std::cerr << "warn: verdict paths disagree for group " << v.group << "\n";
          return kExitNumerical;
        }
      return kExitOk;
    }

    if (crb_cmd->parsed()) {
      const qspoof::FimBundle fim =
          qspoof::build_fim_bundle(doc.scenario.model, doc.scenario.truth);
      const qspoof::CrbReport report =
          qspoof::crb(doc.scenario.model, doc.scenario.truth, fim, doc.numeric);
      qspoof::print_crb(std::cout, report, fmt);
      if (!dump_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(dump_dir);
        qspoof::write_matrix((fs::path(dump_dir) / "j_joint.txt").string(), fim.j_joint);
        qspoof::write_matrix((fs::path(dump_dir) / "j_theta.txt").string(), fim.j_theta);
        if (report.crb_unattacked)
          qspoof::write_matrix((fs::path(dump_dir) / "crb_unattacked.txt").string(),
                               *report.crb_unattacked);
        if (report.crb_esa)
          qspoof::write_matrix((fs::path(dump_dir) / "crb_esa.txt").string(), *report.crb_esa);
        if (report.crb_alldata_known_attacks)
          qspoof::write_matrix((fs::path(dump_dir) / "crb_alldata.txt").string(),
                               *report.crb_alldata_known_attacks);
        for (int p = 0; p <= doc.scenario.model.group_count(); ++p) {
          const qspoof::PhiPair phi = qspoof::build_phi(doc.scenario.model, doc.scenario.truth, p);
          qspoof::write_matrix(
              (fs::path(dump_dir) / ("phi_theta_" + std::to_string(p) + ".txt")).string(),
              phi.phi_theta);
          if (p > 0)
            qspoof::write_matrix(
                (fs::path(dump_dir) / ("phi_tau_" + std::to_string(p) + ".txt")).string(),
                phi.phi_tau);
        }
      }
      for (const std::string& w : report.warnings) std::cerr << "warn: " << w << "\n";
      return report.warnings.empty() ? kExitOk : kExitNumerical;
    }

    if (estimate->parsed()) {
      const qspoof::QuantizedDataset data = qspoof::QuantizedDataset::from_csv(data_path);
      qspoof::NetworkModel model = doc.scenario.model;
      // The dataset defines the per-sensor sample counts; align the repeat
      // counts so pattern bookkeeping matches the recording length.
      data.validate(model);
      for (int j = 0; j < model.sensor_count(); ++j) {
        const long cycle = model.sensors[j].pattern_count();
        if (data.sample_count(j) % cycle != 0)
          throw qspoof::ModelError("dataset length of sensor " + std::to_string(j + 1) +
                                   " is not a multiple of its pattern cycle " +
                                   std::to_string(cycle));
        model.sensors[j].repeats = data.sample_count(j) / cycle;
      }
      const qspoof::EstimateReport report =
          qspoof::joint_identify_estimate(model, data, doc.scenario.solver);
      qspoof::print_estimate(std::cout, report, model, fmt);
      if (report.rounded.flagged) {
        std::cerr << "warn: " << report.rounded.flag_reason << "\n";
        return kExitNumerical;
      }
      return kExitOk;
    }

    if (simulate->parsed()) {
      qspoof::ExperimentSpec spec;
      if (doc.experiment) spec = *doc.experiment;
      if (trials >= 1) spec.trials = trials;
      if (seed >= 0) spec.seed = static_cast<std::uint64_t>(seed);
      if (!k_grid.empty()) spec.k_grid = k_grid;
      if (!out_path.empty()) spec.out = out_path;
      if (jobs >= 1) spec.jobs = static_cast<int>(jobs);
      if (timing) spec.timing = true;
      if (spec.k_grid.empty()) {
        std::cerr << "error: no K grid (set experiment.k_grid in the config or pass --k-grid)\n";
        return kExitConfig;
      }
      const qspoof::ExperimentResult result =
          qspoof::run_experiment(doc.scenario, spec.k_grid, spec.trials, spec.seed, spec.jobs);
      qspoof::write_experiment_csv(result, spec.out, spec.timing);
      long failures = 0, violations = 0;
      for (const auto& row : result.rows) {
        failures += row.failures;
        violations += row.cvtr_violations;
      }
      std::cout << "wrote " << spec.out << " (" << result.rows.size() << " rows)\n";
      if (violations > 0) {
        std::cerr << "error: CVTR contract violated in " << violations << " trials\n";
        return kExitNumerical;
      }
      if (failures > 0) {
        std::cerr << "warn: " << failures << " flagged/failed trials\n";
        return kExitNumerical;
      }
      return kExitOk;
    }
  } catch (const qspoof::ModelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
