#include "qspoof/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace qspoof {

namespace {

using nlohmann::json;

struct Checker {
  std::vector<std::string> errors;

  void fail(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

  void reject_unknown(const json& obj, const std::string& path,
                      const std::set<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (!allowed.count(it.key())) fail(path + "." + it.key(), "unknown key");
  }

  bool require_object(const json& j, const std::string& path) {
    if (j.is_object()) return true;
    fail(path, "expected an object");
    return false;
  }

  std::optional<double> number(const json& obj, const std::string& path, const std::string& key,
                               bool required = false) {
    if (!obj.contains(key)) {
      if (required) fail(path + "." + key, "missing required key");
      return std::nullopt;
    }
    if (!obj[key].is_number()) {
      fail(path + "." + key, "expected a number");
      return std::nullopt;
    }
    return obj[key].get<double>();
  }

  std::optional<long> integer(const json& obj, const std::string& path, const std::string& key,
                              bool required = false) {
    if (!obj.contains(key)) {
      if (required) fail(path + "." + key, "missing required key");
      return std::nullopt;
    }
    if (!obj[key].is_number_integer()) {
      fail(path + "." + key, "expected an integer");
      return std::nullopt;
    }
    return obj[key].get<long>();
  }

  std::optional<std::string> text(const json& obj, const std::string& path, const std::string& key,
                                  bool required = false) {
    if (!obj.contains(key)) {
      if (required) fail(path + "." + key, "missing required key");
      return std::nullopt;
    }
    if (!obj[key].is_string()) {
      fail(path + "." + key, "expected a string");
      return std::nullopt;
    }
    return obj[key].get<std::string>();
  }

  std::optional<std::vector<double>> number_list(const json& obj, const std::string& path,
                                                 const std::string& key, bool required = false) {
    if (!obj.contains(key)) {
      if (required) fail(path + "." + key, "missing required key");
      return std::nullopt;
    }
    if (!obj[key].is_array()) {
      fail(path + "." + key, "expected an array of numbers");
      return std::nullopt;
    }
    std::vector<double> out;
    for (const auto& v : obj[key]) {
      if (!v.is_number()) {
        fail(path + "." + key, "expected an array of numbers");
        return std::nullopt;
      }
      out.push_back(v.get<double>());
    }
    return out;
  }
};

ObservationFamily parse_family(const json& j, const std::string& path, Checker& ck) {
  ObservationFamily f;
  if (!ck.require_object(j, path)) return f;
  ck.reject_unknown(j, path,
                    {"kind", "noise_var", "mean_index", "var_index", "energy", "amplitude",
                     "pulse_width", "sample_times", "delay_index", "h"});
  const auto kind = ck.text(j, path, "kind", true);
  if (!kind) return f;
  if (*kind == "gaussian-mean") f.kind = FamilyKind::GaussianMean;
  else if (*kind == "gaussian-mean-variance") f.kind = FamilyKind::GaussianMeanVariance;
  else if (*kind == "gaussian-pulse-delay") f.kind = FamilyKind::GaussianPulseDelay;
  else if (*kind == "linear-gaussian") f.kind = FamilyKind::LinearGaussian;
  else {
    ck.fail(path + ".kind", "unknown family kind `" + *kind + "`");
    return f;
  }
  if (auto v = ck.number(j, path, "noise_var")) f.noise_var = *v;
  if (auto v = ck.integer(j, path, "mean_index")) f.mean_index = static_cast<int>(*v);
  if (auto v = ck.integer(j, path, "var_index")) f.var_index = static_cast<int>(*v);
  if (auto v = ck.number(j, path, "energy")) f.energy = *v;
  if (auto v = ck.number(j, path, "amplitude")) f.amplitude = *v;
  if (auto v = ck.number(j, path, "pulse_width")) f.pulse_width = *v;
  if (auto v = ck.number_list(j, path, "sample_times")) f.sample_times = *v;
  if (auto v = ck.integer(j, path, "delay_index")) f.delay_index = static_cast<int>(*v);
  if (auto v = ck.number_list(j, path, "h"))
    f.h = Eigen::Map<const Eigen::VectorXd>(v->data(), static_cast<long>(v->size()));
  return f;
}

AttackModel parse_attack(const json& j, const std::string& path, Checker& ck) {
  AttackModel a;
  if (!ck.require_object(j, path)) return a;
  ck.reject_unknown(j, path, {"form", "dim", "shift_scale", "basis"});
  const auto form = ck.text(j, path, "form", true);
  if (!form) return a;
  if (*form == "parameter-shift") a.form = AttackForm::ParameterShift;
  else if (*form == "additive-mean-offset") a.form = AttackForm::AdditiveMeanOffset;
  else if (*form == "mean-and-variance-offset") a.form = AttackForm::MeanAndVarianceOffset;
  else if (*form == "delay-offset") a.form = AttackForm::DelayOffset;
  else if (*form == "over-parameterized-additive") a.form = AttackForm::OverparamAdditive;
  else {
    ck.fail(path + ".form", "unknown attack form `" + *form + "`");
    return a;
  }
  if (auto v = ck.integer(j, path, "dim")) a.dim = static_cast<int>(*v);
  if (auto v = ck.number(j, path, "shift_scale")) a.shift_scale = *v;
  if (j.contains("basis")) {
    const json& b = j["basis"];
    if (!b.is_array() || b.empty() || !b[0].is_array()) {
      ck.fail(path + ".basis", "expected an array of rows");
    } else {
      a.basis.resize(b.size(), b[0].size());
      for (std::size_t i = 0; i < b.size(); ++i) {
        if (!b[i].is_array() || b[i].size() != b[0].size()) {
          ck.fail(path + ".basis", "ragged rows");
          break;
        }
        for (std::size_t c = 0; c < b[i].size(); ++c) {
          if (!b[i][c].is_number()) {
            ck.fail(path + ".basis", "expected numbers");
            break;
          }
          a.basis(i, c) = b[i][c].get<double>();
        }
      }
    }
  }
  return a;
}

NetworkModel parse_model(const json& j, const std::string& path, Checker& ck) {
  NetworkModel model;
  if (!ck.require_object(j, path)) return model;
  ck.reject_unknown(j, path, {"d_theta", "sensors", "groups"});
  if (auto v = ck.integer(j, path, "d_theta", true)) model.d_theta = static_cast<int>(*v);
  if (!j.contains("sensors") || !j["sensors"].is_array() || j["sensors"].empty()) {
    ck.fail(path + ".sensors", "expected a non-empty array");
    return model;
  }
  int idx = 0;
  for (const auto& sj : j["sensors"]) {
    const std::string spath = path + ".sensors[" + std::to_string(idx++) + "]";
    Sensor s;
    if (!ck.require_object(sj, spath)) continue;
    ck.reject_unknown(sj, spath, {"family", "thresholds", "repeats", "attack"});
    if (sj.contains("family")) s.family = parse_family(sj["family"], spath + ".family", ck);
    else ck.fail(spath + ".family", "missing required key");
    if (auto v = ck.number_list(sj, spath, "thresholds", true)) {
      try {
        s.quantizer = Quantizer(*v);
      } catch (const std::exception& e) {
        ck.fail(spath + ".thresholds", e.what());
      }
    }
    if (auto v = ck.integer(sj, spath, "repeats")) s.repeats = *v;
    if (sj.contains("attack")) s.attack = parse_attack(sj["attack"], spath + ".attack", ck);
    else ck.fail(spath + ".attack", "missing required key");
    model.sensors.push_back(std::move(s));
  }
  if (j.contains("groups")) {
    if (!j["groups"].is_array()) {
      ck.fail(path + ".groups", "expected an array");
      return model;
    }
    int gid = 0;
    for (const auto& gj : j["groups"]) {
      const std::string gpath = path + ".groups[" + std::to_string(gid++) + "]";
      if (!ck.require_object(gj, gpath)) continue;
      ck.reject_unknown(gj, gpath, {"sensors"});
      AttackGroup g;
      if (!gj.contains("sensors") || !gj["sensors"].is_array() || gj["sensors"].empty()) {
        ck.fail(gpath + ".sensors", "expected a non-empty array of 1-based sensor ids");
        continue;
      }
      for (const auto& v : gj["sensors"]) {
        if (!v.is_number_integer() || v.get<long>() < 1 ||
            v.get<long>() > static_cast<long>(model.sensors.size())) {
          ck.fail(gpath + ".sensors", "sensor ids must be integers in 1..N");
          g.sensors.clear();
          break;
        }
        g.sensors.push_back(static_cast<int>(v.get<long>()) - 1);
      }
      if (!g.sensors.empty()) model.groups.push_back(std::move(g));
    }
  }
  return model;
}

ParameterPoint parse_truth(const json& j, const std::string& path, Checker& ck) {
  ParameterPoint point;
  if (!ck.require_object(j, path)) return point;
  ck.reject_unknown(j, path, {"theta", "tau"});
  if (auto v = ck.number_list(j, path, "theta", true))
    point.theta = Eigen::Map<const Eigen::VectorXd>(v->data(), static_cast<long>(v->size()));
  if (j.contains("tau")) {
    if (!j["tau"].is_array()) {
      ck.fail(path + ".tau", "expected an array of arrays");
    } else {
      int idx = 0;
      for (const auto& tj : j["tau"]) {
        const std::string tpath = path + ".tau[" + std::to_string(idx++) + "]";
        if (!tj.is_array()) {
          ck.fail(tpath, "expected an array of numbers");
          continue;
        }
        std::vector<double> vals;
        for (const auto& v : tj) {
          if (!v.is_number()) {
            ck.fail(tpath, "expected numbers");
            break;
          }
          vals.push_back(v.get<double>());
        }
        point.tau.emplace_back(
            Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<long>(vals.size())));
      }
    }
  }
  return point;
}

SolverOptions parse_solver(const json& j, const std::string& path, Checker& ck, SolverOptions base) {
  if (!ck.require_object(j, path)) return base;
  ck.reject_unknown(j, path,
                    {"em_tol", "em_max_iter", "newton_tol", "newton_max_iter", "armijo_c",
                     "armijo_backtrack", "armijo_max_halvings", "mu0", "mu_decay", "mu_min",
                     "restarts", "d_q", "seed"});
  if (auto v = ck.number(j, path, "em_tol")) base.em_tol = *v;
  if (auto v = ck.integer(j, path, "em_max_iter")) base.em_max_iter = static_cast<int>(*v);
  if (auto v = ck.number(j, path, "newton_tol")) base.newton_tol = *v;
  if (auto v = ck.integer(j, path, "newton_max_iter")) base.newton_max_iter = static_cast<int>(*v);
  if (auto v = ck.number(j, path, "armijo_c")) base.armijo_c = *v;
  if (auto v = ck.number(j, path, "armijo_backtrack")) base.armijo_backtrack = *v;
  if (auto v = ck.integer(j, path, "armijo_max_halvings"))
    base.armijo_max_halvings = static_cast<int>(*v);
  if (auto v = ck.number(j, path, "mu0")) base.mu0 = *v;
  if (auto v = ck.number(j, path, "mu_decay")) base.mu_decay = *v;
  if (auto v = ck.number(j, path, "mu_min")) base.mu_min = *v;
  if (auto v = ck.integer(j, path, "restarts")) base.restarts = static_cast<int>(*v);
  if (auto v = ck.number(j, path, "d_q")) base.d_q = *v;
  if (auto v = ck.integer(j, path, "seed")) base.seed = static_cast<std::uint64_t>(*v);
  return base;
}

NumericOptions parse_numeric(const json& j, const std::string& path, Checker& ck) {
  NumericOptions n;
  if (!ck.require_object(j, path)) return n;
  ck.reject_unknown(j, path, {"rank_factor", "inclusion_tol", "info_loss_tol", "cond_flag"});
  if (auto v = ck.number(j, path, "rank_factor")) n.rank_factor = *v;
  if (auto v = ck.number(j, path, "inclusion_tol")) n.inclusion_tol = *v;
  if (auto v = ck.number(j, path, "info_loss_tol")) n.info_loss_tol = *v;
  if (auto v = ck.number(j, path, "cond_flag")) n.cond_flag = *v;
  return n;
}

ExperimentSpec parse_experiment(const json& j, const std::string& path, Checker& ck) {
  ExperimentSpec e;
  if (!ck.require_object(j, path)) return e;
  ck.reject_unknown(j, path, {"k_grid", "trials", "seed", "out", "jobs", "timing"});
  if (auto v = ck.number_list(j, path, "k_grid", true)) {
    for (double k : *v) {
      if (k < 1 || k != std::floor(k)) {
        ck.fail(path + ".k_grid", "entries must be positive integers");
        break;
      }
      e.k_grid.push_back(static_cast<long>(k));
    }
  }
  if (auto v = ck.integer(j, path, "trials")) e.trials = *v;
  if (auto v = ck.integer(j, path, "seed")) e.seed = static_cast<std::uint64_t>(*v);
  if (auto v = ck.text(j, path, "out")) e.out = *v;
  if (auto v = ck.integer(j, path, "jobs")) e.jobs = static_cast<int>(*v);
  if (j.contains("timing")) {
    if (!j["timing"].is_boolean()) ck.fail(path + ".timing", "expected a boolean");
    else e.timing = j["timing"].get<bool>();
  }
  return e;
}

ScenarioOverrides parse_overrides(const json& j, const std::string& path, Checker& ck) {
  ScenarioOverrides o;
  if (!ck.require_object(j, path)) return o;
  ck.reject_unknown(j, path, {"K", "N", "attacked", "noise_var", "seed", "D_p", "R"});
  if (auto v = ck.integer(j, path, "K")) o.k = *v;
  if (auto v = ck.integer(j, path, "N")) o.n = static_cast<int>(*v);
  if (j.contains("attacked")) {
    if (!j["attacked"].is_array()) {
      ck.fail(path + ".attacked", "expected an array of 1-based sensor ids");
    } else {
      std::vector<int> ids;
      for (const auto& v : j["attacked"]) {
        if (!v.is_number_integer() || v.get<long>() < 1) {
          ck.fail(path + ".attacked", "expected positive integers");
          ids.clear();
          break;
        }
        ids.push_back(static_cast<int>(v.get<long>()));
      }
      if (!ids.empty()) o.attacked = ids;
    }
  }
  if (auto v = ck.number(j, path, "noise_var")) o.noise_var = *v;
  if (auto v = ck.integer(j, path, "seed")) o.seed = static_cast<std::uint64_t>(*v);
  if (auto v = ck.integer(j, path, "D_p")) o.d_p = static_cast<int>(*v);
  if (auto v = ck.integer(j, path, "R")) o.r_levels = static_cast<int>(*v);
  return o;
}

}  // namespace

ConfigDocument parse_config_text(const std::string& text, const std::string& name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({name + ": " + e.what()});
  }
  Checker ck;
  if (!j.is_object()) throw ConfigError({name + ": top level must be an object"});
  ck.reject_unknown(j, "$",
                    {"preset", "overrides", "model", "truth", "d_q", "solver", "numeric",
                     "experiment"});

  ConfigDocument doc;
  const bool has_preset = j.contains("preset");
  if (has_preset) {
    for (const char* key : {"model", "truth", "d_q"})
      if (j.contains(key)) ck.fail(std::string("$.") + key, "not allowed together with `preset`");
    const auto preset = ck.text(j, "$", "preset", true);
    ScenarioOverrides overrides;
    if (j.contains("overrides")) overrides = parse_overrides(j["overrides"], "$.overrides", ck);
    if (ck.errors.empty() && preset) {
      try {
        doc.scenario = make_scenario(*preset, overrides);
      } catch (const ModelError& e) {
        ck.fail("$.preset", e.what());
      }
    }
  } else {
    if (j.contains("overrides")) ck.fail("$.overrides", "only allowed together with `preset`");
    if (!j.contains("model")) ck.fail("$.model", "missing required key (or use `preset`)");
    if (!j.contains("truth")) ck.fail("$.truth", "missing required key (or use `preset`)");
    if (ck.errors.empty()) {
      doc.scenario.id = "custom";
      doc.scenario.model = parse_model(j["model"], "$.model", ck);
      doc.scenario.truth = parse_truth(j["truth"], "$.truth", ck);
      if (auto v = ck.number(j, "$", "d_q")) doc.scenario.d_q = *v;
      if (ck.errors.empty()) {
        try {
          doc.scenario.model.validate();
          doc.scenario.truth.check_dims(doc.scenario.model);
        } catch (const ModelError& e) {
          ck.fail("$.model", e.what());
        }
      }
    }
  }

  if (j.contains("solver") && ck.errors.empty())
    doc.scenario.solver = parse_solver(j["solver"], "$.solver", ck, doc.scenario.solver);
  doc.scenario.solver.d_q = doc.scenario.d_q;
  if (j.contains("numeric")) doc.numeric = parse_numeric(j["numeric"], "$.numeric", ck);
  if (j.contains("experiment")) doc.experiment = parse_experiment(j["experiment"], "$.experiment", ck);

  if (!ck.errors.empty()) throw ConfigError(std::move(ck.errors));
  try {
    doc.scenario.solver.validate();
  } catch (const ModelError& e) {
    throw ConfigError({std::string("$.solver: ") + e.what()});
  }
  return doc;
}

ConfigDocument parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file " + path});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace qspoof
