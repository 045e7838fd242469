#include "qspoof/report.hpp"

#include <cstdio>

#include <json.hpp>

namespace qspoof {

using nlohmann::json;

std::string format_sig(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

namespace {

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

void print_matrix(std::ostream& out, const Eigen::MatrixXd& m, const std::string& indent) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << indent;
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out << format_sig(m(i, j)) << (j + 1 == m.cols() ? "" : " ");
    out << "\n";
  }
}

const char* verdict_label(const AttackVerdict& v) {
  if (v.is_isa) return "ISA";
  if (v.is_oesa) return "OESA";
  return "estimable-non-optimal";
}

json verdict_json(const AttackVerdict& v) {
  json j;
  j["group"] = v.group;
  j["verdict"] = verdict_label(v);
  j["dim"] = v.dim;
  j["dimension_check"] = v.dimension_check;
  j["rank_bound"] = v.rank_bound;
  j["rank_j_tau"] = v.rank_j_tau;
  j["singular_values"] = vector_json(v.singular_values);
  j["is_isa"] = v.is_isa;
  j["inclusion_residual"] = v.inclusion_residual;
  j["is_oesa"] = v.is_oesa;
  j["information_loss_norm"] = v.information_loss_norm;
  j["paths_agree"] = v.paths_agree;
  j["point_independent"] = v.point_independent;
  j["is_ogdsa_component"] = v.is_ogdsa_component;
  return j;
}

}  // namespace

void print_classification(std::ostream& out, const ClassificationReport& report,
                          ReportFormat format) {
  if (format == ReportFormat::Json) {
    json j;
    j["groups"] = json::array();
    for (const AttackVerdict& v : report.verdicts) j["groups"].push_back(verdict_json(v));
    j["ogdsa"] = report.ogdsa;
    out << j.dump(2) << "\n";
    return;
  }
  for (const AttackVerdict& v : report.verdicts) {
    out << "group " << v.group << ": " << verdict_label(v);
    if (v.is_isa && v.dimension_check)
      out << " (dimension bound " << v.rank_bound << " < D_p " << v.dim << ")";
    out << "\n";
    out << "  dimension_check: " << (v.dimension_check ? "true" : "false")
        << "  rank(J_tau): " << v.rank_j_tau << " / " << v.dim << "\n";
    out << "  singular values:";
    for (Eigen::Index i = 0; i < v.singular_values.size(); ++i)
      out << " " << format_sig(v.singular_values[i]);
    out << "\n";
    out << "  inclusion_residual: " << format_sig(v.inclusion_residual)
        << "  information_loss_norm: " << format_sig(v.information_loss_norm) << "\n";
    out << "  point_independent: " << (v.point_independent ? "true" : "false")
        << "  paths_agree: " << (v.paths_agree ? "true" : "false") << "\n";
  }
  out << "OGDSA: " << (report.ogdsa ? "yes" : "no") << "\n";
}

void print_crb(std::ostream& out, const CrbReport& report, ReportFormat format) {
  if (format == ReportFormat::Json) {
    json j;
    if (report.crb_unattacked) {
      j["crb_unattacked"] = matrix_json(*report.crb_unattacked);
      j["crb_unattacked_trace"] = report.crb_unattacked->trace();
    }
    if (report.crb_esa) {
      j["crb_esa"] = matrix_json(*report.crb_esa);
      j["crb_esa_trace"] = report.crb_esa->trace();
    }
    if (report.crb_alldata_known_attacks) {
      j["crb_alldata_known_attacks"] = matrix_json(*report.crb_alldata_known_attacks);
      j["crb_alldata_trace"] = report.crb_alldata_known_attacks->trace();
    }
    j["information_loss"] = json::array();
    for (const auto& m : report.information_loss) j["information_loss"].push_back(matrix_json(m));
    j["warnings"] = report.warnings;
    out << j.dump(2) << "\n";
    return;
  }
  if (report.crb_unattacked) {
    out << "crb_unattacked (trace " << format_sig(report.crb_unattacked->trace()) << "):\n";
    print_matrix(out, *report.crb_unattacked, "  ");
  } else {
    out << "crb_unattacked: unavailable\n";
  }
  if (report.crb_esa) {
    out << "crb_esa (trace " << format_sig(report.crb_esa->trace()) << "):\n";
    print_matrix(out, *report.crb_esa, "  ");
  } else {
    out << "crb_esa: unavailable (inestimable attack present)\n";
  }
  if (report.crb_alldata_known_attacks) {
    out << "crb_alldata_known_attacks (trace "
        << format_sig(report.crb_alldata_known_attacks->trace()) << "):\n";
    print_matrix(out, *report.crb_alldata_known_attacks, "  ");
  } else {
    out << "crb_alldata_known_attacks: unavailable (joint FIM singular)\n";
  }
  for (std::size_t p = 0; p < report.information_loss.size(); ++p) {
    out << "information_loss group " << (p + 1) << " (frobenius "
        << format_sig(report.information_loss[p].norm()) << "):\n";
    print_matrix(out, report.information_loss[p], "  ");
  }
  for (const std::string& w : report.warnings) out << "warn: " << w << "\n";
}

void print_estimate(std::ostream& out, const EstimateReport& report, const NetworkModel& model,
                    ReportFormat format) {
  const XiLayout layout = XiLayout::of(model);
  const Eigen::VectorXd theta = report.rounded.xi_stack.head(model.d_theta);
  if (format == ReportFormat::Json) {
    json j;
    j["theta_hat"] = vector_json(theta);
    json eta = json::array();
    for (int i = 0; i < report.rounded.eta.size(); ++i) eta.push_back(report.rounded.eta[i]);
    j["eta_hat"] = eta;
    json xi = json::array();
    for (int s = 0; s < model.sensor_count(); ++s)
      xi.push_back(vector_json(layout.xi(report.rounded.xi_stack, s)));
    j["xi_hat"] = xi;
    j["pi_hat"] = vector_json(report.relaxed.pi);
    j["relaxed_objective"] = report.relaxed.objective;
    j["relaxed_trace"] = report.relaxed.trace;
    j["em_converged"] = report.relaxed.converged;
    j["candidates"] = json::array();
    for (std::size_t l = 0; l < report.rounded.candidates.size(); ++l) {
      json c;
      json bits = json::array();
      for (int i = 0; i < report.rounded.candidates[l].size(); ++i)
        bits.push_back(report.rounded.candidates[l][i]);
      c["eta"] = bits;
      c["feasible"] = static_cast<bool>(report.rounded.feasible[l]);
      c["objective"] = report.rounded.objective[l];
      c["selected"] = static_cast<int>(l) == report.rounded.selected;
      j["candidates"].push_back(c);
    }
    j["flagged"] = report.rounded.flagged;
    if (report.rounded.flagged) j["flag_reason"] = report.rounded.flag_reason;
    j["wall_ms"] = report.wall_ms;
    out << j.dump(2) << "\n";
    return;
  }
  out << "theta_hat:";
  for (Eigen::Index i = 0; i < theta.size(); ++i) out << " " << format_sig(theta[i]);
  out << "\neta_hat:";
  for (int i = 0; i < report.rounded.eta.size(); ++i) out << " " << report.rounded.eta[i];
  out << "\npi_hat:";
  for (Eigen::Index i = 0; i < report.relaxed.pi.size(); ++i)
    out << " " << format_sig(report.relaxed.pi[i]);
  out << "\n";
  for (int s = 0; s < model.sensor_count(); ++s) {
    if (report.rounded.eta[s] == 0) continue;
    out << "xi_hat sensor " << (s + 1) << ":";
    const Eigen::VectorXd xi = layout.xi(report.rounded.xi_stack, s);
    for (Eigen::Index i = 0; i < xi.size(); ++i) out << " " << format_sig(xi[i]);
    out << "\n";
  }
  out << "relaxed objective: " << format_sig(report.relaxed.objective)
      << (report.relaxed.converged ? " (EM converged)" : " (EM iteration cap)") << "\n";
  out << "candidates:\n";
  for (std::size_t l = 0; l < report.rounded.candidates.size(); ++l) {
    out << (static_cast<int>(l) == report.rounded.selected ? "  * " : "    ") << "{";
    bool first = true;
    for (int i = 0; i < report.rounded.candidates[l].size(); ++i) {
      if (report.rounded.candidates[l][i] != 0) {
        out << (first ? "" : ",") << (i + 1);
        first = false;
      }
    }
    out << "} ";
    if (report.rounded.feasible[l]) out << "L = " << format_sig(report.rounded.objective[l]);
    else out << "infeasible";
    out << "\n";
  }
  if (report.rounded.flagged) out << "warn: " << report.rounded.flag_reason << "\n";
}

}  // namespace qspoof
