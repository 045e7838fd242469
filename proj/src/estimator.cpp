#include "qspoof/estimator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "qspoof/pmf.hpp"
#include "qspoof/random.hpp"

namespace qspoof {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// QuantizedDataset

void QuantizedDataset::validate(const NetworkModel& model) const {
  if (sensor_count() != model.sensor_count())
    throw ModelError("dataset sensor count does not match the model");
  for (int j = 0; j < sensor_count(); ++j) {
    if (levels[j].empty()) throw ModelError("dataset: sensor " + std::to_string(j + 1) + " has no samples");
    const int R = model.sensors[j].quantizer.levels();
    for (std::size_t k = 0; k < levels[j].size(); ++k)
      if (levels[j][k] < 1 || levels[j][k] > R)
        throw ModelError("dataset: level out of range at sensor " + std::to_string(j + 1) +
                         ", k=" + std::to_string(k + 1));
  }
}

std::vector<Eigen::MatrixXd> QuantizedDataset::counts(const NetworkModel& model) const {
  validate(model);
  std::vector<Eigen::MatrixXd> n(levels.size());
  for (int j = 0; j < sensor_count(); ++j) {
    const Sensor& s = model.sensors[j];
    n[j] = Eigen::MatrixXd::Zero(s.pattern_count(), s.quantizer.levels());
    for (std::size_t k = 0; k < levels[j].size(); ++k)
      n[j](s.pattern_of(static_cast<long>(k) + 1), levels[j][k] - 1) += 1.0;
  }
  return n;
}

QuantizedDataset QuantizedDataset::from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open dataset file " + path);
  std::string line;
  if (!std::getline(in, line)) throw ModelError("empty dataset file " + path);
  // Tolerate spaces in the header; require the three expected column names.
  {
    std::string squeezed;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) squeezed += static_cast<char>(std::tolower(c));
    if (squeezed != "sensor,k,level")
      throw ModelError("dataset header must be `sensor,k,level`, got `" + line + "`");
  }
  std::map<int, std::map<long, int>> table;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    long sensor = 0, k = 0, level = 0;
    char c1 = 0, c2 = 0;
    if (!(ss >> sensor >> c1 >> k >> c2 >> level) || c1 != ',' || c2 != ',')
      throw ModelError("dataset line " + std::to_string(line_no) + ": expected `sensor,k,level`");
    if (sensor < 1 || k < 1 || level < 1)
      throw ModelError("dataset line " + std::to_string(line_no) + ": indices are 1-based");
    if (!table[static_cast<int>(sensor)].emplace(k, static_cast<int>(level)).second)
      throw ModelError("dataset line " + std::to_string(line_no) + ": duplicate (sensor,k) record");
  }
  if (table.empty()) throw ModelError("dataset has no records");
  const int n_sensors = table.rbegin()->first;
  QuantizedDataset data;
  data.levels.resize(n_sensors);
  for (int j = 1; j <= n_sensors; ++j) {
    auto it = table.find(j);
    if (it == table.end()) throw ModelError("dataset: sensor " + std::to_string(j) + " missing");
    const auto& recs = it->second;
    const long kmax = recs.rbegin()->first;
    if (static_cast<long>(recs.size()) != kmax)
      throw ModelError("dataset: sensor " + std::to_string(j) + " has gaps in k");
    data.levels[j - 1].reserve(recs.size());
    for (const auto& [k, level] : recs) data.levels[j - 1].push_back(level);
  }
  return data;
}

void QuantizedDataset::to_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot open " + path + " for writing");
  out << "sensor,k,level\n";
  for (int j = 0; j < sensor_count(); ++j)
    for (std::size_t k = 0; k < levels[j].size(); ++k)
      out << (j + 1) << "," << (k + 1) << "," << levels[j][k] << "\n";
}

// ---------------------------------------------------------------------------
// Layout / options

XiLayout XiLayout::of(const NetworkModel& model) {
  XiLayout layout;
  layout.d_theta = model.d_theta;
  int off = model.d_theta;
  for (const Sensor& s : model.sensors) {
    layout.offset.push_back(off);
    layout.dim.push_back(s.attack.dim);
    off += s.attack.dim;
  }
  layout.total = off;
  return layout;
}

void SolverOptions::validate() const {
  if (!(em_tol > 0) || !(newton_tol > 0)) throw ModelError("tolerances must be positive");
  if (em_max_iter < 1 || newton_max_iter < 1) throw ModelError("iteration limits must be >= 1");
  if (!(armijo_c > 0) || !(armijo_backtrack > 0) || armijo_backtrack >= 1)
    throw ModelError("invalid line-search parameters");
  if (!(mu0 > 0) || !(mu_min > 0) || !(mu_decay > 0) || mu_decay >= 1)
    throw ModelError("barrier schedule requires mu0, mu_min > 0 and decay in (0,1)");
  if (restarts < 1) throw ModelError("restarts must be >= 1");
  if (d_q < 0) throw ModelError("d_q must be >= 0");
}

// ---------------------------------------------------------------------------
// Weighted likelihood evaluation core

namespace {

struct QEval {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

/// Expected complete-data objective sum_j sum_{m,r} [a1 ln q~ + (n - a1) ln q]
/// plus an optional log-barrier for the distortion constraints. a1 carries the
/// responsibility-weighted counts (binary eta is the special case a1 = eta*n).
class WeightedObjective {
 public:
  WeightedObjective(const NetworkModel& model, const std::vector<Eigen::MatrixXd>& n,
                    const std::vector<Eigen::MatrixXd>& a1)
      : model_(model), n_(n), a1_(a1), classes_(model.family_classes()),
        layout_(XiLayout::of(model)) {}

  void set_barrier(double mu, double d_q, const Eigen::VectorXi* eta) {
    mu_ = mu;
    d_q_ = d_q;
    eta_ = eta;
  }

  const XiLayout& layout() const { return layout_; }

  /// Value only; -inf when the point is infeasible (variance <= 0 or an
  /// active distortion constraint violated).
  double value(const Eigen::VectorXd& stack) const {
    double total = 0.0;
    const Eigen::VectorXd theta = layout_.theta(stack);
    try {
      if (eta_) {
        for (int j = 0; j < model_.sensor_count(); ++j) {
          if ((*eta_)[j] == 0) continue;
          const double c =
              sensor_distortion(model_.sensors[j], theta, layout_.xi(stack, j)) - d_q_;
          if (!(c > 0)) return kNegInf;
          if (mu_ > 0) total += mu_ * std::log(c);
        }
      }
      std::map<std::pair<int, int>, Eigen::VectorXd> q_cache;
      for (int j = 0; j < model_.sensor_count(); ++j) {
        const Sensor& s = model_.sensors[j];
        const Eigen::VectorXd xi = layout_.xi(stack, j);
        const int M = s.pattern_count();
        for (int m = 0; m < M; ++m) {
          const double a1sum = a1_[j].row(m).sum();
          const double a0sum = n_[j].row(m).sum() - a1sum;
          const Eigen::VectorXd* q = nullptr;
          if (a0sum > 0) {
            auto [it, fresh] = q_cache.try_emplace({classes_[j], m});
            if (fresh) it->second = sensor_pmf(s, theta, nullptr, m);
            q = &it->second;
          }
          Eigen::VectorXd qt;
          if (a1sum > 0) qt = sensor_pmf(s, theta, &xi, m);
          for (int r = 0; r < s.quantizer.levels(); ++r) {
            const double nr = n_[j](m, r);
            if (nr == 0.0) continue;
            const double w1 = a1_[j](m, r);
            if (w1 > 0) total += w1 * std::log(qt[r]);
            if (nr - w1 > 0) total += (nr - w1) * std::log((*q)[r]);
          }
        }
      }
    } catch (const ModelError&) {
      return kNegInf;
    }
    return total;
  }

  /// Value, gradient, and (optionally) Hessian at a feasible point. Throws
  /// ModelError if the point itself is infeasible.
  QEval eval(const Eigen::VectorXd& stack, bool want_hess) const {
    QEval out;
    out.grad = Eigen::VectorXd::Zero(layout_.total);
    if (want_hess) out.hess = Eigen::MatrixXd::Zero(layout_.total, layout_.total);
    const Eigen::VectorXd theta = layout_.theta(stack);
    const int dt = layout_.d_theta;

    std::map<std::pair<int, int>, PmfBundle> q_cache;
    for (int j = 0; j < model_.sensor_count(); ++j) {
      const Sensor& s = model_.sensors[j];
      const Eigen::VectorXd xi = layout_.xi(stack, j);
      const int off = layout_.offset[j];
      const int dx = layout_.dim[j];
      for (int m = 0; m < s.pattern_count(); ++m) {
        const double a1sum = a1_[j].row(m).sum();
        const double a0sum = n_[j].row(m).sum() - a1sum;
        const PmfBundle* qb = nullptr;
        if (a0sum > 0) {
          auto [it, fresh] = q_cache.try_emplace({classes_[j], m});
          if (fresh) it->second = sensor_pmf_bundle(s, theta, nullptr, m, want_hess);
          qb = &it->second;
        }
        PmfBundle tb;
        if (a1sum > 0) tb = sensor_pmf_bundle(s, theta, &xi, m, want_hess);

        for (int r = 0; r < s.quantizer.levels(); ++r) {
          const double nr = n_[j](m, r);
          if (nr == 0.0) continue;
          const double w1 = a1_[j](m, r);
          const double w0 = nr - w1;
          if (w1 > 0) {
            const double iq = 1.0 / tb.pmf[r];
            out.value += w1 * std::log(tb.pmf[r]);
            out.grad.head(dt) += (w1 * iq) * tb.d_theta.col(r);
            out.grad.segment(off, dx) += (w1 * iq) * tb.d_xi.col(r);
            if (want_hess) {
              const Eigen::Map<const Eigen::MatrixXd> d2tt(tb.d2_tt.col(r).data(), dt, dt);
              const Eigen::Map<const Eigen::MatrixXd> d2tx(tb.d2_tx.col(r).data(), dt, dx);
              const Eigen::Map<const Eigen::MatrixXd> d2xx(tb.d2_xx.col(r).data(), dx, dx);
              const Eigen::VectorXd gth = tb.d_theta.col(r);
              const Eigen::VectorXd gxi = tb.d_xi.col(r);
              out.hess.topLeftCorner(dt, dt) +=
                  w1 * (iq * d2tt - (iq * iq) * gth * gth.transpose());
              const Eigen::MatrixXd cross =
                  w1 * (iq * d2tx - (iq * iq) * gth * gxi.transpose());
              out.hess.block(0, off, dt, dx) += cross;
              out.hess.block(off, 0, dx, dt) += cross.transpose();
              out.hess.block(off, off, dx, dx) +=
                  w1 * (iq * d2xx - (iq * iq) * gxi * gxi.transpose());
            }
          }
          if (w0 > 0) {
            const double ip = 1.0 / qb->pmf[r];
            out.value += w0 * std::log(qb->pmf[r]);
            out.grad.head(dt) += (w0 * ip) * qb->d_theta.col(r);
            if (want_hess) {
              const Eigen::Map<const Eigen::MatrixXd> d2tt(qb->d2_tt.col(r).data(), dt, dt);
              const Eigen::VectorXd gth = qb->d_theta.col(r);
              out.hess.topLeftCorner(dt, dt) +=
                  w0 * (ip * d2tt - (ip * ip) * gth * gth.transpose());
            }
          }
        }
      }
    }

    if (eta_) add_barrier(stack, want_hess, out);
    return out;
  }

 private:
  Eigen::VectorXd barrier_gradient(const Eigen::VectorXd& stack) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(layout_.total);
    const Eigen::VectorXd theta = layout_.theta(stack);
    const int dt = layout_.d_theta;
    for (int j = 0; j < model_.sensor_count(); ++j) {
      if ((*eta_)[j] == 0) continue;
      const Eigen::VectorXd xi = layout_.xi(stack, j);
      const double c = sensor_distortion(model_.sensors[j], theta, xi) - d_q_;
      if (!(c > 0)) throw ModelError("barrier: infeasible point");
      const Eigen::VectorXd dc = sensor_distortion_gradient(model_.sensors[j], theta, xi);
      g.head(dt) += (mu_ / c) * dc.head(dt);
      g.segment(layout_.offset[j], layout_.dim[j]) += (mu_ / c) * dc.tail(layout_.dim[j]);
    }
    return g;
  }

  void add_barrier(const Eigen::VectorXd& stack, bool want_hess, QEval& out) const {
    const Eigen::VectorXd theta = layout_.theta(stack);
    for (int j = 0; j < model_.sensor_count(); ++j) {
      if ((*eta_)[j] == 0) continue;
      const double c = sensor_distortion(model_.sensors[j], theta, layout_.xi(stack, j)) - d_q_;
      if (!(c > 0)) throw ModelError("barrier: infeasible point");
      out.value += mu_ * std::log(c);
    }
    const Eigen::VectorXd g0 = barrier_gradient(stack);
    out.grad += g0;
    if (!want_hess) return;
    // Curvature of the barrier term by finite differences of its gradient;
    // only theta and active-sensor xi coordinates can enter.
    std::vector<int> coords;
    for (int i = 0; i < layout_.d_theta; ++i) coords.push_back(i);
    for (int j = 0; j < model_.sensor_count(); ++j)
      if ((*eta_)[j] != 0)
        for (int i = 0; i < layout_.dim[j]; ++i) coords.push_back(layout_.offset[j] + i);
    static const double cbrt_eps = std::cbrt(std::numeric_limits<double>::epsilon());
    Eigen::MatrixXd hb = Eigen::MatrixXd::Zero(layout_.total, layout_.total);
    for (int i : coords) {
      const double h = cbrt_eps * (1.0 + std::abs(stack[i]));
      Eigen::VectorXd hi, lo;
      Eigen::VectorXd x = stack;
      x[i] = stack[i] + h;
      bool have_hi = true, have_lo = true;
      try { hi = barrier_gradient(x); } catch (const ModelError&) { have_hi = false; }
      x[i] = stack[i] - h;
      try { lo = barrier_gradient(x); } catch (const ModelError&) { have_lo = false; }
      if (have_hi && have_lo) hb.col(i) = (hi - lo) / (2.0 * h);
      else if (have_hi) hb.col(i) = (hi - g0) / h;
      else if (have_lo) hb.col(i) = (g0 - lo) / h;
    }
    out.hess += 0.5 * (hb + hb.transpose());
  }

  const NetworkModel& model_;
  const std::vector<Eigen::MatrixXd>& n_;
  const std::vector<Eigen::MatrixXd>& a1_;
  std::vector<int> classes_;
  XiLayout layout_;
  double mu_ = 0.0;
  double d_q_ = 0.0;
  const Eigen::VectorXi* eta_ = nullptr;
};

struct NewtonOut {
  Eigen::VectorXd x;
  double value = kNegInf;
  bool converged = false;
  bool line_search_failed = false;
};

/// Damped Newton ascent with negative-definite regularization and Armijo
/// backtracking. Returns the best iterate seen, so the objective never drops
/// below its starting value.
NewtonOut newton_ascend(const WeightedObjective& obj, const Eigen::VectorXd& x0,
                        const SolverOptions& o) {
  NewtonOut out;
  Eigen::VectorXd x = x0;
  QEval e = obj.eval(x, true);
  if (!std::isfinite(e.value)) throw ModelError("non-finite objective at the starting point");
  out.x = x;
  out.value = e.value;

  for (int it = 0; it < o.newton_max_iter; ++it) {
    if (e.grad.lpNorm<Eigen::Infinity>() < o.newton_tol) {
      out.converged = true;
      break;
    }
    // Shift the Hessian to be safely negative definite before solving.
    Eigen::MatrixXd h = e.hess;
    const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h)
                            .eigenvalues()
                            .maxCoeff();
    if (lmax > -1e-12) {
      const double shift = lmax + std::max(1e-8, 1e-8 * std::abs(lmax));
      h.diagonal().array() -= shift;
    }
    Eigen::VectorXd dir;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-h);
    if (ldlt.info() == Eigen::Success) dir = ldlt.solve(e.grad);
    if (ldlt.info() != Eigen::Success || !dir.allFinite() || e.grad.dot(dir) <= 0)
      dir = e.grad;  // gradient-ascent fallback

    const double slope = e.grad.dot(dir);
    double kappa = 1.0;
    bool accepted = false;
    double trial_value = kNegInf;
    for (int half = 0; half <= o.armijo_max_halvings; ++half) {
      trial_value = obj.value(x + kappa * dir);
      if (std::isfinite(trial_value) && trial_value >= e.value + o.armijo_c * kappa * slope) {
        accepted = true;
        break;
      }
      kappa *= o.armijo_backtrack;
    }
    if (!accepted) {
      out.line_search_failed = true;
      break;
    }
    x += kappa * dir;
    e = obj.eval(x, true);
    if (e.value > out.value) {
      out.value = e.value;
      out.x = x;
    }
  }
  return out;
}

std::vector<Eigen::MatrixXd> binary_weights(const std::vector<Eigen::MatrixXd>& n,
                                            const Eigen::VectorXi& eta) {
  std::vector<Eigen::MatrixXd> a1(n.size());
  for (std::size_t j = 0; j < n.size(); ++j)
    a1[j] = (eta[static_cast<int>(j)] != 0) ? n[j] : Eigen::MatrixXd::Zero(n[j].rows(), n[j].cols());
  return a1;
}

std::vector<Eigen::MatrixXd> responsibility_weights(const std::vector<Eigen::MatrixXd>& n,
                                                    const std::vector<Eigen::MatrixXd>& upsilon) {
  std::vector<Eigen::MatrixXd> a1(n.size());
  for (std::size_t j = 0; j < n.size(); ++j) a1[j] = n[j].cwiseProduct(upsilon[j]);
  return a1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Spec-level operations

double loglik(const NetworkModel& model, const QuantizedDataset& data,
              const Eigen::VectorXd& xi_stack, const Eigen::VectorXi& eta) {
  if (eta.size() != model.sensor_count()) throw ModelError("eta has wrong dimension");
  const auto n = data.counts(model);
  const auto a1 = binary_weights(n, eta);
  WeightedObjective obj(model, n, a1);
  const double v = obj.value(xi_stack);
  if (!std::isfinite(v)) throw ModelError("log-likelihood not finite at the given point");
  return v;
}

double relaxed_objective(const NetworkModel& model, const QuantizedDataset& data,
                         const Eigen::VectorXd& xi_stack, const Eigen::VectorXd& pi) {
  const auto n = data.counts(model);
  const XiLayout layout = XiLayout::of(model);
  const Eigen::VectorXd theta = layout.theta(xi_stack);
  const auto classes = model.family_classes();
  std::map<std::pair<int, int>, Eigen::VectorXd> q_cache;
  double total = 0.0;
  for (int j = 0; j < model.sensor_count(); ++j) {
    const Sensor& s = model.sensors[j];
    const Eigen::VectorXd xi = layout.xi(xi_stack, j);
    for (int m = 0; m < s.pattern_count(); ++m) {
      if (n[j].row(m).sum() == 0.0) continue;
      auto [it, fresh] = q_cache.try_emplace({classes[j], m});
      if (fresh) it->second = sensor_pmf(s, theta, nullptr, m);
      const Eigen::VectorXd qt = sensor_pmf(s, theta, &xi, m);
      for (int r = 0; r < s.quantizer.levels(); ++r) {
        if (n[j](m, r) == 0.0) continue;
        total += n[j](m, r) * std::log(pi[j] * qt[r] + (1.0 - pi[j]) * it->second[r]);
      }
    }
  }
  return total;
}

std::vector<Eigen::MatrixXd> e_step(const NetworkModel& model, const QuantizedDataset& data,
                                    const Eigen::VectorXd& xi_stack, const Eigen::VectorXd& pi) {
  if (pi.size() != model.sensor_count()) throw ModelError("pi has wrong dimension");
  if ((pi.array() < 0.0).any() || (pi.array() > 1.0).any())
    throw ModelError("pi entries must lie in [0,1]");
  data.validate(model);
  const XiLayout layout = XiLayout::of(model);
  const Eigen::VectorXd theta = layout.theta(xi_stack);
  const auto classes = model.family_classes();
  std::map<std::pair<int, int>, Eigen::VectorXd> q_cache;
  std::vector<Eigen::MatrixXd> upsilon(model.sensor_count());
  for (int j = 0; j < model.sensor_count(); ++j) {
    const Sensor& s = model.sensors[j];
    const Eigen::VectorXd xi = layout.xi(xi_stack, j);
    upsilon[j].resize(s.pattern_count(), s.quantizer.levels());
    for (int m = 0; m < s.pattern_count(); ++m) {
      auto [it, fresh] = q_cache.try_emplace({classes[j], m});
      if (fresh) it->second = sensor_pmf(s, theta, nullptr, m);
      const Eigen::VectorXd qt = sensor_pmf(s, theta, &xi, m);
      for (int r = 0; r < s.quantizer.levels(); ++r) {
        const double num = pi[j] * qt[r];
        const double den = num + (1.0 - pi[j]) * it->second[r];
        if (den <= 0.0) throw ModelError("e_step: zero mixture probability");
        upsilon[j](m, r) = num / den;
      }
    }
  }
  return upsilon;
}

Eigen::VectorXd m_step_pi(const NetworkModel& model, const QuantizedDataset& data,
                          const std::vector<Eigen::MatrixXd>& upsilon) {
  const auto n = data.counts(model);
  Eigen::VectorXd pi(model.sensor_count());
  for (int j = 0; j < model.sensor_count(); ++j) {
    const double kj = n[j].sum();
    if (kj <= 0) throw ModelError("m_step_pi: sensor with no samples");
    pi[j] = n[j].cwiseProduct(upsilon[j]).sum() / kj;
  }
  return pi;
}

double q_objective(const NetworkModel& model, const QuantizedDataset& data,
                   const std::vector<Eigen::MatrixXd>& upsilon, const Eigen::VectorXd& xi_stack,
                   Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
  const auto n = data.counts(model);
  const auto a1 = responsibility_weights(n, upsilon);
  WeightedObjective obj(model, n, a1);
  if (grad == nullptr && hess == nullptr) return obj.value(xi_stack);
  QEval e = obj.eval(xi_stack, hess != nullptr);
  if (grad) *grad = e.grad;
  if (hess) *hess = e.hess;
  return e.value;
}

MStepResult m_step_xi(const NetworkModel& model, const QuantizedDataset& data,
                      const std::vector<Eigen::MatrixXd>& upsilon,
                      const Eigen::VectorXd& xi_start, const SolverOptions& options) {
  options.validate();
  const auto n = data.counts(model);
  const auto a1 = responsibility_weights(n, upsilon);
  WeightedObjective obj(model, n, a1);
  const NewtonOut out = newton_ascend(obj, xi_start, options);
  return {out.x, out.converged, out.line_search_failed};
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

/// Representative value of a quantization region (interval midpoint; open
/// edge regions extend by half the mean inner gap).
double region_midpoint(const Quantizer& q, int level) {
  const auto& t = q.thresholds();
  const int R = q.levels();
  double w = 1.0;
  if (R > 2) w = (t.back() - t.front()) / (R - 2);
  if (level == 1) return t.front() - 0.5 * w;
  if (level == R) return t.back() + 0.5 * w;
  return 0.5 * (t[level - 2] + t[level - 1]);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Log-likelihood of theta with every sensor treated as unattacked.
double all_unattacked_loglik(const NetworkModel& model, const std::vector<Eigen::MatrixXd>& n,
                             const Eigen::VectorXd& theta) {
  const auto classes = model.family_classes();
  std::map<std::pair<int, int>, Eigen::VectorXd> q_cache;
  double total = 0.0;
  for (int j = 0; j < model.sensor_count(); ++j) {
    const Sensor& s = model.sensors[j];
    for (int m = 0; m < s.pattern_count(); ++m) {
      if (n[j].row(m).sum() == 0.0) continue;
      auto [it, fresh] = q_cache.try_emplace({classes[j], m});
      if (fresh) it->second = sensor_pmf(s, theta, nullptr, m);
      for (int r = 0; r < s.quantizer.levels(); ++r)
        if (n[j](m, r) > 0.0) total += n[j](m, r) * std::log(it->second[r]);
    }
  }
  return total;
}

}  // namespace

Eigen::VectorXd initial_theta_guess(const NetworkModel& model, const QuantizedDataset& data) {
  const auto n = data.counts(model);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(model.d_theta);

  // Variance components must start positive.
  for (const Sensor& s : model.sensors)
    if (s.family.kind == FamilyKind::GaussianMeanVariance) theta[s.family.var_index] = 1.0;

  // Per-sensor moments from region midpoints.
  std::vector<double> mean(model.sensor_count()), var(model.sensor_count());
  for (int j = 0; j < model.sensor_count(); ++j) {
    const Sensor& s = model.sensors[j];
    const double kj = n[j].sum();
    double mu = 0.0;
    for (int m = 0; m < n[j].rows(); ++m)
      for (int r = 0; r < n[j].cols(); ++r)
        mu += n[j](m, r) * region_midpoint(s.quantizer, r + 1);
    mu /= kj;
    double v = 0.0;
    for (int m = 0; m < n[j].rows(); ++m)
      for (int r = 0; r < n[j].cols(); ++r) {
        const double d = region_midpoint(s.quantizer, r + 1) - mu;
        v += n[j](m, r) * d * d;
      }
    mean[j] = mu;
    var[j] = v / kj;
  }

  // Linear sensors: least squares on the reconstructed means.
  {
    std::vector<int> linear;
    for (int j = 0; j < model.sensor_count(); ++j)
      if (model.sensors[j].family.kind == FamilyKind::LinearGaussian) linear.push_back(j);
    if (!linear.empty()) {
      Eigen::MatrixXd a(linear.size(), model.d_theta);
      Eigen::VectorXd b(linear.size());
      for (std::size_t i = 0; i < linear.size(); ++i) {
        a.row(i) = model.sensors[linear[i]].family.h.transpose();
        b[i] = mean[linear[i]];
      }
      theta = a.colPivHouseholderQr().solve(b);
    }
  }

  // Mean / variance components: medians across sensors (robust to the
  // attacked minority).
  std::map<int, std::vector<double>> mean_votes, var_votes;
  for (int j = 0; j < model.sensor_count(); ++j) {
    const ObservationFamily& f = model.sensors[j].family;
    if (f.kind == FamilyKind::GaussianMean) {
      mean_votes[f.mean_index].push_back(mean[j]);
    } else if (f.kind == FamilyKind::GaussianMeanVariance) {
      mean_votes[f.mean_index].push_back(mean[j]);
      var_votes[f.var_index].push_back(var[j]);
    }
  }
  for (const auto& [idx, votes] : mean_votes) theta[idx] = median(votes);
  for (const auto& [idx, votes] : var_votes) theta[idx] = std::max(median(votes), 1e-3);

  // Pulse delay components: coarse scan of the all-unattacked likelihood.
  std::vector<int> delay_comps;
  double t_lo = 0.0, t_hi = 0.0, t_width = 0.0;
  bool any_pulse = false;
  for (const Sensor& s : model.sensors) {
    if (s.family.kind != FamilyKind::GaussianPulseDelay) continue;
    const auto [lo, hi] =
        std::minmax_element(s.family.sample_times.begin(), s.family.sample_times.end());
    if (!any_pulse) {
      t_lo = *lo;
      t_hi = *hi;
      t_width = s.family.pulse_width;
      delay_comps.push_back(s.family.delay_index);
      any_pulse = true;
    } else {
      t_lo = std::min(t_lo, *lo);
      t_hi = std::max(t_hi, *hi);
      t_width = std::max(t_width, s.family.pulse_width);
      if (std::find(delay_comps.begin(), delay_comps.end(), s.family.delay_index) ==
          delay_comps.end())
        delay_comps.push_back(s.family.delay_index);
    }
  }
  for (int comp : delay_comps) {
    const double lo = t_lo - 3.0 * t_width;
    const double hi = t_hi + 3.0 * t_width;
    const int grid = 241;
    double best = kNegInf, best_d = theta[comp];
    for (int g = 0; g < grid; ++g) {
      Eigen::VectorXd cand = theta;
      cand[comp] = lo + (hi - lo) * g / (grid - 1);
      const double v = all_unattacked_loglik(model, n, cand);
      if (v > best) {
        best = v;
        best_d = cand[comp];
      }
    }
    theta[comp] = best_d;
  }
  return theta;
}

Eigen::VectorXd unattacked_mle(const NetworkModel& model, const QuantizedDataset& data,
                               const SolverOptions& options) {
  const XiLayout layout = XiLayout::of(model);
  Eigen::VectorXd stack = Eigen::VectorXd::Zero(layout.total);
  stack.head(model.d_theta) = initial_theta_guess(model, data);
  std::vector<Eigen::MatrixXd> zero_upsilon(model.sensor_count());
  const auto n = data.counts(model);
  for (int j = 0; j < model.sensor_count(); ++j)
    zero_upsilon[j] = Eigen::MatrixXd::Zero(n[j].rows(), n[j].cols());
  SolverOptions polish = options;
  polish.newton_max_iter = std::max(options.newton_max_iter, 50);
  return m_step_xi(model, data, zero_upsilon, stack, polish).xi_stack.head(model.d_theta);
}

EmInit default_init(const NetworkModel& model, const QuantizedDataset& data,
                    const SolverOptions& options) {
  EmInit init;
  init.theta = unattacked_mle(model, data, options);
  init.pi = Eigen::VectorXd::Constant(model.sensor_count(), 0.5);
  init.xi.resize(model.sensor_count());
  for (int j = 0; j < model.sensor_count(); ++j) {
    std::mt19937_64 rng(mix_seed(options.seed, 0x1111, static_cast<std::uint64_t>(j)));
    Eigen::VectorXd xi(model.sensors[j].attack.dim);
    for (int i = 0; i < xi.size(); ++i) xi[i] = 0.1 * standard_normal(rng);
    // Shrink until the attacked-hypothesis family evaluates cleanly.
    for (int attempt = 0; attempt < 30; ++attempt) {
      try {
        sensor_pmf(model.sensors[j], init.theta, &xi, 0);
        break;
      } catch (const ModelError&) {
        xi *= 0.5;
      }
    }
    init.xi[j] = xi;
  }
  return init;
}

// ---------------------------------------------------------------------------
// EM driver

RelaxedState em_relaxed(const NetworkModel& model, const QuantizedDataset& data,
                        const EmInit& init, const SolverOptions& options) {
  options.validate();
  model.validate();
  data.validate(model);
  const XiLayout layout = XiLayout::of(model);
  if (init.theta.size() != model.d_theta) throw ModelError("init theta has wrong dimension");

  RelaxedState best;
  best.objective = kNegInf;
  bool any_success = false;

  for (int restart = 0; restart < options.restarts; ++restart) {
    std::mt19937_64 rng(mix_seed(options.seed, 0xE11, static_cast<std::uint64_t>(restart)));
    Eigen::VectorXd stack = Eigen::VectorXd::Zero(layout.total);
    Eigen::VectorXd pi = init.pi;
    stack.head(model.d_theta) = init.theta;
    for (int j = 0; j < model.sensor_count(); ++j)
      stack.segment(layout.offset[j], layout.dim[j]) = init.xi[j];
    if (restart > 0) {
      for (int i = 0; i < model.d_theta; ++i)
        stack[i] += 0.1 * (1.0 + std::abs(stack[i])) * standard_normal(rng);
      for (int j = 0; j < model.sensor_count(); ++j)
        for (int i = 0; i < layout.dim[j]; ++i)
          stack[layout.offset[j] + i] += 0.3 * standard_normal(rng);
      for (int j = 0; j < model.sensor_count(); ++j)
        pi[j] = std::clamp(pi[j] + 0.2 * standard_normal(rng), 0.05, 0.95);
    }

    double obj;
    try {
      obj = relaxed_objective(model, data, stack, pi);
    } catch (const ModelError&) {
      continue;  // perturbed start infeasible
    }
    if (!std::isfinite(obj)) continue;

    RelaxedState state;
    state.trace.push_back(obj);
    bool failed = false;
    for (int iter = 0; iter < options.em_max_iter; ++iter) {
      try {
        state.upsilon = e_step(model, data, stack, pi);
        pi = m_step_pi(model, data, state.upsilon);
        stack = m_step_xi(model, data, state.upsilon, stack, options).xi_stack;
      } catch (const ModelError&) {
        failed = true;
        break;
      }
      const double next = relaxed_objective(model, data, stack, pi);
      state.trace.push_back(next);
      if (std::abs(next - obj) < options.em_tol * std::max(1.0, std::abs(obj))) {
        obj = next;
        state.converged = true;
        break;
      }
      obj = next;
    }
    if (failed && state.trace.size() <= 1) continue;

    state.xi_stack = stack;
    state.pi = pi;
    state.objective = obj;
    if (state.upsilon.empty()) state.upsilon = e_step(model, data, stack, pi);
    any_success = true;
    if (obj > best.objective) best = std::move(state);
  }

  if (!any_success) {
    best.flagged = true;
    best.flag_reason = "all EM restarts diverged";
    best.xi_stack = Eigen::VectorXd::Zero(layout.total);
    best.xi_stack.head(model.d_theta) = init.theta;
    for (int j = 0; j < model.sensor_count(); ++j)
      best.xi_stack.segment(layout.offset[j], layout.dim[j]) = init.xi[j];
    best.pi = init.pi;
    best.upsilon = e_step(model, data, best.xi_stack, best.pi);
    best.objective = relaxed_objective(model, data, best.xi_stack, best.pi);
  }
  return best;
}

// ---------------------------------------------------------------------------
// CVTR and barrier refinement

std::vector<Eigen::VectorXi> cvtr_candidates(const Eigen::VectorXd& pi_hat, int n) {
  if (pi_hat.size() != n) throw ModelError("cvtr_candidates: pi has wrong length");
  std::vector<double> distinct(pi_hat.data(), pi_hat.data() + n);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  // Threshold sweep: endpoints of [0,1] plus midpoints between neighboring
  // distinct values; lambda descending yields candidates of growing size.
  std::vector<double> lambdas{1.0};
  for (std::size_t i = distinct.size(); i > 1; --i)
    lambdas.push_back(0.5 * (distinct[i - 2] + distinct[i - 1]));
  lambdas.push_back(0.0);

  std::vector<Eigen::VectorXi> out;
  for (double lambda : lambdas) {
    Eigen::VectorXi eta(n);
    for (int j = 0; j < n; ++j) eta[j] = pi_hat[j] > lambda ? 1 : 0;
    if (2 * eta.sum() >= n) continue;  // sum(eta) < N/2
    if (std::find(out.begin(), out.end(), eta) == out.end()) out.push_back(eta);
  }
  return out;  // lambda = 1 guarantees the all-zeros candidate
}

BarrierResult barrier_solve(const NetworkModel& model, const QuantizedDataset& data,
                            const Eigen::VectorXi& eta, const Eigen::VectorXd& xi_start,
                            const SolverOptions& options) {
  options.validate();
  if (eta.size() != model.sensor_count()) throw ModelError("eta has wrong dimension");
  const auto n = data.counts(model);
  const auto a1 = binary_weights(n, eta);
  const XiLayout layout = XiLayout::of(model);

  BarrierResult result;
  Eigen::VectorXd stack = xi_start;

  // Strictly feasible start: scale each declared-attacked xi outward (or
  // redraw) until its distortion clears d_q.
  const Eigen::VectorXd theta0 = layout.theta(stack);
  for (int j = 0; j < model.sensor_count(); ++j) {
    if (eta[j] == 0) continue;
    std::mt19937_64 rng(mix_seed(options.seed, 0xBA22, static_cast<std::uint64_t>(j)));
    Eigen::VectorXd xi = layout.xi(stack, j);
    bool ok = false;
    for (int attempt = 0; attempt < 20; ++attempt) {
      try {
        if (sensor_distortion(model.sensors[j], theta0, xi) > options.d_q) {
          ok = true;
          break;
        }
      } catch (const ModelError&) {
        // fall through to a fresh draw
        xi.setZero();
      }
      if (xi.norm() < 1e-8 || attempt % 5 == 4) {
        for (int i = 0; i < xi.size(); ++i) xi[i] = 0.5 * standard_normal(rng);
      } else {
        xi *= 1.5;
      }
    }
    if (!ok) {
      result.flag_reason = "no feasible start for sensor " + std::to_string(j + 1);
      return result;
    }
    stack.segment(layout.offset[j], layout.dim[j]) = xi;
  }

  WeightedObjective obj(model, n, a1);
  const bool constrained = eta.sum() > 0;

  try {
    if (!constrained) {
      const NewtonOut out = newton_ascend(obj, stack, options);
      stack = out.x;
    } else {
      for (double mu = options.mu0; mu >= options.mu_min * (1.0 - 1e-12);
           mu *= options.mu_decay) {
        obj.set_barrier(mu, options.d_q, &eta);
        const NewtonOut out = newton_ascend(obj, stack, options);
        stack = out.x;
      }
    }
  } catch (const ModelError& err) {
    result.flag_reason = err.what();
    return result;
  }

  // Report the unpenalized constrained objective at the solution.
  obj.set_barrier(0.0, options.d_q, constrained ? &eta : nullptr);
  const double value = obj.value(stack);
  if (!std::isfinite(value)) {
    result.flag_reason = "barrier solution infeasible";
    return result;
  }
  result.xi_stack = stack;
  result.objective = value;
  result.feasible = true;
  return result;
}

EstimateReport joint_identify_estimate(const NetworkModel& model, const QuantizedDataset& data,
                                       const SolverOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  options.validate();
  model.validate();
  data.validate(model);

  EstimateReport report;
  const EmInit init = default_init(model, data, options);
  report.relaxed = em_relaxed(model, data, init, options);

  const int n_sensors = model.sensor_count();
  report.rounded.candidates = cvtr_candidates(report.relaxed.pi, n_sensors);
  report.rounded.objective.assign(report.rounded.candidates.size(),
                                  std::numeric_limits<double>::quiet_NaN());
  report.rounded.feasible.assign(report.rounded.candidates.size(), false);

  std::vector<Eigen::VectorXd> solutions(report.rounded.candidates.size());
  for (std::size_t l = 0; l < report.rounded.candidates.size(); ++l) {
    const BarrierResult res = barrier_solve(model, data, report.rounded.candidates[l],
                                            report.relaxed.xi_stack, options);
    report.rounded.feasible[l] = res.feasible;
    if (res.feasible) {
      report.rounded.objective[l] = res.objective;
      solutions[l] = res.xi_stack;
    }
  }

  int best = -1;
  for (std::size_t l = 0; l < report.rounded.candidates.size(); ++l) {
    if (!report.rounded.feasible[l]) continue;
    if (best < 0) {
      best = static_cast<int>(l);
      continue;
    }
    const double dv = report.rounded.objective[l] - report.rounded.objective[best];
    if (dv > 0) {
      best = static_cast<int>(l);
    } else if (dv == 0) {
      const Eigen::VectorXi& a = report.rounded.candidates[l];
      const Eigen::VectorXi& b = report.rounded.candidates[best];
      if (a.sum() < b.sum()) {
        best = static_cast<int>(l);
      } else if (a.sum() == b.sum()) {
        for (int j = 0; j < n_sensors; ++j) {
          if (a[j] == b[j]) continue;
          if (a[j] < b[j]) best = static_cast<int>(l);
          break;
        }
      }
    }
  }

  if (best < 0) {
    // Every candidate infeasible (the all-zeros candidate failed): fall back
    // to the unattacked MLE, flagged.
    report.rounded.flagged = true;
    report.rounded.flag_reason = "every CVTR candidate infeasible";
    report.rounded.eta = Eigen::VectorXi::Zero(n_sensors);
    const XiLayout layout = XiLayout::of(model);
    report.rounded.xi_stack = Eigen::VectorXd::Zero(layout.total);
    report.rounded.xi_stack.head(model.d_theta) = unattacked_mle(model, data, options);
  } else {
    report.rounded.selected = best;
    report.rounded.eta = report.rounded.candidates[best];
    report.rounded.xi_stack = solutions[best];
  }
  report.rounded.flagged = report.rounded.flagged || report.relaxed.flagged;
  if (report.relaxed.flagged) report.rounded.flag_reason = report.relaxed.flag_reason;

  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                       .count();
  return report;
}

}  // namespace qspoof
