#include "qspoof/model.hpp"

#include <cmath>
#include <set>

namespace qspoof {

bool ObservationFamily::operator==(const ObservationFamily& other) const {
  if (kind != other.kind) return false;
  switch (kind) {
    case FamilyKind::GaussianMean:
      return noise_var == other.noise_var && mean_index == other.mean_index;
    case FamilyKind::GaussianMeanVariance:
      return mean_index == other.mean_index && var_index == other.var_index;
    case FamilyKind::GaussianPulseDelay:
      return noise_var == other.noise_var && energy == other.energy &&
             amplitude == other.amplitude && pulse_width == other.pulse_width &&
             sample_times == other.sample_times && delay_index == other.delay_index;
    case FamilyKind::LinearGaussian:
      return noise_var == other.noise_var && h.size() == other.h.size() && h == other.h;
  }
  return false;
}

bool AttackModel::operator==(const AttackModel& other) const {
  return form == other.form && dim == other.dim && shift_scale == other.shift_scale &&
         basis.rows() == other.basis.rows() && basis.cols() == other.basis.cols() &&
         basis == other.basis;
}

int NetworkModel::group_dim(int p) const {
  if (p < 1 || p > group_count()) throw ModelError("group index out of range");
  const auto& g = groups[p - 1];
  if (g.sensors.empty()) throw ModelError("empty attack group");
  return sensors[g.sensors.front()].attack.dim;
}

int NetworkModel::group_of(int sensor) const {
  for (int p = 1; p <= group_count(); ++p)
    for (int j : groups[p - 1].sensors)
      if (j == sensor) return p;
  return 0;
}

std::vector<int> NetworkModel::unattacked() const {
  std::vector<int> out;
  for (int j = 0; j < sensor_count(); ++j)
    if (group_of(j) == 0) out.push_back(j);
  return out;
}

int NetworkModel::joint_dim() const {
  int d = d_theta;
  for (int p = 1; p <= group_count(); ++p) d += group_dim(p);
  return d;
}

long NetworkModel::group_rank_bound(int p) const {
  if (p < 1 || p > group_count()) throw ModelError("group index out of range");
  long bound = 0;
  for (int j : groups[p - 1].sensors)
    bound += sensors[j].sample_count() * (sensors[j].quantizer.levels() - 1);
  return bound;
}

std::vector<int> NetworkModel::family_classes() const {
  std::vector<int> cls(sensors.size(), -1);
  int next = 0;
  for (std::size_t j = 0; j < sensors.size(); ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      if (sensors[i].family == sensors[j].family && sensors[i].quantizer == sensors[j].quantizer) {
        cls[j] = cls[i];
        break;
      }
    }
    if (cls[j] < 0) cls[j] = next++;
  }
  return cls;
}

namespace {

void validate_family(const ObservationFamily& f, int d_theta, int index) {
  const std::string where = "sensor " + std::to_string(index + 1) + ": ";
  switch (f.kind) {
    case FamilyKind::GaussianMean:
      if (f.mean_index < 0 || f.mean_index >= d_theta) throw ModelError(where + "mean_index out of range");
      if (!(f.noise_var > 0)) throw ModelError(where + "noise_var must be positive");
      break;
    case FamilyKind::GaussianMeanVariance:
      if (f.mean_index < 0 || f.mean_index >= d_theta) throw ModelError(where + "mean_index out of range");
      if (f.var_index < 0 || f.var_index >= d_theta) throw ModelError(where + "var_index out of range");
      if (f.var_index == f.mean_index) throw ModelError(where + "var_index equals mean_index");
      break;
    case FamilyKind::GaussianPulseDelay:
      if (f.delay_index < 0 || f.delay_index >= d_theta) throw ModelError(where + "delay_index out of range");
      if (f.sample_times.empty()) throw ModelError(where + "pulse family needs sample_times");
      if (!(f.pulse_width > 0)) throw ModelError(where + "pulse_width must be positive");
      if (!(f.noise_var > 0)) throw ModelError(where + "noise_var must be positive");
      break;
    case FamilyKind::LinearGaussian:
      if (f.h.size() != d_theta) throw ModelError(where + "h must have length d_theta");
      if (!(f.noise_var > 0)) throw ModelError(where + "noise_var must be positive");
      break;
  }
}

void validate_attack(const Sensor& s, int d_theta, int index) {
  const std::string where = "sensor " + std::to_string(index + 1) + ": ";
  const AttackModel& a = s.attack;
  if (a.dim < 1) throw ModelError(where + "attack dim must be >= 1");
  switch (a.form) {
    case AttackForm::ParameterShift:
      if (a.dim != d_theta) throw ModelError(where + "parameter-shift attack requires dim == d_theta");
      break;
    case AttackForm::AdditiveMeanOffset:
      if (a.dim != 1) throw ModelError(where + "additive-mean-offset requires dim == 1");
      break;
    case AttackForm::MeanAndVarianceOffset:
      if (a.dim != 2) throw ModelError(where + "mean-and-variance-offset requires dim == 2");
      break;
    case AttackForm::DelayOffset:
      if (s.family.kind != FamilyKind::GaussianPulseDelay)
        throw ModelError(where + "delay-offset attack requires the pulse-delay family");
      if (a.dim != 1) throw ModelError(where + "delay-offset requires dim == 1");
      break;
    case AttackForm::OverparamAdditive:
      if (a.basis.rows() != a.dim || a.basis.cols() < 1)
        throw ModelError(where + "over-parameterized basis must be dim x (cycle length >= 1)");
      break;
  }
}

}  // namespace

void NetworkModel::validate() const {
  if (d_theta < 1) throw ModelError("d_theta must be >= 1");
  if (sensors.empty()) throw ModelError("model needs at least one sensor");
  for (int j = 0; j < sensor_count(); ++j) {
    const Sensor& s = sensors[j];
    if (s.repeats < 1) throw ModelError("sensor " + std::to_string(j + 1) + ": repeats must be >= 1");
    if (s.quantizer.levels() < 2) throw ModelError("sensor " + std::to_string(j + 1) + ": needs >= 2 levels");
    validate_family(s.family, d_theta, j);
    validate_attack(s, d_theta, j);
  }
  std::set<int> seen;
  for (int p = 1; p <= group_count(); ++p) {
    const auto& g = groups[p - 1];
    if (g.sensors.empty()) throw ModelError("attack group " + std::to_string(p) + " is empty");
    const int dim = sensors[g.sensors.front()].attack.dim;
    const AttackModel& ref = sensors[g.sensors.front()].attack;
    for (int j : g.sensors) {
      if (j < 0 || j >= sensor_count())
        throw ModelError("attack group " + std::to_string(p) + ": sensor index out of range");
      if (!seen.insert(j).second)
        throw ModelError("attack groups overlap at sensor " + std::to_string(j + 1));
      if (!(sensors[j].attack == ref) || sensors[j].attack.dim != dim)
        throw ModelError("attack group " + std::to_string(p) + ": members must share one attack form");
    }
  }
}

void ParameterPoint::check_dims(const NetworkModel& model) const {
  if (theta.size() != model.d_theta) throw ModelError("theta has wrong dimension");
  if (static_cast<int>(tau.size()) != model.group_count())
    throw ModelError("tau list length must equal the number of attack groups");
  for (int p = 1; p <= model.group_count(); ++p)
    if (tau[p - 1].size() != model.group_dim(p))
      throw ModelError("tau^(" + std::to_string(p) + ") has wrong dimension");
  if (!theta.allFinite()) throw ModelError("theta has non-finite entries");
  for (const auto& t : tau)
    if (!t.allFinite()) throw ModelError("tau has non-finite entries");
}

}  // namespace qspoof
