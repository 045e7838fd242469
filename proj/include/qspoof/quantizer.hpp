#pragma once

#include <vector>

namespace qspoof {

/// Scalar quantizer defined by strictly increasing thresholds t_1 < ... < t_{R-1}.
/// Region r (1-based) is the interval (t_{r-1}, t_r] with t_0 = -inf, t_R = +inf,
/// so boundary points belong to the lower-indexed region.
class Quantizer {
 public:
  Quantizer() = default;
  explicit Quantizer(std::vector<double> thresholds);

  int levels() const { return static_cast<int>(thresholds_.size()) + 1; }
  const std::vector<double>& thresholds() const { return thresholds_; }

  /// Maps x to its level in {1..R}. Throws on NaN input.
  int quantize(double x) const;

  bool operator==(const Quantizer& other) const { return thresholds_ == other.thresholds_; }

 private:
  std::vector<double> thresholds_;
};

}  // namespace qspoof
