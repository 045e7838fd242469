#include "qspoof/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qspoof {

Quantizer::Quantizer(std::vector<double> thresholds) : thresholds_(std::move(thresholds)) {
  for (std::size_t i = 0; i < thresholds_.size(); ++i) {
    if (!std::isfinite(thresholds_[i])) throw std::invalid_argument("quantizer threshold not finite");
    if (i > 0 && !(thresholds_[i - 1] < thresholds_[i]))
      throw std::invalid_argument("quantizer thresholds must be strictly increasing");
  }
}

int Quantizer::quantize(double x) const {
  if (std::isnan(x)) throw std::invalid_argument("quantize: NaN input");
  // Level r solves t_{r-1} < x <= t_r; lower_bound gives the first t >= x.
  auto it = std::lower_bound(thresholds_.begin(), thresholds_.end(), x);
  return static_cast<int>(it - thresholds_.begin()) + 1;
}

}  // namespace qspoof
