#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qspoof/fisher.hpp"
#include "qspoof/scenario.hpp"

namespace qspoof {

/// Schema violations, one message per offending field with its location.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors)
      : std::runtime_error(errors.empty() ? "invalid configuration" : errors.front()),
        errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

struct ExperimentSpec {
  std::vector<long> k_grid;
  long trials = 100;
  std::uint64_t seed = 1;
  std::string out = "experiment.csv";
  int jobs = 1;
  bool timing = false;
};

/// Fully resolved configuration: a scenario (preset-expanded or explicit),
/// numeric tolerances, and an optional experiment block.
struct ConfigDocument {
  Scenario scenario;
  NumericOptions numeric;
  std::optional<ExperimentSpec> experiment;
};

/// Parses and validates a JSON config file. Unknown keys and schema
/// violations are rejected with their JSON path; throws ConfigError listing
/// every problem found.
ConfigDocument parse_config(const std::string& path);

/// Same, from an in-memory document (used by tests and stdin input).
ConfigDocument parse_config_text(const std::string& text, const std::string& name = "<config>");

}  // namespace qspoof
