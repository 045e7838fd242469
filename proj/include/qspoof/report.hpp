#pragma once

#include <ostream>
#include <string>

#include "qspoof/classifier.hpp"
#include "qspoof/estimator.hpp"
#include "qspoof/fisher.hpp"

namespace qspoof {

/// 12-significant-digit rendering used by the human-readable reports; the
/// machine format carries full doubles, so both agree to 12 digits.
std::string format_sig(double v);

enum class ReportFormat { Human, Json };

void print_classification(std::ostream& out, const ClassificationReport& report,
                          ReportFormat format);
void print_crb(std::ostream& out, const CrbReport& report, ReportFormat format);
void print_estimate(std::ostream& out, const EstimateReport& report, const NetworkModel& model,
                    ReportFormat format);

}  // namespace qspoof
