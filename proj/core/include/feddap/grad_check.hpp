#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace feddap {

/// Result of comparing analytic gradients against central differences for
/// one loss term across every parameter of every instance.
struct TermReport {
  std::string term;  // "ce", "dpa", "cpcl", "total"
  double max_rel_err = 0.0;
  std::size_t comparisons = 0;
};

struct GradCheckReport {
  std::vector<TermReport> terms;
  double max_rel_err = 0.0;
  std::size_t instances = 0;
  double step = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Runs `instances` randomized configurations (random model, prototype
/// table with absent cells, batch, and loss-option toggles) and compares
/// backward() against central finite differences of loss_total for every
/// parameter. Per-term analytic gradients are recovered from backward's
/// linearity in the loss weights.
GradCheckReport check_gradients(std::size_t instances, double step,
                                double tolerance, std::uint64_t seed);

std::string format_report(const GradCheckReport& report);

}  // namespace feddap
