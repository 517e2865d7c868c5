#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace wmar {

// One line of the gradient check suite: an operator family checked against
// central finite differences over `trials` random shapes and inputs.
struct GradSuiteEntry {
  std::string name;
  int trials = 0;
  double worst_rel = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  int total_trials = 0;
  double seconds = 0.0;
  bool ok = true;
};

// Runs every operator family plus the full world-model loss at double
// precision. Operator checks must stay under 1e-4 relative error, the
// composite world-model loss under 1e-3.
GradSuiteResult run_grad_suite(uint64_t seed);

std::string grad_suite_report(const GradSuiteResult& r);

}  // namespace wmar
