#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rfg {

struct SelfcheckOptions {
  std::uint64_t seed = 0;
  /// Fault injection for testing the harness: perturbs one analytic gradient before comparison.
  bool corrupt_gradient = false;
};

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Runs every property suite (risk, mining, synthesis, masks, alignment, losses) in a fixed order.
std::vector<CheckOutcome> run_selfcheck(const SelfcheckOptions& options);

}  // namespace rfg
