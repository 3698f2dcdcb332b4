#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace freekd {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Transform correctness: perfect reconstruction (<= 1e-8) and energy
// conservation (<= 1e-9 relative) over 100 random inputs spanning extents
// 8..64 and levels 1..3.
std::vector<CheckResult> reconstruction_checks(uint64_t seed);

// Central finite differences against tape gradients for every
// differentiable op, >= 20 randomized trials each, relative error <= 1e-4.
std::vector<CheckResult> gradient_checks(uint64_t seed);

// Loss bounds and identities, plus the stage-2 mask detachment.
std::vector<CheckResult> loss_invariant_checks(uint64_t seed);

std::vector<CheckResult> run_all_checks(uint64_t seed);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace freekd
