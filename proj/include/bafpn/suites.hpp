#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bafpn {

struct SuiteRow {
  std::string name;
  double value = 0.0;  // measured max error
  double tol = 0.0;
  bool pass = false;
  int attempts = 1;
};

struct SuiteResult {
  std::vector<SuiteRow> rows;
  bool pass = true;
  double seconds = 0.0;
};

// Finite-difference checks for every differentiable op and block, float64.
// Inputs are sampled away from kinks (relu margin, max-tie margin, fractional
// offset margin) and a failing row is retried with fresh samples before it
// counts as a failure. `tol_override` > 0 replaces every row's tolerance.
SuiteResult run_gradcheck_suite(std::uint64_t seed, double eps = 1e-5, double tol_override = 0.0);

// Fast kernels against the serial brute-force references.
SuiteResult run_oracle_suite(int trials = 50, std::uint64_t seed = 0);

std::string format_suite(const SuiteResult& result);

}  // namespace bafpn
