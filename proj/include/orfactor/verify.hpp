#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "orfactor/config.hpp"
#include "orfactor/toygen.hpp"

namespace orfactor {

/// Exact table for a block_linear generator: every entry from
/// analytic_minimal_feature_linear with zero error.
MinimalFeatureTable analytic_table(const ToyGenerator& gen, const FeatureVector& f,
                                   const FeatureVector& f0);

/// Distinct block action fields, ascending mask.
std::vector<PatchSet> ground_truth_fields(const ToyGenerator& gen);

/// OR interaction evaluated one coordinate at a time by scanning every mask
/// in ascending order and keeping the subsets of A.
FeatureVector brute_force_or_interaction(const MinimalFeatureTable& table, const PatchSet& a);

/// Synthetic table with standard normal entries.
MinimalFeatureTable random_table(int n, Eigen::Index dim, std::uint64_t seed);

/// Max over probes of ||vjp - fd|| / max(||fd||, 1e-300) with central
/// differences of the given step; f = f0 + N(0, I) and upstream ~ N(0, I).
double gradient_check(const Generator& gen, int probes, std::uint64_t seed, double step = 1e-5);

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

/// "PASS|FAIL name value (threshold) detail".
std::string format_check(const CheckResult& c);

/*
 * Invariant suite: universal matching and completeness on the configured
 * generator's exact (block_linear) or solver table, axiom games, the
 * brute-force OR oracle and gradient checks. block_linear configs add the
 * solver-vs-analytic oracle, structure recovery and exact consistency.
 */
std::vector<CheckResult> run_verify(const RunConfig& cfg, std::ostream* log = nullptr);

}  // namespace orfactor
