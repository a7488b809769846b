#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

#include "orfactor/generator.hpp"
#include "orfactor/toygen.hpp"

namespace orfactor {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SolverConfig {
  double learning_rate = 5e-5;
  double penalty = 1e4;  // lambda
  int max_iterations = 6000;
  double epsilon_coefficient = 1e-4;
  double alpha_init = 0.0;
  int parallel_workers = 1;

  // Stop once the error budget holds and the L1 term moved less than
  // early_stop_tolerance (relative) over early_stop_window iterations.
  bool early_stopping = false;
  int early_stop_window = 10;
  double early_stop_tolerance = 1e-5;

  void validate() const;

  /// Desk defaults per toy kind: the coupled mlp needs a smaller step than
  /// the block-separable linear decoder to stay stable.
  static SolverConfig for_toy(ToyKind kind);

  /// Published per-model settings (learning rate, lambda, iterations).
  static SolverConfig nvae();
  static SolverConfig sid();
  static SolverConfig stylegan();
  static SolverConfig biggan();
};

struct SolveResult {
  FeatureVector f_hat;
  Eigen::VectorXd alpha;
  double reconstruction_error = 0.0;  // squared L2 over the region
  bool constraint_met = false;
  int iterations_used = 0;
};

/// Squared-error budget: coefficient * (pixels in S) * channels.
double epsilon_budget(const PatchLayout& layout, const PatchSet& s, double coefficient);

/*
 * Minimal feature for patch set S by projected gradient descent on
 * alpha in [0,1]^D, with f_hat = f0 + alpha .* (f - f0) and loss
 *
 *   L(alpha) = ||alpha .* (f - f0)||_1 + (lambda/|S|) ||region(S|g(f_hat)) - region(S|x)||^2.
 *
 * The image term's gradient comes from the generator's vjp; |.| has
 * subgradient 0 at 0. constraint_met reports whether the squared region error
 * is below epsilon_budget at exit.
 */
SolveResult minimal_feature(const Generator& gen, const FeatureVector& f, const FeatureVector& f0,
                            const ImageBuffer& x, const PatchSet& s, const SolverConfig& cfg);

/// Closed-form minimal feature for block_linear generators: f0 with every block
/// whose action field meets S copied from f.
FeatureVector analytic_minimal_feature_linear(const ToyGenerator& gen, const FeatureVector& f,
                                              const FeatureVector& f0, const PatchSet& s);

struct TableBuildReport {
  bool complete = false;
  std::vector<PatchSet> unconverged;
};

/// Solves every S in 2^N. `workers` holds one generator per worker thread
/// (they may alias when the generator is concurrent_safe). Values do not
/// depend on the number of workers.
MinimalFeatureTable build_table(std::span<const Generator* const> workers, const FeatureVector& f,
                                const FeatureVector& f0, const ImageBuffer& x,
                                const SolverConfig& cfg, TableBuildReport* report = nullptr);

/// Convenience overload: uses cfg.parallel_workers threads when the generator
/// is concurrent_safe, one thread otherwise.
MinimalFeatureTable build_table(const Generator& gen, const FeatureVector& f,
                                const FeatureVector& f0, const ImageBuffer& x,
                                const SolverConfig& cfg, TableBuildReport* report = nullptr);

}  // namespace orfactor
