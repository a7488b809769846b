#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "orfactor/generator.hpp"
#include "orfactor/interactions.hpp"

namespace orfactor {

/// Thrown when a metric would divide by a zero-norm pattern.
class DegenerateComponentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Report

struct Series {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> row);
  std::string to_csv() const;
};

/// Named scalar/array results plus provenance. Every stored value is finite.
class MetricReport {
 public:
  std::map<std::string, std::string> metadata;

  void set(const std::string& key, double value);
  void set(const std::string& key, std::vector<double> values);
  void set_text(const std::string& key, std::string value);
  void add_series(Series s);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::vector<double>& values(const std::string& key) const { return values_.at(key); }
  double scalar(const std::string& key) const;
  const std::vector<Series>& series() const { return series_; }

  /// key = value lines: metadata, then text, then values; arrays as [a, b, ...].
  std::string to_text() const;

 private:
  std::map<std::string, std::vector<double>> values_;
  std::map<std::string, std::string> text_;
  std::vector<Series> series_;
};

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Image-level helpers

/// G(Omega) = g(f0 + sum of the listed components).
ImageBuffer generate_from_components(const Generator& gen, const ComponentSet& cs,
                                     const std::vector<PatchSet>& omega);

struct RegionalPattern {
  PatchSet key;
  ImageBuffer delta_image;
  int mc_samples = 0;
};

enum class ContextSampling {
  UniformSize,    // size uniform in 0..|M|-1, then a uniform subset of that size
  UniformSubset,  // every other component included with probability 1/2
};

std::string to_string(ContextSampling m);
ContextSampling context_sampling_from_string(const std::string& s);

/// Mean of G(Omega + k) - G(Omega) over mc_samples random Omega drawn from the
/// other components; sample j uses the stream derive_seed(seed, j).
RegionalPattern regional_pattern(const Generator& gen, const ComponentSet& cs, const PatchSet& k,
                                 int mc_samples, std::uint64_t seed,
                                 ContextSampling mode = ContextSampling::UniformSize);

/// Same mean over explicit component-key contexts (none may contain k).
RegionalPattern regional_pattern_over(const Generator& gen, const ComponentSet& cs,
                                      const PatchSet& k,
                                      const std::vector<std::vector<PatchSet>>& contexts);

/// ||region(A_k | dx)||_2 / ||dx||_2.
double gamma_spatial(const RegionalPattern& rp, const PatchLayout& layout);

// ---------------------------------------------------------------------------
// Boundary breach and controlled reconstruction

struct BreachPoint {
  double p = 0.0;
  int added = 0;
  double rmse_target = 0.0;       // patch i vs x0
  double rmse_rest = 0.0;         // N \ {i} vs x0
  double rmse_rest_vs_x = 0.0;    // N \ {i} vs x (0 when no x given)
};

/// Components whose action field excludes patch i, in ranked order.
std::vector<PatchSet> breach_candidates(const ComponentSet& cs, int patch);

/// For each p, adds the ceil(p m) largest-norm components not covering patch i.
/// `ratios` must be ascending in [0,1]. `x` is optional.
std::vector<BreachPoint> boundary_breach_curve(const Generator& gen, const ComponentSet& cs,
                                               int patch, const std::vector<double>& ratios,
                                               const ImageBuffer* x = nullptr);

/// ceil(p * m) with a 1e-9 guard against representation noise.
int count_for_ratio(double p, std::size_t m);

struct ReconstructionPoint {
  double fraction = 0.0;
  int added = 0;
  double rmse_target = 0.0;  // S_target vs x
  double rmse_rest = 0.0;    // complement vs x (0 when the complement is empty)
};

/// Adds the components triggered by S_target in descending-norm order.
std::vector<ReconstructionPoint> controlled_reconstruction(const Generator& gen,
                                                           const ComponentSet& cs,
                                                           const PatchSet& s_target,
                                                           const ImageBuffer& x,
                                                           const std::vector<double>& schedule);

struct SequentialStep {
  int patch = 0;
  int added = 0;
  double rmse_so_far = 0.0;  // all patches added so far vs x
  double rmse_rest = 0.0;    // patches not yet added vs x
};

/// Patches added one at a time in `order`; after step j the active set is
/// {order[0..j]} and the image is G(triggered(active)).
std::vector<SequentialStep> sequential_reconstruction(const Generator& gen, const ComponentSet& cs,
                                                      const std::vector<int>& order,
                                                      const ImageBuffer& x);

// ---------------------------------------------------------------------------
// Consistency, matching, sparsity, transferability

/// Components triggered by a patch context S.
std::vector<PatchSet> context_components(const ComponentSet& cs, const PatchSet& s);

/// alpha = ||dx_{k,S} - dx_mean|| / ||dx_mean|| for each patch context S.
std::vector<double> consistency_alpha(const Generator& gen, const ComponentSet& cs,
                                      const PatchSet& k, const std::vector<PatchSet>& contexts,
                                      const RegionalPattern& mean);

/// `count` random patch subsets of size 1..floor(n/2) disjoint from A_k
/// (capped at the complement size; the empty set if the complement is empty).
std::vector<PatchSet> default_consistency_contexts(const PatchSet& a_k, int count, std::uint64_t seed);

struct MatchingError {
  double delta = 0.0;    // ||h_top(S) - f_hat_S||_1 / D
  double fhat_l2 = 0.0;  // ||f_hat_S||_2
};

MatchingError matching_error_delta(const ComponentSet& cs, const MinimalFeatureTable& table,
                                   const PatchSet& s, int top_k);

struct SparsityCurve {
  std::vector<double> values;  // descending magnitudes
  std::vector<double> log10;   // log10(max(v, floor))
  double floor = 0.0;
};

SparsityCurve sparsity_curve(const ComponentSet& cs, double floor = 1e-12);

struct Transferability {
  double t = 0.0;
  std::vector<PatchSet> transferable;
  std::vector<PatchSet> non_transferable;
};

/// Top-l_a fields of cs_a found among the top-l_b fields of cs_b (degenerate
/// components excluded from both rankings; l is capped at what remains).
Transferability transferability(const ComponentSet& cs_a, const ComponentSet& cs_b, int l_a,
                                int l_b, double zero_tol = 0.0);

}  // namespace orfactor
