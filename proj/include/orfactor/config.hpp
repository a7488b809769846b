#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "orfactor/backend.hpp"
#include "orfactor/metrics.hpp"
#include "orfactor/solver.hpp"

namespace orfactor {

/// Validation failure; the message starts with the offending field path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MetricSettings {
  int mc_samples = 32;
  ContextSampling sampling = ContextSampling::UniformSize;
  int top_k = 12;
  int l_a = 6;
  int l_b = 12;
  std::vector<double> ratios = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> schedule = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int consistency_contexts = 8;
  int pattern_components = 12;  // regional patterns / gamma / alpha for this many top components
  double sparsity_floor = 1e-12;
  bool dense_control = true;
  bool transferability = true;
};

struct RunConfig {
  BackendDescriptor backend;
  SolverConfig solver;
  int baseline_samples = 1024;
  std::uint64_t seed = 0;
  MetricSettings metrics;
  std::string output_dir = "out";

  void validate() const;

  /// Full document. With `for_hash`, runtime-only fields (output directory,
  /// worker count) are left out.
  json to_json(bool for_hash = false) const;
  static RunConfig from_json(const json& j);

  /// FNV-1a over the canonical hash document.
  std::uint64_t hash() const;
};

std::string hash_hex(std::uint64_t h);

RunConfig default_run_config(ToyKind kind = ToyKind::BlockLinear);
RunConfig load_run_config(const std::string& path);

json toy_spec_to_json(const ToyGeneratorSpec& spec);
/// Starts from the default spec of the given kind. A missing "selected" list
/// is drawn from `selection_seed` when "num_selected" is present.
ToyGeneratorSpec toy_spec_from_json(const json& j, std::uint64_t selection_seed,
                                     const std::string& path = "generator");

json solver_to_json(const SolverConfig& c, bool include_workers = true);
SolverConfig solver_from_json(const json& j, const SolverConfig& base, const std::string& path = "solver");

/// `count` distinct grid cells from `cells`, ascending.
std::vector<int> random_selection(int cells, int count, std::uint64_t seed);

}  // namespace orfactor
