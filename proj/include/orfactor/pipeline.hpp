#pragma once

#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "orfactor/config.hpp"
#include "orfactor/serialize.hpp"

namespace orfactor {

/// A pipeline stage failed; what() names the stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Generators for one run: workers[0] is the primary; more are opened for
/// parallel table builds when the backend is not concurrent-safe.
class GeneratorPool {
 public:
  GeneratorPool(const RunConfig& cfg, int workers);

  const Generator& primary() const { return *owned_.front(); }
  /// One pointer per worker thread (aliases allowed).
  const std::vector<const Generator*>& workers() const { return workers_; }

 private:
  std::vector<std::unique_ptr<Generator>> owned_;
  std::vector<const Generator*> workers_;
};

struct Target {
  Eigen::VectorXd z;
  FeatureVector f;
  ImageBuffer x;
};

/// f0 from the configured sample budget and the "baseline" stage seed.
FeatureVector run_baseline(const Generator& gen, const RunConfig& cfg);
/// Code drawn from derive_seed(seed, stage), then f = d(z), x = g(f).
Target make_target(const Generator& gen, const RunConfig& cfg, const std::string& stage);

/// Randomized dense table: f_hat_S = f0 + u_S .* (f - f0) with u_S uniform
/// per coordinate, u_empty = 0.
MinimalFeatureTable dense_control_table(const FeatureVector& f0, const FeatureVector& f, int n,
                                        std::uint64_t seed);

struct ExperimentInputs {
  const Generator* gen = nullptr;
  const RunConfig* cfg = nullptr;
  const MinimalFeatureTable* table = nullptr;
  const ComponentSet* components = nullptr;
  const Target* target = nullptr;
  const ComponentSet* transfer_components = nullptr;  // optional second code
};

/// Every metric as scalars plus per-metric series.
MetricReport compute_metrics(const ExperimentInputs& in);

struct RunOptions {
  int workers = 0;  // 0 keeps solver.parallel_workers
  std::ostream* log = nullptr;
};

struct ExperimentResult {
  MetricReport report;
  MinimalFeatureTable table;
  ComponentSet components;
  std::vector<PatchSet> unconverged;
  std::uint64_t config_hash = 0;
  bool table_complete() const { return unconverged.empty(); }
};

/// baseline -> target -> table -> components -> metrics, persisting
/// table.bin, components.bin, report.txt and metrics/*.csv under cfg.output_dir.
ExperimentResult run_experiment(const RunConfig& cfg, const RunOptions& opts = {});

/// Writes the report and series files under `dir`.
void write_report(const MetricReport& report, const std::string& dir);

// ---------------------------------------------------------------------------
// Images

struct DisplayWindow {
  double lo = 0.0, hi = 1.0;
};

/// [min, max] of the base image (widened to width 1 when flat).
DisplayWindow display_window(const ImageBuffer& base);
/// Binary P6; C = 1 is replicated to gray, C = 3 copied, otherwise channel 0.
std::string encode_ppm(const ImageBuffer& img, const DisplayWindow& w);

/// Base image, target, reconstructions and top regional patterns under dir/images.
void export_images(const Generator& gen, const RunConfig& cfg, const ComponentSet& cs,
                   const Target& target, const std::string& dir);

}  // namespace orfactor
