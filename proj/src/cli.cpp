#include "orfactor/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "orfactor/pipeline.hpp"
#include "orfactor/verify.hpp"

namespace orfactor {

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIncomplete = 3;

struct CommonFlags {
  std::string config;
  std::string out;
  bool strict = false;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const CommonFlags& flags) {
  RunConfig cfg = flags.config.empty() ? default_run_config() : load_run_config(flags.config);
  if (!flags.out.empty()) cfg.output_dir = flags.out;
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.workers) {
    cfg.solver.parallel_workers = *flags.workers;
  } else if (const char* env = std::getenv("ORFACTOR_WORKERS"); env && *env) {
    try {
      std::size_t used = 0;
      const int w = std::stoi(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      cfg.solver.parallel_workers = w;
    } catch (const std::exception&) {
      throw ConfigError(std::string("ORFACTOR_WORKERS: not an integer: ") + env);
    }
  }
  cfg.validate();
  return cfg;
}

std::string artifact(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

int incomplete_status(const std::vector<PatchSet>& unconverged, bool strict) {
  if (unconverged.empty()) return 0;
  std::cerr << "warning: " << unconverged.size() << " table entries missed the error budget:";
  for (const auto& s : unconverged) std::cerr << " " << s.to_string();
  std::cerr << "\n";
  return strict ? kExitIncomplete : 0;
}

int cmd_baseline(const RunConfig& cfg) {
  auto gen = connect(cfg.backend);
  const FeatureVector f0 = run_baseline(*gen, cfg);
  fs::create_directories(cfg.output_dir);
  std::ostringstream csv;
  csv << "index,value\n";
  for (Eigen::Index i = 0; i < f0.size(); ++i) csv << i << "," << format_double(f0[i]) << "\n";
  write_file(artifact(cfg, "baseline.csv"), csv.str());
  std::cout << "baseline: D=" << f0.size() << " samples=" << cfg.baseline_samples
            << " l2=" << format_double(f0.norm()) << "\n";
  return 0;
}

int cmd_table(const RunConfig& cfg, bool strict) {
  GeneratorPool pool(cfg, cfg.solver.parallel_workers);
  const FeatureVector f0 = run_baseline(pool.primary(), cfg);
  const Target target = make_target(pool.primary(), cfg, "target");
  TableBuildReport tr;
  const auto table =
      build_table(std::span<const Generator* const>(pool.workers()), target.f, f0, target.x, cfg.solver, &tr);
  fs::create_directories(cfg.output_dir);
  write_file(artifact(cfg, "table.bin"), encode_table(table, cfg.hash()));
  std::cout << "table: " << (std::size_t{1} << table.universe()) << " entries, " << tr.unconverged.size()
            << " unconverged, hash " << hash_hex(cfg.hash()) << "\n";
  return incomplete_status(tr.unconverged, strict);
}

int cmd_components(const RunConfig& cfg, bool strict) {
  const auto loaded = decode_table(read_file(artifact(cfg, "table.bin")), cfg.hash());
  const auto cs = extract_components(loaded.table);
  write_file(artifact(cfg, "components.bin"), encode_components(cs, cfg.hash()));
  std::cout << "components: " << cs.size() << " action fields, " << cs.degenerate().size() << " zero\n";
  return incomplete_status(loaded.table.unconverged(), strict);
}

int cmd_metrics(const RunConfig& cfg, bool strict) {
  const auto table = decode_table(read_file(artifact(cfg, "table.bin")), cfg.hash()).table;
  const auto cs = decode_components(read_file(artifact(cfg, "components.bin")), cfg.hash()).components;
  GeneratorPool pool(cfg, cfg.solver.parallel_workers);
  const Target target = make_target(pool.primary(), cfg, "target");
  std::optional<ComponentSet> transfer;
  if (cfg.metrics.transferability) {
    const Target t2 = make_target(pool.primary(), cfg, "transfer");
    transfer = extract_components(
        build_table(std::span<const Generator* const>(pool.workers()), t2.f, cs.baseline(), t2.x, cfg.solver));
  }
  ExperimentInputs in{&pool.primary(), &cfg, &table, &cs, &target, transfer ? &*transfer : nullptr};
  const auto report = compute_metrics(in);
  write_report(report, cfg.output_dir);
  std::cout << report.to_text();
  return incomplete_status(table.unconverged(), strict);
}

int cmd_report(const RunConfig& cfg, bool strict) {
  RunOptions opts;
  opts.log = &std::cerr;
  const auto res = run_experiment(cfg, opts);
  std::cout << res.report.to_text();
  return incomplete_status(res.unconverged, strict);
}

int cmd_export_images(const RunConfig& cfg) {
  const auto cs = decode_components(read_file(artifact(cfg, "components.bin")), cfg.hash()).components;
  auto gen = connect(cfg.backend);
  const Target target = make_target(*gen, cfg, "target");
  export_images(*gen, cfg, cs, target, cfg.output_dir);
  std::cout << "images written to " << (fs::path(cfg.output_dir) / "images").string() << "\n";
  return 0;
}

int cmd_verify(const RunConfig& cfg) {
  const auto checks = run_verify(cfg, &std::cout);
  std::size_t failed = 0;
  for (const auto& c : checks) failed += c.passed ? 0 : 1;
  std::cout << (failed == 0 ? "verify: all " + std::to_string(checks.size()) + " checks passed\n"
                            : "verify: " + std::to_string(failed) + " of " + std::to_string(checks.size()) +
                                  " checks failed\n");
  return failed == 0 ? 0 : kExitFailure;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Disentangles a generator's intermediate feature into OR-interaction components."};
  app.name("orfactor");
  app.require_subcommand(1);
  app.fallthrough();

  CommonFlags flags;
  app.add_option("--config", flags.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", flags.out, "Output directory (overrides the config)");
  app.add_flag("--strict", flags.strict, "Exit 3 when any table entry missed its error budget");
  app.add_option("--workers", flags.workers, "Solver threads (fallback: ORFACTOR_WORKERS)")->check(CLI::PositiveNumber);
  app.add_option("--seed", flags.seed, "Master seed (overrides the config)");

  auto* baseline = app.add_subcommand("baseline", "Estimate the baseline feature f0");
  auto* table = app.add_subcommand("table", "Build the minimal-feature table (table.bin)");
  auto* components = app.add_subcommand("components", "Extract components from table.bin (components.bin)");
  auto* verify = app.add_subcommand("verify", "Run the invariant suite");
  auto* metrics = app.add_subcommand("metrics", "Compute metrics from saved artifacts");
  auto* report = app.add_subcommand("report", "Run the full pipeline");
  auto* images = app.add_subcommand("export-images", "Write PPM images from components.bin");
  auto* echo = app.add_subcommand("serve-echo", "Serve the echo backend on stdin/stdout or a socket");

  EchoOptions echo_opts = EchoOptions::defaults();
  std::string echo_mode = "zeros";
  std::string echo_socket;
  bool no_vjp = false;
  echo->add_option("--mode", echo_mode, "zeros or mirror")->check(CLI::IsMember({"zeros", "mirror"}));
  echo->add_option("--delay-ms", echo_opts.delay_ms, "Sleep before every response")->check(CLI::NonNegativeNumber);
  echo->add_flag("--emit-nan", echo_opts.emit_nan, "Answer forward with NaN");
  echo->add_flag("--garble", echo_opts.garble, "Answer non-handshake requests with invalid JSON");
  echo->add_option("--fail-op", echo_opts.fail_op, "Answer this op with an error");
  echo->add_flag("--no-vjp", no_vjp, "Advertise no vjp support");
  echo->add_option("--protocol", echo_opts.protocol, "Advertised protocol version");
  echo->add_option("--socket", echo_socket, "Listen on this AF_UNIX path instead of stdin/stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (echo->parsed()) {
      echo_opts.mode = echo_mode == "mirror" ? EchoOptions::Mode::Mirror : EchoOptions::Mode::Zeros;
      echo_opts.info.vjp_supported = !no_vjp;
      return echo_socket.empty() ? serve_echo(0, 1, echo_opts) : serve_echo_socket(echo_socket, echo_opts);
    }
    const RunConfig cfg = resolve_config(flags);
    if (baseline->parsed()) return cmd_baseline(cfg);
    if (table->parsed()) return cmd_table(cfg, flags.strict);
    if (components->parsed()) return cmd_components(cfg, flags.strict);
    if (verify->parsed()) return cmd_verify(cfg);
    if (metrics->parsed()) return cmd_metrics(cfg, flags.strict);
    if (report->parsed()) return cmd_report(cfg, flags.strict);
    if (images->parsed()) return cmd_export_images(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  std::cerr << app.help();
  return kExitUsage;
}

}  // namespace orfactor
