#include "orfactor/pipeline.hpp"

#include "orfactor/backend.hpp"
#include "orfactor/metrics.hpp"
#include "orfactor/solver.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace orfactor {

namespace fs = std::filesystem;

namespace {

template <typename F>
auto stage(const std::string& name, std::ostream* log, F&& fn) -> decltype(fn()) {
  if (log) *log << "[" << name << "]\n";
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

double mask_value(const PatchSet& s) { return static_cast<double>(s.mask()); }

}  // namespace

GeneratorPool::GeneratorPool(const RunConfig& cfg, int workers) {
  if (workers < 1) throw std::invalid_argument("worker count must be >= 1");
  owned_.push_back(connect(cfg.backend));
  if (owned_.front()->concurrent_safe()) {
    workers_.assign(static_cast<std::size_t>(workers), owned_.front().get());
    return;
  }
  for (int i = 1; i < workers; ++i) owned_.push_back(connect(cfg.backend));
  for (const auto& g : owned_) workers_.push_back(g.get());
}

FeatureVector run_baseline(const Generator& gen, const RunConfig& cfg) {
  return gen.estimate_baseline(cfg.baseline_samples, derive_seed(cfg.seed, "baseline"));
}

Target make_target(const Generator& gen, const RunConfig& cfg, const std::string& stage_name) {
  SplitMix64 rng(derive_seed(cfg.seed, stage_name));
  Target t;
  t.z = rng.normal_vector(gen.code_dim());
  t.f = gen.encode(t.z);
  t.x = gen.forward(t.f);
  return t;
}

MinimalFeatureTable dense_control_table(const FeatureVector& f0, const FeatureVector& f, int n,
                                        std::uint64_t seed) {
  require_same_dim(f.size(), f0.size(), "dense_control_table");
  MinimalFeatureTable table(n, f0.size());
  const FeatureVector delta = f - f0;
  table.set(PatchSet::empty(n), TableEntry{f0, 0.0, true, 0});
  for (std::uint32_t m = 1; m < (1u << n); ++m) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(m)));
    FeatureVector u(f0.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = rng.uniform();
    table.set(PatchSet(m, n), TableEntry{f0 + u.cwiseProduct(delta), 0.0, true, 0});
  }
  return table;
}

// ---------------------------------------------------------------------------

MetricReport compute_metrics(const ExperimentInputs& in) {
  const Generator& gen = *in.gen;
  const RunConfig& cfg = *in.cfg;
  const MinimalFeatureTable& table = *in.table;
  const ComponentSet& cs = *in.components;
  const Target& target = *in.target;
  const MetricSettings& ms = cfg.metrics;
  const PatchLayout& layout = gen.layout();
  const int n = cs.universe();
  const auto dim = static_cast<double>(cs.dim());
  const PatchSet full = PatchSet::full(n);

  MetricReport r;
  r.metadata["config_hash"] = hash_hex(cfg.hash());
  r.metadata["seed"] = std::to_string(cfg.seed);
  r.metadata["format_version"] = "1";
  r.set_text("generator", cfg.backend.kind == BackendKind::Builtin ? to_string(cfg.backend.spec.kind)
                                                                    : to_string(cfg.backend.kind));
  r.set("n", n);
  r.set("feature_dim", dim);

  // Table diagnostics.
  const auto unconverged = table.unconverged();
  double max_err = 0.0;
  for (std::uint32_t m = 0; m < (1u << n); ++m)
    max_err = std::max(max_err, table.at(PatchSet(m, n)).reconstruction_error);
  r.set("table.complete", unconverged.empty() ? 1.0 : 0.0);
  r.set("table.unconverged", static_cast<double>(unconverged.size()));
  r.set("table.max_reconstruction_error", max_err);
  {
    std::vector<double> masks;
    for (const auto& s : unconverged) masks.push_back(mask_value(s));
    if (!masks.empty()) r.set("table.unconverged_masks", masks);
  }

  // Identities and matching error.
  Series matching{"matching", {"mask", "size", "delta", "fhat_l2", "delta_full"}, {}};
  double um = 0.0, delta_sum = 0.0, delta_max = 0.0, norm_sum = 0.0;
  const int top_k = std::min<int>(ms.top_k, static_cast<int>(cs.size()));
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    const PatchSet s(m, n);
    um = std::max(um, (logical_model(cs, s) - table.f_hat(s)).lpNorm<Eigen::Infinity>());
    const auto me = matching_error_delta(cs, table, s, top_k);
    const auto full_me = matching_error_delta(cs, table, s, static_cast<int>(cs.size()));
    delta_sum += me.delta;
    delta_max = std::max(delta_max, me.delta);
    norm_sum += me.fhat_l2;
    matching.add_row({mask_value(s), static_cast<double>(s.size()), me.delta, me.fhat_l2, full_me.delta});
  }
  FeatureVector total = cs.baseline();
  for (const auto& k : cs.keys()) total += cs.at(k).delta_f;
  const double ref = norm_sum / (1u << n) / dim;
  r.set("identity.universal_matching_max", um);
  r.set("identity.completeness", (total - table.f_hat(full)).lpNorm<Eigen::Infinity>());
  r.set("delta.top_k", top_k);
  r.set("delta.mean", delta_sum / (1u << n));
  r.set("delta.max", delta_max);
  r.set("delta.reference", ref);
  r.set("delta.max_ratio", ref > 0 ? delta_max / ref : 0.0);
  r.add_series(std::move(matching));

  // Component ranking.
  const auto ranked = cs.ranked(true);
  Series comps{"components", {"rank", "mask", "size", "l2_norm"}, {}};
  for (std::size_t i = 0; i < ranked.size(); ++i)
    comps.add_row({static_cast<double>(i + 1), mask_value(ranked[i]), static_cast<double>(ranked[i].size()),
                   cs.at(ranked[i]).l2_norm});
  r.add_series(std::move(comps));
  r.set("components.degenerate", static_cast<double>(cs.degenerate().size()));

  // Regional patterns, gamma and consistency for the top components.
  const std::uint64_t pattern_seed = derive_seed(cfg.seed, "regional_pattern");
  const std::uint64_t context_seed = derive_seed(cfg.seed, "consistency");
  Series gamma{"gamma", {"mask", "l2_norm", "gamma"}, {}};
  Series consistency{"consistency", {"mask", "context", "alpha"}, {}};
  std::vector<double> gammas, alphas;
  double degenerate_patterns = 0;
  const std::size_t n_patterns = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(ms.pattern_components));
  for (std::size_t i = 0; i < n_patterns; ++i) {
    const PatchSet& k = ranked[i];
    const auto rp = regional_pattern(gen, cs, k, ms.mc_samples, derive_seed(pattern_seed, k.mask()), ms.sampling);
    if (!(rp.delta_image.pixels().norm() > 0.0)) {
      ++degenerate_patterns;
      continue;
    }
    const double g = gamma_spatial(rp, layout);
    gammas.push_back(g);
    gamma.add_row({mask_value(k), cs.at(k).l2_norm, g});
    const auto contexts = default_consistency_contexts(k, ms.consistency_contexts, derive_seed(context_seed, k.mask()));
    const auto a = consistency_alpha(gen, cs, k, contexts, rp);
    for (std::size_t c = 0; c < contexts.size(); ++c) {
      consistency.add_row({mask_value(k), mask_value(contexts[c]), a[c]});
      alphas.push_back(a[c]);
    }
  }
  r.set("gamma.values", gammas);
  if (!gammas.empty()) r.set("gamma.min", *std::min_element(gammas.begin(), gammas.end()));
  r.set("gamma.degenerate_patterns", degenerate_patterns);
  if (!alphas.empty()) {
    double sum = 0.0;
    for (double a : alphas) sum += a;
    r.set("alpha.mean", sum / static_cast<double>(alphas.size()));
    r.set("alpha.max", *std::max_element(alphas.begin(), alphas.end()));
  }
  r.add_series(std::move(gamma));
  r.add_series(std::move(consistency));

  // Boundary breach for every patch.
  Series breach{"breach", {"patch", "p", "added", "rmse_target", "rmse_rest", "rmse_rest_vs_x"}, {}};
  double breach_max = 0.0;
  for (int i = 0; i < n; ++i) {
    for (const auto& bp : boundary_breach_curve(gen, cs, i, ms.ratios, &target.x)) {
      breach.add_row({static_cast<double>(i), bp.p, static_cast<double>(bp.added), bp.rmse_target, bp.rmse_rest,
                      bp.rmse_rest_vs_x});
      breach_max = std::max(breach_max, bp.rmse_target);
    }
  }
  r.set("breach.max_rmse_target", breach_max);
  r.add_series(std::move(breach));

  // Controlled and sequential reconstruction.
  const PatchSet s_target(static_cast<std::uint32_t>((1u << ((n + 1) / 2)) - 1), n);
  Series recon{"reconstruction", {"fraction", "added", "rmse_target", "rmse_rest"}, {}};
  double final_rmse = 0.0;
  for (const auto& p : controlled_reconstruction(gen, cs, s_target, target.x, ms.schedule)) {
    recon.add_row({p.fraction, static_cast<double>(p.added), p.rmse_target, p.rmse_rest});
    final_rmse = p.rmse_target;
  }
  r.set("reconstruction.target_mask", mask_value(s_target));
  r.set("reconstruction.final_rmse_target", final_rmse);
  r.set("reconstruction.bound", std::sqrt(cfg.solver.epsilon_coefficient));
  r.add_series(std::move(recon));

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Series seq{"sequential", {"step", "patch", "added", "rmse_so_far", "rmse_rest"}, {}};
  double seq_max = 0.0;
  int step = 0;
  for (const auto& st : sequential_reconstruction(gen, cs, order, target.x)) {
    seq.add_row({static_cast<double>(++step), static_cast<double>(st.patch), static_cast<double>(st.added),
                 st.rmse_so_far, st.rmse_rest});
    seq_max = std::max(seq_max, st.rmse_so_far);
  }
  r.set("sequential.max_rmse_so_far", seq_max);
  r.add_series(std::move(seq));

  // Sparsity, with the randomized dense table as control.
  auto sparsity_series = [&](const std::string& name, const SparsityCurve& c) {
    Series s{name, {"rank", "value", "log10"}, {}};
    for (std::size_t i = 0; i < c.values.size(); ++i)
      s.add_row({static_cast<double>(i + 1), c.values[i], c.log10[i]});
    return s;
  };
  auto small_fraction = [](const SparsityCurve& c) {
    if (c.values.empty() || c.values.front() == 0.0) return 1.0;
    const double cut = 1e-3 * c.values.front();
    const auto small = std::count_if(c.values.begin(), c.values.end(), [&](double v) { return v < cut; });
    return static_cast<double>(small) / static_cast<double>(c.values.size());
  };
  const auto sc = sparsity_curve(cs, ms.sparsity_floor);
  r.set("sparsity.small_fraction", small_fraction(sc));
  r.add_series(sparsity_series("sparsity", sc));
  if (ms.dense_control) {
    const auto dense = dense_control_table(cs.baseline(), target.f, n, derive_seed(cfg.seed, "dense_control"));
    const auto dense_cs = extract_components(dense);
    const auto dc = sparsity_curve(dense_cs, ms.sparsity_floor);
    r.set("sparsity.dense_control.small_fraction", small_fraction(dc));
    r.add_series(sparsity_series("sparsity_dense", dc));
  }

  // Transferability across two codes of the same generator.
  if (in.transfer_components && ranked.empty()) {
    r.set_text("transfer", "skipped: every component is zero");
  } else if (in.transfer_components) {
    const auto t = transferability(cs, *in.transfer_components, ms.l_a, ms.l_b);
    r.set("transfer.t", t.t);
    r.set("transfer.l_a", ms.l_a);
    r.set("transfer.l_b", ms.l_b);
    std::vector<double> yes, no;
    for (const auto& k : t.transferable) yes.push_back(mask_value(k));
    for (const auto& k : t.non_transferable) no.push_back(mask_value(k));
    r.set("transfer.transferable_masks", yes);
    r.set("transfer.non_transferable_masks", no);
  }
  return r;
}

void write_report(const MetricReport& report, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "metrics");
  write_file((fs::path(dir) / "report.txt").string(), report.to_text());
  for (const auto& s : report.series()) write_file((fs::path(dir) / "metrics" / (s.name + ".csv")).string(), s.to_csv());
}

ExperimentResult run_experiment(const RunConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  std::ostream* log = opts.log;
  RunConfig run = cfg;
  if (opts.workers > 0) run.solver.parallel_workers = opts.workers;
  const std::uint64_t hash = run.hash();
  fs::create_directories(run.output_dir);

  auto pool = stage("connect", log, [&] { return std::make_unique<GeneratorPool>(run, run.solver.parallel_workers); });
  const Generator& gen = pool->primary();
  const auto f0 = stage("baseline", log, [&] { return run_baseline(gen, run); });
  const auto target = stage("target", log, [&] { return make_target(gen, run, "target"); });

  ExperimentResult res;
  res.config_hash = hash;
  TableBuildReport tr;
  res.table = stage("table", log, [&] {
    auto t = build_table(std::span<const Generator* const>(pool->workers()), target.f, f0, target.x, run.solver, &tr);
    write_file((fs::path(run.output_dir) / "table.bin").string(), encode_table(t, hash));
    return t;
  });
  res.unconverged = tr.unconverged;
  res.components = stage("components", log, [&] {
    auto cs = extract_components(res.table);
    write_file((fs::path(run.output_dir) / "components.bin").string(), encode_components(cs, hash));
    return cs;
  });

  std::optional<ComponentSet> transfer;
  if (run.metrics.transferability) {
    transfer = stage("transfer", log, [&] {
      const auto t2 = make_target(gen, run, "transfer");
      const auto table2 = build_table(std::span<const Generator* const>(pool->workers()), t2.f, f0, t2.x, run.solver);
      return extract_components(table2);
    });
  }

  res.report = stage("metrics", log, [&] {
    ExperimentInputs in{&gen, &run, &res.table, &res.components, &target, transfer ? &*transfer : nullptr};
    return compute_metrics(in);
  });
  stage("report", log, [&] {
    write_report(res.report, run.output_dir);
    return 0;
  });
  return res;
}

// ---------------------------------------------------------------------------

DisplayWindow display_window(const ImageBuffer& base) {
  DisplayWindow w{base.pixels().minCoeff(), base.pixels().maxCoeff()};
  if (!(w.hi > w.lo)) w.hi = w.lo + 1.0;
  return w;
}

std::string encode_ppm(const ImageBuffer& img, const DisplayWindow& w) {
  const int h = img.height(), wd = img.width(), c = img.channels();
  std::string out = "P6\n" + std::to_string(wd) + " " + std::to_string(h) + "\n255\n";
  auto byte = [&](double v) {
    const double s = std::round(255.0 * (v - w.lo) / (w.hi - w.lo));
    return static_cast<char>(static_cast<unsigned char>(std::clamp(s, 0.0, 255.0)));
  };
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < wd; ++col)
      for (int ch = 0; ch < 3; ++ch) out.push_back(byte(img.at(r, col, c == 3 ? ch : 0)));
  return out;
}

void export_images(const Generator& gen, const RunConfig& cfg, const ComponentSet& cs,
                   const Target& target, const std::string& dir) {
  const fs::path images = fs::path(dir) / "images";
  fs::create_directories(images);
  const ImageBuffer x0 = gen.forward(cs.baseline());
  const DisplayWindow w = display_window(x0);
  auto put = [&](const std::string& name, const ImageBuffer& img) {
    write_file((images / (name + ".ppm")).string(), encode_ppm(img, w));
  };
  put("base", x0);
  put("target", target.x);
  put("reconstruction_full", generate_from_components(gen, cs, cs.keys()));

  const int n = cs.universe();
  for (int i = 0; i < n; ++i) {
    const PatchSet s = PatchSet::single(i, n);
    put("reconstruction_patch" + std::to_string(i), generate_from_components(gen, cs, triggered(cs, s)));
  }
  const auto ranked = cs.ranked(true);
  const std::size_t count = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(cfg.metrics.pattern_components));
  const std::uint64_t pattern_seed = derive_seed(cfg.seed, "regional_pattern");
  for (std::size_t i = 0; i < count; ++i) {
    const auto rp = regional_pattern(gen, cs, ranked[i], cfg.metrics.mc_samples,
                                     derive_seed(pattern_seed, ranked[i].mask()), cfg.metrics.sampling);
    put("pattern_mask" + std::to_string(ranked[i].mask()), rp.delta_image);
  }

  std::ofstream side(images / "normalization.txt");
  side << "source = base image x0\n"
       << "lo = " << format_double(w.lo) << "\n"
       << "hi = " << format_double(w.hi) << "\n"
       << "map = round(255 * (v - lo) / (hi - lo)), clamped to [0, 255]\n"
       << "applies_to = all images in this directory, including signed regional patterns\n";
}

}  // namespace orfactor
