#include "orfactor/verify.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>

#include "orfactor/pipeline.hpp"

namespace orfactor {

MinimalFeatureTable analytic_table(const ToyGenerator& gen, const FeatureVector& f,
                                   const FeatureVector& f0) {
  const int n = gen.layout().num_patches();
  MinimalFeatureTable table(n, f.size());
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    const PatchSet s(m, n);
    table.set(s, TableEntry{analytic_minimal_feature_linear(gen, f, f0, s), 0.0, true, 0});
  }
  return table;
}

std::vector<PatchSet> ground_truth_fields(const ToyGenerator& gen) {
  std::vector<PatchSet> out;
  for (const auto& b : gen.blocks())
    if (std::find(out.begin(), out.end(), b.action_field) == out.end()) out.push_back(b.action_field);
  std::sort(out.begin(), out.end(), [](const PatchSet& a, const PatchSet& b) { return a.mask() < b.mask(); });
  return out;
}

FeatureVector brute_force_or_interaction(const MinimalFeatureTable& table, const PatchSet& a) {
  const int n = table.universe();
  const std::uint32_t full = (1u << n) - 1u;
  FeatureVector out(table.dim());
  for (Eigen::Index d = 0; d < out.size(); ++d) {
    double acc = 0.0;
    bool first = true;
    for (std::uint32_t m = 0; m <= full; ++m) {
      if ((m & ~a.mask()) != 0) continue;
      const int popcount = std::popcount(m);
      const double sign = ((a.size() - popcount) % 2 == 0) ? 1.0 : -1.0;
      const double term = sign * table.f_hat(PatchSet(full & ~m, n))[d];
      if (first) {
        acc = term;
        first = false;
      } else {
        acc += term;
      }
    }
    out[d] = -acc;
  }
  return out;
}

MinimalFeatureTable random_table(int n, Eigen::Index dim, std::uint64_t seed) {
  SplitMix64 rng(seed);
  MinimalFeatureTable table(n, dim);
  for (std::uint32_t m = 0; m < (1u << n); ++m)
    table.set(PatchSet(m, n), TableEntry{rng.normal_vector(dim), 0.0, true, 0});
  return table;
}

double gradient_check(const Generator& gen, int probes, std::uint64_t seed, double step) {
  SplitMix64 rng(seed);
  const FeatureVector f0 = gen.encode(Eigen::VectorXd::Zero(gen.code_dim()));
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    const FeatureVector f = f0 + rng.normal_vector(gen.feature_dim());
    const Eigen::VectorXd u = rng.normal_vector(gen.layout().num_values());
    const FeatureVector exact = gen.vjp(f, u);
    const FeatureVector fd = finite_difference_vjp(gen, f, u, step);
    worst = std::max(worst, (exact - fd).norm() / std::max(fd.norm(), 1e-300));
  }
  return worst;
}

std::string format_check(const CheckResult& c) {
  std::string s = std::string(c.passed ? "PASS " : "FAIL ") + c.name + " " + format_double(c.value) + " (" +
                  format_double(c.threshold) + ")";
  if (!c.detail.empty()) s += " " + c.detail;
  return s;
}

namespace {

CheckResult at_most(std::string name, double value, double threshold, std::string detail = {}) {
  return CheckResult{std::move(name), std::isfinite(value) && value <= threshold, value, threshold, std::move(detail)};
}

double universal_matching(const ComponentSet& cs, const MinimalFeatureTable& table) {
  double worst = 0.0;
  for (std::uint32_t m = 0; m < (1u << cs.universe()); ++m) {
    const PatchSet s(m, cs.universe());
    worst = std::max(worst, (logical_model(cs, s) - table.f_hat(s)).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

double completeness(const ComponentSet& cs, const MinimalFeatureTable& table) {
  FeatureVector total = cs.baseline();
  for (const auto& k : cs.keys()) total += cs.at(k).delta_f;
  return (total - table.f_hat(PatchSet::full(cs.universe()))).lpNorm<Eigen::Infinity>();
}

std::string masks_text(const std::vector<PatchSet>& v) {
  std::string s = "{";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i].to_string();
  return s + "}";
}

}  // namespace

std::vector<CheckResult> run_verify(const RunConfig& cfg, std::ostream* log) {
  std::vector<CheckResult> out;
  auto add = [&](CheckResult c) {
    if (log) *log << format_check(c) << "\n" << std::flush;
    out.push_back(std::move(c));
  };

  GeneratorPool pool(cfg, std::max(1, cfg.solver.parallel_workers));
  const Generator& gen = pool.primary();
  const auto* toy = dynamic_cast<const ToyGenerator*>(&gen);
  const bool linear = toy && toy->kind() == ToyKind::BlockLinear;

  const FeatureVector f0 = run_baseline(gen, cfg);
  const Target target = make_target(gen, cfg, "target");
  TableBuildReport tr;
  const MinimalFeatureTable solved =
      build_table(std::span<const Generator* const>(pool.workers()), target.f, f0, target.x, cfg.solver, &tr);
  const ComponentSet solved_cs = extract_components(solved);

  add(at_most("solver_table.universal_matching", universal_matching(solved_cs, solved), 1e-9));
  add(at_most("solver_table.completeness", completeness(solved_cs, solved), 1e-9));
  add(at_most("solver_table.unconverged", static_cast<double>(tr.unconverged.size()), 0.0,
              tr.unconverged.empty() ? "" : masks_text(tr.unconverged)));

  if (linear) {
    const MinimalFeatureTable exact = analytic_table(*toy, target.f, f0);
    const ComponentSet cs = extract_components(exact);
    add(at_most("analytic_table.universal_matching", universal_matching(cs, exact), 1e-9));
    add(at_most("analytic_table.completeness", completeness(cs, exact), 1e-9));

    double oracle = 0.0;
    for (std::uint32_t m = 0; m < (1u << cs.universe()); ++m) {
      const PatchSet s(m, cs.universe());
      oracle = std::max(oracle, (solved.f_hat(s) - exact.f_hat(s)).lpNorm<1>() / static_cast<double>(f0.size()));
    }
    add(at_most("solver_vs_analytic.l1_per_dim", oracle, 1e-3));

    std::vector<PatchSet> found;
    for (const auto& k : cs.keys())
      if (cs.at(k).l2_norm > 1e-6) found.push_back(k);
    const auto truth = ground_truth_fields(*toy);
    add(CheckResult{"structure.fields", found == truth, static_cast<double>(found.size()),
                    static_cast<double>(truth.size()), "found " + masks_text(found) + " truth " + masks_text(truth)});

    double gamma_err = 0.0, alpha = 0.0, breach = 0.0;
    const std::uint64_t pattern_seed = derive_seed(cfg.seed, "regional_pattern");
    const std::uint64_t context_seed = derive_seed(cfg.seed, "consistency");
    for (const auto& k : truth) {
      const auto rp = regional_pattern(gen, cs, k, cfg.metrics.mc_samples, derive_seed(pattern_seed, k.mask()),
                                       cfg.metrics.sampling);
      gamma_err = std::max(gamma_err, std::abs(gamma_spatial(rp, gen.layout()) - 1.0));
      const auto contexts =
          default_consistency_contexts(k, cfg.metrics.consistency_contexts, derive_seed(context_seed, k.mask()));
      for (double a : consistency_alpha(gen, cs, k, contexts, rp)) alpha = std::max(alpha, a);
    }
    for (int i = 0; i < cs.universe(); ++i)
      for (const auto& bp : boundary_breach_curve(gen, cs, i, cfg.metrics.ratios))
        breach = std::max(breach, bp.rmse_target);
    add(at_most("structure.gamma_deviation", gamma_err, 1e-9));
    add(at_most("structure.breach_rmse_target", breach, 1e-9));
    add(at_most("consistency.alpha_linear", alpha, 1e-9));

    const Eigen::VectorXd u = SplitMix64(derive_seed(cfg.seed, std::uint64_t{1})).normal_vector(gen.layout().num_values());
    const FeatureVector closed = toy->decoder_matrix().transpose() * u;
    add(at_most("gradient.vjp_vs_decoder_transpose", (gen.vjp(f0, u) - closed).norm() / closed.norm(), 1e-12));
  }

  {
    SplitMix64 rng(derive_seed(cfg.seed, std::uint64_t{2}));
    double worst = 0.0;
    std::string worst_name;
    for (int g = 0; g < 50; ++g) {
      const int n = 2 + g % 4;
      const ScalarGame u = ScalarGame::random(n, rng);
      const ScalarGame v = ScalarGame::random(n, rng);
      for (const auto& c : check_harsanyi_axioms(u, v, rng)) {
        if (c.max_error >= worst) {
          worst = c.max_error;
          worst_name = c.name;
        }
      }
    }
    add(at_most("axioms.max_error", worst, 1e-12, "worst " + worst_name));
  }

  {
    double mismatches = 0.0;
    for (int n = 1; n <= 4; ++n) {
      const auto table = random_table(n, 8, derive_seed(cfg.seed, static_cast<std::uint64_t>(10 + n)));
      for (std::uint32_t m = 1; m < (1u << n); ++m) {
        const PatchSet a(m, n);
        const FeatureVector lhs = or_interaction(table, a);
        const FeatureVector rhs = brute_force_or_interaction(table, a);
        for (Eigen::Index d = 0; d < lhs.size(); ++d)
          if (lhs[d] != rhs[d]) ++mismatches;
      }
    }
    add(at_most("or_interaction.brute_force_mismatches", mismatches, 0.0));
  }

  if (gen.vjp_exact())
    add(at_most("gradient.vjp_vs_finite_difference", gradient_check(gen, 20, derive_seed(cfg.seed, std::uint64_t{3})),
                1e-5));
  return out;
}

}  // namespace orfactor
