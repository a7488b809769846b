#include <doctest.h>

#include <cmath>

#include "orfactor/metrics.hpp"
#include "orfactor/verify.hpp"

using namespace orfactor;

namespace {

struct Linear {
  ToyGenerator gen{default_block_linear_spec()};
  FeatureVector f0, f;
  ImageBuffer x;
  MinimalFeatureTable table;
  ComponentSet cs;

  explicit Linear(std::uint64_t code_seed = 2) {
    f0 = gen.estimate_baseline(256, 1);
    f = gen.encode(SplitMix64(code_seed).normal_vector(gen.code_dim()));
    x = gen.forward(f);
    table = analytic_table(gen, f, f0);
    cs = extract_components(table);
  }
};

const std::vector<double> kRatios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

}  // namespace

TEST_CASE("report rejects non-finite values and formats arrays") {
  MetricReport r;
  r.metadata["seed"] = "3";
  r.set("a", 0.5);
  r.set("b", std::vector<double>{1.0, 2.0});
  r.set_text("kind", "toy");
  CHECK_THROWS_AS(r.set("bad", std::nan("")), NonFiniteError);
  CHECK(r.scalar("a") == 0.5);
  CHECK_THROWS(r.scalar("b"));
  CHECK(r.to_text() == "seed = 3\nkind = toy\na = 0.5\nb = [1, 2]\n");
}

TEST_CASE("series rows are checked") {
  Series s{"s", {"x", "y"}, {}};
  s.add_row({1.0, 0.25});
  CHECK_THROWS_AS(s.add_row({1.0}), ShapeError);
  CHECK_THROWS_AS(s.add_row({1.0, INFINITY}), NonFiniteError);
  CHECK(s.to_csv() == "x,y\n1,0.25\n");
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, -2.5e-300, 1.0 / 3.0, 123456789.0, -0.0}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("context sampling names") {
  CHECK(context_sampling_from_string("uniform_size") == ContextSampling::UniformSize);
  CHECK(to_string(ContextSampling::UniformSubset) == "uniform_subset");
  CHECK_THROWS(context_sampling_from_string("all"));
}

TEST_CASE("block_linear patterns are spatially bounded and consistent") {
  const Linear L;
  for (const auto& k : ground_truth_fields(L.gen)) {
    for (auto mode : {ContextSampling::UniformSize, ContextSampling::UniformSubset}) {
      const auto rp = regional_pattern(L.gen, L.cs, k, 16, 5, mode);
      CHECK(std::abs(gamma_spatial(rp, L.gen.layout()) - 1.0) < 1e-9);
      // The pattern is W delta_f_k whatever the context.
      const Eigen::VectorXd expect = L.gen.decoder_matrix() * L.cs.at(k).delta_f;
      CHECK((rp.delta_image.pixels() - expect).cwiseAbs().maxCoeff() < 1e-12);
      const auto contexts = default_consistency_contexts(k, 8, 3);
      for (double a : consistency_alpha(L.gen, L.cs, k, contexts, rp)) CHECK(a < 1e-9);
    }
  }
}

TEST_CASE("regional pattern is reproducible and respects explicit contexts") {
  const Linear L;
  const PatchSet k = PatchSet::of({3, 4}, 6);
  const auto a = regional_pattern(L.gen, L.cs, k, 8, 11);
  const auto b = regional_pattern(L.gen, L.cs, k, 8, 11);
  CHECK(a.delta_image.pixels() == b.delta_image.pixels());
  CHECK(a.mc_samples == 8);
  const auto over = regional_pattern_over(L.gen, L.cs, k, {{}, {PatchSet::single(0, 6)}});
  CHECK(over.mc_samples == 2);
  CHECK_THROWS(regional_pattern_over(L.gen, L.cs, k, {{k}}));
  CHECK_THROWS(regional_pattern(L.gen, L.cs, k, 0, 1));
}

TEST_CASE("zero patterns are degenerate") {
  const Linear L;
  RegionalPattern rp{PatchSet::single(0, 6), ImageBuffer(L.gen.layout()), 1};
  CHECK_THROWS_AS(gamma_spatial(rp, L.gen.layout()), DegenerateComponentError);
  CHECK_THROWS_AS(consistency_alpha(L.gen, L.cs, rp.key, {PatchSet::single(1, 6)}, rp), DegenerateComponentError);
}

TEST_CASE("consistency contexts avoid the action field") {
  const PatchSet k = PatchSet::of({1, 2, 5}, 6);
  for (const auto& s : default_consistency_contexts(k, 20, 4)) {
    CHECK_FALSE(s.intersects(k));
    CHECK(s.size() >= 1);
    CHECK(s.size() <= 3);
  }
  const auto none = default_consistency_contexts(PatchSet::full(3), 2, 1);
  CHECK(none[0].is_empty());
  const Linear L;
  CHECK_THROWS(consistency_alpha(L.gen, L.cs, PatchSet::single(0, 6), {PatchSet::single(0, 6)},
                                 regional_pattern(L.gen, L.cs, PatchSet::single(0, 6), 2, 1)));
}

TEST_CASE("count for ratio") {
  CHECK(count_for_ratio(0.0, 5) == 0);
  CHECK(count_for_ratio(0.3, 10) == 3);
  CHECK(count_for_ratio(0.25, 4) == 1);
  CHECK(count_for_ratio(0.26, 4) == 2);
  CHECK(count_for_ratio(1.0, 7) == 7);
  CHECK(count_for_ratio(0.7, 10) == 7);
  CHECK_THROWS(count_for_ratio(1.1, 3));
}

TEST_CASE("boundary breach is zero for block_linear") {
  const Linear L;
  for (int i = 0; i < 6; ++i) {
    const auto cands = breach_candidates(L.cs, i);
    for (const auto& k : cands) CHECK_FALSE(k.contains(i));
    const auto curve = boundary_breach_curve(L.gen, L.cs, i, kRatios, &L.x);
    REQUIRE(curve.size() == kRatios.size());
    for (const auto& p : curve) CHECK(p.rmse_target <= 1e-9);
    CHECK(curve.front().added == 0);
    CHECK(curve.back().added == static_cast<int>(cands.size()));
  }
  CHECK_THROWS(boundary_breach_curve(L.gen, L.cs, 0, {0.5, 0.1}));
  CHECK_THROWS(boundary_breach_curve(L.gen, L.cs, 6, kRatios));
}

TEST_CASE("controlled and sequential reconstruction reach the target") {
  const Linear L;
  const PatchSet target = PatchSet::of({0, 1, 2}, 6);
  const auto pts = controlled_reconstruction(L.gen, L.cs, target, L.x, kRatios);
  REQUIRE(pts.size() == kRatios.size());
  CHECK(pts.back().added == static_cast<int>(triggered(L.cs, target).size()));
  CHECK(pts.back().rmse_target < 1e-12);
  CHECK(pts.front().rmse_target > pts.back().rmse_target);

  const auto steps = sequential_reconstruction(L.gen, L.cs, {5, 4, 3, 2, 1, 0}, L.x);
  REQUIRE(steps.size() == 6);
  CHECK(steps.front().patch == 5);
  CHECK(steps.back().added == 63);
  CHECK(steps.back().rmse_so_far < 1e-12);
  CHECK(steps.back().rmse_rest == 0.0);
}

TEST_CASE("matching error with the block count is exact on block_linear") {
  const Linear L;
  for (std::uint32_t m = 0; m < 64; ++m) {
    const auto me = matching_error_delta(L.cs, L.table, PatchSet(m, 6), 6);
    CHECK(me.delta <= 1e-3);
    CHECK(me.fhat_l2 == doctest::Approx(L.table.f_hat(PatchSet(m, 6)).norm()));
  }
}

TEST_CASE("sparsity curve") {
  const Linear L;
  const auto c = sparsity_curve(L.cs, 1e-12);
  CHECK(c.values.size() == 63 * 64);
  CHECK(std::is_sorted(c.values.rbegin(), c.values.rend()));
  const auto nonzero = std::count_if(c.values.begin(), c.values.end(), [](double v) { return v > 1e-9; });
  CHECK(nonzero <= 64);
  CHECK(c.log10.back() >= -12.0);
  CHECK_THROWS(sparsity_curve(L.cs, 0.0));
}

TEST_CASE("transferability") {
  const Linear a(2), b(3);
  const auto same = transferability(a.cs, a.cs, 6, 12);
  CHECK(same.t == 1.0);
  const auto pair = transferability(a.cs, b.cs, 6, 6);
  CHECK(pair.t == 1.0);
  CHECK(pair.transferable.size() == 6);
  // A set whose only component is elsewhere transfers nothing.
  ComponentSet lone(6, a.cs.baseline());
  for (const auto& k : a.cs.keys()) lone.set(ComponentRecord::make(k, FeatureVector::Zero(64)));
  lone.set(ComponentRecord::make(PatchSet::full(6), FeatureVector::Ones(64)));
  const auto none = transferability(lone, a.cs, 1, 6);
  CHECK(none.t == 0.0);
  CHECK(none.non_transferable.size() == 1);
  CHECK_THROWS(transferability(a.cs, a.cs, 0, 1));
}

TEST_CASE("generation from components") {
  const Linear L;
  CHECK((generate_from_components(L.gen, L.cs, {}).pixels() - L.gen.forward(L.f0).pixels()).norm() == 0.0);
  const auto all = generate_from_components(L.gen, L.cs, L.cs.keys());
  CHECK((all.pixels() - L.x.pixels()).cwiseAbs().maxCoeff() < 1e-12);
}
