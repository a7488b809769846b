#include <doctest.h>

#include "orfactor/solver.hpp"
#include "tiny_generator.hpp"

using namespace orfactor;
using orfactor::testing::TinyGenerator;

namespace {

struct Problem {
  FeatureVector f0, f;
  ImageBuffer x;
};

Problem tiny_problem(const Generator& gen) {
  Problem p;
  p.f0 = FeatureVector::Zero(2);
  p.f = (FeatureVector(2) << 1.0, 2.0).finished();
  p.x = gen.forward(p.f);
  return p;
}

}  // namespace

TEST_CASE("published per-model presets") {
  CHECK(SolverConfig::biggan().learning_rate == 1e-4);
  CHECK(SolverConfig::biggan().penalty == 1e3);
  CHECK(SolverConfig::biggan().max_iterations == 500);
  CHECK(SolverConfig::stylegan().learning_rate == 1e-3);
  CHECK(SolverConfig::stylegan().penalty == 1e4);
  CHECK(SolverConfig::stylegan().max_iterations == 500);
  CHECK(SolverConfig::nvae().learning_rate == 1e-3);
  CHECK(SolverConfig::nvae().penalty == 1e4);
  CHECK(SolverConfig::nvae().max_iterations == 200);
  CHECK(SolverConfig::sid().max_iterations == 200);
  CHECK(SolverConfig::for_toy(ToyKind::Mlp).learning_rate < SolverConfig::for_toy(ToyKind::BlockLinear).learning_rate);
}

TEST_CASE("error budget scales with pixels and channels") {
  const auto spec = default_block_linear_spec();
  CHECK(epsilon_budget(spec.layout, PatchSet::of({0, 3}, 6), 1e-4) == doctest::Approx(1e-4 * 2 * 64 * 3));
  CHECK(epsilon_budget(spec.layout, PatchSet::empty(6), 1e-4) == 0.0);
}

TEST_CASE("config validation") {
  SolverConfig c;
  c.learning_rate = 0;
  CHECK_THROWS(c.validate());
  c = SolverConfig{};
  c.alpha_init = 1.5;
  CHECK_THROWS(c.validate());
  c = SolverConfig{};
  c.parallel_workers = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("empty demand returns the baseline") {
  const TinyGenerator gen;
  const auto p = tiny_problem(gen);
  const auto r = minimal_feature(gen, p.f, p.f0, p.x, PatchSet::empty(2), SolverConfig{});
  CHECK(r.f_hat == p.f0);
  CHECK(r.constraint_met);
}

TEST_CASE("first projected steps match the hand computation") {
  const TinyGenerator gen;
  const auto p = tiny_problem(gen);
  SolverConfig c;
  c.learning_rate = 1e-5;
  c.penalty = 1e4;
  c.max_iterations = 1;
  // Step 1 from alpha = 0: only the image term, 2 * lambda * (0 - 1) * 1.
  auto r = minimal_feature(gen, p.f, p.f0, p.x, PatchSet::single(0, 2), c);
  CHECK(r.alpha[0] == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(r.alpha[1] == 0.0);
  // Step 2 adds the L1 subgradient |delta_0| = 1.
  c.max_iterations = 2;
  r = minimal_feature(gen, p.f, p.f0, p.x, PatchSet::single(0, 2), c);
  CHECK(r.alpha[0] == doctest::Approx(0.2 + 1e-5 * (2e4 * 0.8 - 1.0)).epsilon(1e-14));
  CHECK(r.iterations_used == 2);
}

TEST_CASE("converges to the penalized stationary point") {
  const TinyGenerator gen;
  const auto p = tiny_problem(gen);
  SolverConfig c;
  c.learning_rate = 1e-5;
  c.penalty = 1e4;
  c.max_iterations = 2000;
  // alpha* = 1 - |S| / (2 lambda |delta|) on each demanded coordinate.
  auto r = minimal_feature(gen, p.f, p.f0, p.x, PatchSet::single(1, 2), c);
  CHECK(r.alpha[0] == 0.0);
  CHECK(r.alpha[1] == doctest::Approx(1.0 - 1.0 / (2e4 * 2.0)).epsilon(1e-10));
  CHECK(r.constraint_met);
  r = minimal_feature(gen, p.f, p.f0, p.x, PatchSet::full(2), c);
  CHECK(r.alpha[0] == doctest::Approx(1.0 - 2.0 / (2e4 * 1.0)).epsilon(1e-10));
  CHECK(r.alpha[1] == doctest::Approx(1.0 - 2.0 / (2e4 * 2.0)).epsilon(1e-10));
}

TEST_CASE("too few iterations leave the constraint unmet") {
  const TinyGenerator gen;
  const auto p = tiny_problem(gen);
  SolverConfig c;
  c.learning_rate = 1e-7;
  c.max_iterations = 3;
  const auto r = minimal_feature(gen, p.f, p.f0, p.x, PatchSet::full(2), c);
  CHECK_FALSE(r.constraint_met);
  CHECK(r.reconstruction_error > epsilon_budget(gen.layout(), PatchSet::full(2), c.epsilon_coefficient));
}

TEST_CASE("non-finite generator output is an error") {
  const TinyGenerator gen(true);
  const auto p = tiny_problem(TinyGenerator{});
  CHECK_THROWS_AS(minimal_feature(gen, p.f, p.f0, p.x, PatchSet::full(2), SolverConfig{}), SolverError);
  CHECK_THROWS_AS(build_table(gen, p.f, p.f0, p.x, SolverConfig{}), SolverError);
}

TEST_CASE("block_linear solve matches the analytic minimal feature") {
  const ToyGenerator gen(default_block_linear_spec());
  const FeatureVector f0 = gen.estimate_baseline(256, 1);
  const FeatureVector f = gen.encode(SplitMix64(2).normal_vector(16));
  const ImageBuffer x = gen.forward(f);
  const SolverConfig c = SolverConfig::for_toy(ToyKind::BlockLinear);
  for (const PatchSet s : {PatchSet::single(1, 6), PatchSet::of({3, 4}, 6)}) {
    const auto r = minimal_feature(gen, f, f0, x, s, c);
    const FeatureVector exact = analytic_minimal_feature_linear(gen, f, f0, s);
    CHECK((r.f_hat - exact).lpNorm<1>() / 64.0 < 1e-3);
    CHECK(r.constraint_met);
    for (const auto& block : gen.blocks()) {
      const double mean_alpha = r.alpha.segment(block.begin, block.size).mean();
      if (block.action_field.intersects(s))
        CHECK(mean_alpha > 0.99);
      else
        CHECK(mean_alpha == 0.0);
    }
  }
}

TEST_CASE("analytic minimal feature copies exactly the triggered blocks") {
  const ToyGenerator gen(default_block_linear_spec());
  const FeatureVector f0 = FeatureVector::Zero(64), f = FeatureVector::Ones(64);
  const auto out = analytic_minimal_feature_linear(gen, f, f0, PatchSet::single(5, 6));
  for (const auto& block : gen.blocks()) {
    const double expect = block.action_field.contains(5) ? 1.0 : 0.0;
    CHECK((out.segment(block.begin, block.size).array() == expect).all());
  }
  CHECK_THROWS(analytic_minimal_feature_linear(ToyGenerator(default_mlp_spec()), f, f0, PatchSet::single(0, 6)));
}

TEST_CASE("table values do not depend on the worker count") {
  const ToyGenerator gen(default_mlp_spec());
  const FeatureVector f0 = gen.estimate_baseline(64, 1);
  const FeatureVector f = gen.encode(SplitMix64(3).normal_vector(16));
  const ImageBuffer x = gen.forward(f);
  SolverConfig c = SolverConfig::for_toy(ToyKind::Mlp);
  c.max_iterations = 60;
  const std::vector<const Generator*> one{&gen}, three{&gen, &gen, &gen};
  TableBuildReport r1, r3;
  const auto a = build_table(std::span<const Generator* const>(one), f, f0, x, c, &r1);
  const auto b = build_table(std::span<const Generator* const>(three), f, f0, x, c, &r3);
  for (std::uint32_t m = 0; m < 64; ++m) {
    const PatchSet s(m, 6);
    CHECK(a.f_hat(s) == b.f_hat(s));
    CHECK(a.at(s).reconstruction_error == b.at(s).reconstruction_error);
  }
  CHECK(r1.unconverged == r3.unconverged);
  CHECK(a.complete());
}
