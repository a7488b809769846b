#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "orfactor/config.hpp"

using namespace orfactor;

namespace {

std::string error_of(const json& j) {
  try {
    RunConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TEST_CASE("defaults") {
  const RunConfig c = RunConfig::from_json(json::object());
  CHECK(c.backend.kind == BackendKind::Builtin);
  CHECK(c.backend.spec.kind == ToyKind::BlockLinear);
  CHECK(c.baseline_samples == 1024);
  CHECK(c.seed == 0);
  CHECK(c.metrics.top_k == 12);
  CHECK(c.solver.learning_rate == SolverConfig::for_toy(ToyKind::BlockLinear).learning_rate);
  const RunConfig m = RunConfig::from_json(json{{"generator", {{"kind", "mlp"}}}});
  CHECK(m.solver.learning_rate == SolverConfig::for_toy(ToyKind::Mlp).learning_rate);
  CHECK(m.backend.spec.layout.image_h() == 16);
}

TEST_CASE("json round trip preserves the hash") {
  RunConfig c = default_run_config(ToyKind::Mlp);
  c.seed = 12345678901234ull;
  c.metrics.ratios = {0.0, 0.5, 1.0};
  c.solver.max_iterations = 10;
  const RunConfig back = RunConfig::from_json(json::parse(c.to_json().dump()));
  CHECK(back.hash() == c.hash());
  CHECK(back.to_json() == c.to_json());
  CHECK(hash_hex(0x1f) == "000000000000001f");
}

TEST_CASE("hash ignores output directory and workers but not values") {
  RunConfig a = default_run_config();
  RunConfig b = a;
  b.output_dir = "elsewhere";
  b.solver.parallel_workers = 4;
  CHECK(a.hash() == b.hash());
  b.seed = 1;
  CHECK(a.hash() != b.hash());
  RunConfig c = a;
  c.solver.penalty = 1e3;
  CHECK(a.hash() != c.hash());
}

TEST_CASE("errors carry field paths") {
  CHECK(starts_with(error_of(json{{"solver", {{"learning_rat", 1e-3}}}}), "solver.learning_rat"));
  CHECK(starts_with(error_of(json{{"metrics", {{"ratios", {0.5, 0.1}}}}}), "metrics.ratios"));
  CHECK(starts_with(error_of(json{{"metrics", {{"sampling", "all"}}}}), "metrics.sampling"));
  CHECK(starts_with(error_of(json{{"generator", {{"block_fields", {{0}, {9}}}}}}), "generator.block_fields[1]"));
  CHECK(starts_with(error_of(json{{"generator", {{"kind", "gan"}}}}), "generator.kind"));
  CHECK(starts_with(error_of(json{{"backend", {{"kind", "external"}}}}), "backend.command"));
  CHECK(starts_with(error_of(json{{"backend", {{"kind", "external"}, {"command", {"x"}}}}, {"generator", json::object()}}),
                    "generator"));
  CHECK(starts_with(error_of(json{{"solver", {{"preset", "dalle"}}}}), "solver.preset"));
  CHECK(starts_with(error_of(json{{"surprise", 1}}), "config.surprise"));
  CHECK(starts_with(error_of(json{{"baseline_samples", 0}}), "baseline_samples"));
  CHECK_FALSE(error_of(json{{"seed", "zero"}}).empty());
}

TEST_CASE("solver presets") {
  const RunConfig c = RunConfig::from_json(json{{"solver", {{"preset", "biggan"}, {"max_iterations", 7}}}});
  CHECK(c.solver.learning_rate == 1e-4);
  CHECK(c.solver.penalty == 1e3);
  CHECK(c.solver.max_iterations == 7);
}

TEST_CASE("random patch selection") {
  const RunConfig c = RunConfig::from_json(json{{"seed", 5}, {"generator", {{"num_selected", 9}}}});
  const auto& sel = c.backend.spec.layout.selected();
  CHECK(sel.size() == 9);
  CHECK(std::is_sorted(sel.begin(), sel.end()));
  CHECK(sel == random_selection(16, 9, derive_seed(5, "selection")));
  CHECK(c.backend.spec.block_fields == default_block_fields(9));
  CHECK(starts_with(error_of(json{{"generator", {{"num_selected", 17}}}}), "generator.num_selected"));
  CHECK(starts_with(error_of(json{{"generator", {{"num_selected", 3}, {"selected", {0, 1, 2}}}}}),
                    "generator.num_selected"));
}

TEST_CASE("external backend configuration") {
  const RunConfig c = RunConfig::from_json(
      json{{"backend", {{"kind", "external"}, {"command", {"python3", "-m", "x"}}, {"request_timeout_ms", 500}}}});
  CHECK(c.backend.kind == BackendKind::External);
  CHECK(c.backend.command.size() == 3);
  CHECK(c.backend.request_timeout.count() == 500);
  CHECK(c.to_json().at("backend").at("command") == json({"python3", "-m", "x"}));
}

TEST_CASE("loading files") {
  const auto dir = std::filesystem::temp_directory_path() / "orfactor_config_test";
  std::filesystem::create_directories(dir);
  const auto good = (dir / "good.json").string();
  const auto bad = (dir / "bad.json").string();
  std::ofstream(good) << R"({"seed": 3, "output": "o"})";
  std::ofstream(bad) << "{ seed: ";
  CHECK(load_run_config(good).seed == 3);
  CHECK(load_run_config(good).output_dir == "o");
  CHECK_THROWS_AS(load_run_config(bad), ConfigError);
  CHECK_THROWS_AS(load_run_config((dir / "none.json").string()), ConfigError);
  std::filesystem::remove_all(dir);
}
