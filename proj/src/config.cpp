#include "orfactor/config.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace orfactor {

namespace {

/// Reads fields of one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void opt(const std::string& key, T& out) {
    if (!has(key)) return;
    out = get<T>(key);
  }

  template <typename T>
  T get(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(at(key) + ": required field missing");
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(at(key) + ": wrong type (got " + std::string(j_.at(key).type_name()) + ")");
    }
  }

  const json& sub(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(at(k) + ": unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void rethrow_with_path(const std::string& path, F&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

std::vector<int> random_selection(int cells, int count, std::uint64_t seed) {
  if (count < 1 || count > cells) throw std::invalid_argument("selection count must lie in 1..cells");
  std::vector<int> pool(static_cast<std::size_t>(cells));
  std::iota(pool.begin(), pool.end(), 0);
  SplitMix64 rng(seed);
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(cells - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

// ---------------------------------------------------------------------------

json toy_spec_to_json(const ToyGeneratorSpec& s) {
  json fields = json::array();
  for (const auto& a : s.block_fields) fields.push_back(a.members());
  const auto& l = s.layout;
  return json{{"kind", to_string(s.kind)},
              {"code_dim", s.code_dim},
              {"feature_dim", s.feature_dim},
              {"seed", s.seed},
              {"grid", {l.grid_rows(), l.grid_cols()}},
              {"image", {l.image_h(), l.image_w(), l.channels()}},
              {"selected", l.selected()},
              {"block_fields", fields},
              {"encode_bias_scale", s.encode_bias_scale},
              {"decoder_scale", s.decoder_scale},
              {"pixel_bias_scale", s.pixel_bias_scale},
              {"hidden_widths", s.hidden_widths},
              {"hidden_gain", s.hidden_gain},
              {"output_gain", s.output_gain},
              {"hidden_bias_scale", s.hidden_bias_scale},
              {"leakage", s.leakage}};
}

ToyGeneratorSpec toy_spec_from_json(const json& j, std::uint64_t selection_seed, const std::string& path) {
  Fields in(j, path);
  ToyKind kind = ToyKind::BlockLinear;
  if (in.has("kind")) rethrow_with_path(in.at("kind"), [&] { kind = toy_kind_from_string(in.get<std::string>("kind")); });
  ToyGeneratorSpec s = kind == ToyKind::Mlp ? default_mlp_spec() : default_block_linear_spec();

  in.opt("code_dim", s.code_dim);
  in.opt("feature_dim", s.feature_dim);
  in.opt("seed", s.seed);
  in.opt("encode_bias_scale", s.encode_bias_scale);
  in.opt("decoder_scale", s.decoder_scale);
  in.opt("pixel_bias_scale", s.pixel_bias_scale);
  in.opt("hidden_widths", s.hidden_widths);
  in.opt("hidden_gain", s.hidden_gain);
  in.opt("output_gain", s.output_gain);
  in.opt("hidden_bias_scale", s.hidden_bias_scale);
  in.opt("leakage", s.leakage);

  auto grid = std::vector<int>{s.layout.grid_rows(), s.layout.grid_cols()};
  auto image = std::vector<int>{s.layout.image_h(), s.layout.image_w(), s.layout.channels()};
  auto selected = s.layout.selected();
  const bool layout_changed = in.has("grid") || in.has("image") || in.has("selected") || in.has("num_selected");
  in.opt("grid", grid);
  in.opt("image", image);
  if (grid.size() != 2) throw ConfigError(in.at("grid") + ": expected [rows, cols]");
  if (image.size() != 3) throw ConfigError(in.at("image") + ": expected [H, W, C]");
  if (in.has("selected")) {
    selected = in.get<std::vector<int>>("selected");
    if (in.has("num_selected")) throw ConfigError(in.at("num_selected") + ": conflicts with selected");
  } else if (in.has("num_selected")) {
    const int count = in.get<int>("num_selected");
    rethrow_with_path(in.at("num_selected"), [&] { selected = random_selection(grid[0] * grid[1], count, selection_seed); });
  }
  if (layout_changed) {
    rethrow_with_path(path + ".layout", [&] {
      s.layout = PatchLayout(grid[0], grid[1], image[0], image[1], image[2], selected);
    });
  }

  const int n = s.layout.num_patches();
  if (in.has("block_fields")) {
    s.block_fields.clear();
    const json& bf = in.sub("block_fields");
    if (!bf.is_array()) throw ConfigError(in.at("block_fields") + ": expected an array of patch lists");
    for (std::size_t b = 0; b < bf.size(); ++b) {
      const std::string p = in.at("block_fields") + "[" + std::to_string(b) + "]";
      std::uint32_t mask = 0;
      try {
        for (int i : bf[b].get<std::vector<int>>()) {
          if (i < 0 || i >= n) throw ConfigError(p + ": patch index " + std::to_string(i) + " out of range");
          mask |= 1u << i;
        }
      } catch (const json::exception&) {
        throw ConfigError(p + ": expected a list of patch indices");
      }
      s.block_fields.emplace_back(mask, n);
    }
  } else if (layout_changed) {
    s.block_fields = default_block_fields(n);
  }
  in.finish();
  rethrow_with_path(path, [&] { s.validate(); });
  return s;
}

json solver_to_json(const SolverConfig& c, bool include_workers) {
  json j{{"learning_rate", c.learning_rate},
         {"penalty", c.penalty},
         {"max_iterations", c.max_iterations},
         {"epsilon_coefficient", c.epsilon_coefficient},
         {"alpha_init", c.alpha_init},
         {"early_stopping", c.early_stopping},
         {"early_stop_window", c.early_stop_window},
         {"early_stop_tolerance", c.early_stop_tolerance}};
  if (include_workers) j["parallel_workers"] = c.parallel_workers;
  return j;
}

SolverConfig solver_from_json(const json& j, const SolverConfig& base, const std::string& path) {
  Fields in(j, path);
  SolverConfig c = base;
  if (in.has("preset")) {
    const auto p = in.get<std::string>("preset");
    if (p == "nvae") c = SolverConfig::nvae();
    else if (p == "sid") c = SolverConfig::sid();
    else if (p == "stylegan") c = SolverConfig::stylegan();
    else if (p == "biggan") c = SolverConfig::biggan();
    else if (p == "toy_block_linear") c = SolverConfig::for_toy(ToyKind::BlockLinear);
    else if (p == "toy_mlp") c = SolverConfig::for_toy(ToyKind::Mlp);
    else throw ConfigError(in.at("preset") + ": unknown preset '" + p + "'");
    c.parallel_workers = base.parallel_workers;
  }
  in.opt("learning_rate", c.learning_rate);
  in.opt("penalty", c.penalty);
  in.opt("max_iterations", c.max_iterations);
  in.opt("epsilon_coefficient", c.epsilon_coefficient);
  in.opt("alpha_init", c.alpha_init);
  in.opt("parallel_workers", c.parallel_workers);
  in.opt("early_stopping", c.early_stopping);
  in.opt("early_stop_window", c.early_stop_window);
  in.opt("early_stop_tolerance", c.early_stop_tolerance);
  in.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------

namespace {

json metrics_to_json(const MetricSettings& m) {
  return json{{"mc_samples", m.mc_samples},
              {"sampling", to_string(m.sampling)},
              {"top_k", m.top_k},
              {"l_a", m.l_a},
              {"l_b", m.l_b},
              {"ratios", m.ratios},
              {"schedule", m.schedule},
              {"consistency_contexts", m.consistency_contexts},
              {"pattern_components", m.pattern_components},
              {"sparsity_floor", m.sparsity_floor},
              {"dense_control", m.dense_control},
              {"transferability", m.transferability}};
}

MetricSettings metrics_from_json(const json& j, const std::string& path) {
  Fields in(j, path);
  MetricSettings m;
  in.opt("mc_samples", m.mc_samples);
  if (in.has("sampling"))
    rethrow_with_path(in.at("sampling"), [&] { m.sampling = context_sampling_from_string(in.get<std::string>("sampling")); });
  in.opt("top_k", m.top_k);
  in.opt("l_a", m.l_a);
  in.opt("l_b", m.l_b);
  in.opt("ratios", m.ratios);
  in.opt("schedule", m.schedule);
  in.opt("consistency_contexts", m.consistency_contexts);
  in.opt("pattern_components", m.pattern_components);
  in.opt("sparsity_floor", m.sparsity_floor);
  in.opt("dense_control", m.dense_control);
  in.opt("transferability", m.transferability);
  in.finish();
  return m;
}

void check_unit_list(const std::vector<double>& v, const std::string& path) {
  if (v.empty()) throw ConfigError(path + ": must not be empty");
  for (double p : v)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(path + ": values must lie in [0,1]");
  if (!std::is_sorted(v.begin(), v.end())) throw ConfigError(path + ": must be ascending");
}

}  // namespace

void RunConfig::validate() const {
  if (baseline_samples < 1) throw ConfigError("baseline_samples: must be >= 1");
  try {
    solver.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (backend.kind == BackendKind::Builtin) rethrow_with_path("generator", [&] { backend.spec.validate(); });
  if (backend.kind == BackendKind::External && backend.command.empty())
    throw ConfigError("backend.command: must not be empty");
  if (backend.kind == BackendKind::Socket && backend.socket_path.empty())
    throw ConfigError("backend.path: must not be empty");
  const auto& m = metrics;
  if (m.mc_samples < 1) throw ConfigError("metrics.mc_samples: must be >= 1");
  if (m.top_k < 1) throw ConfigError("metrics.top_k: must be >= 1");
  if (m.l_a < 1) throw ConfigError("metrics.l_a: must be >= 1");
  if (m.l_b < 1) throw ConfigError("metrics.l_b: must be >= 1");
  if (m.consistency_contexts < 1) throw ConfigError("metrics.consistency_contexts: must be >= 1");
  if (m.pattern_components < 1) throw ConfigError("metrics.pattern_components: must be >= 1");
  if (!(m.sparsity_floor > 0.0)) throw ConfigError("metrics.sparsity_floor: must be > 0");
  check_unit_list(m.ratios, "metrics.ratios");
  check_unit_list(m.schedule, "metrics.schedule");
}

json RunConfig::to_json(bool for_hash) const {
  json b{{"kind", to_string(backend.kind)}};
  if (backend.kind == BackendKind::External) b["command"] = backend.command;
  if (backend.kind == BackendKind::Socket) b["path"] = backend.socket_path;
  if (backend.kind != BackendKind::Builtin) {
    b["handshake_timeout_ms"] = backend.handshake_timeout.count();
    b["request_timeout_ms"] = backend.request_timeout.count();
  }
  json j{{"format_version", 1},
         {"backend", b},
         {"solver", solver_to_json(solver, !for_hash)},
         {"baseline_samples", baseline_samples},
         {"seed", seed},
         {"metrics", metrics_to_json(metrics)}};
  if (backend.kind == BackendKind::Builtin) j["generator"] = toy_spec_to_json(backend.spec);
  if (!for_hash) j["output"] = output_dir;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  Fields in(j, "config");
  RunConfig c;
  if (in.has("format_version") && in.get<int>("format_version") != 1)
    throw ConfigError("config.format_version: unsupported version");
  in.opt("seed", c.seed);
  in.opt("baseline_samples", c.baseline_samples);
  in.opt("output", c.output_dir);

  if (in.has("backend")) {
    Fields b(in.sub("backend"), "backend");
    if (b.has("kind")) rethrow_with_path(b.at("kind"), [&] { c.backend.kind = backend_kind_from_string(b.get<std::string>("kind")); });
    b.opt("command", c.backend.command);
    b.opt("path", c.backend.socket_path);
    if (b.has("handshake_timeout_ms"))
      c.backend.handshake_timeout = std::chrono::milliseconds(b.get<std::int64_t>("handshake_timeout_ms"));
    if (b.has("request_timeout_ms"))
      c.backend.request_timeout = std::chrono::milliseconds(b.get<std::int64_t>("request_timeout_ms"));
    b.finish();
  }

  SolverConfig base;
  if (in.has("generator")) {
    if (c.backend.kind != BackendKind::Builtin) throw ConfigError("generator: only valid with a builtin backend");
    c.backend.spec = toy_spec_from_json(in.sub("generator"), derive_seed(c.seed, "selection"));
  } else {
    c.backend.spec = default_block_linear_spec();
  }
  if (c.backend.kind == BackendKind::Builtin) base = SolverConfig::for_toy(c.backend.spec.kind);
  c.solver = in.has("solver") ? solver_from_json(in.sub("solver"), base) : base;
  if (in.has("metrics")) c.metrics = metrics_from_json(in.sub("metrics"), "metrics");
  in.finish();
  c.validate();
  return c;
}

std::uint64_t RunConfig::hash() const { return fnv1a64(to_json(true).dump()); }

RunConfig default_run_config(ToyKind kind) {
  RunConfig c;
  c.backend.kind = BackendKind::Builtin;
  c.backend.spec = kind == ToyKind::Mlp ? default_mlp_spec() : default_block_linear_spec();
  c.solver = SolverConfig::for_toy(kind);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return RunConfig::from_json(j);
}

}  // namespace orfactor
