#include "orfactor/solver.hpp"

#include <atomic>
#include <cmath>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>

namespace orfactor {

void SolverConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("solver.learning_rate must be > 0");
  if (!(penalty > 0)) throw std::invalid_argument("solver.penalty must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("solver.max_iterations must be >= 1");
  if (!(epsilon_coefficient > 0)) throw std::invalid_argument("solver.epsilon_coefficient must be > 0");
  if (alpha_init < 0 || alpha_init > 1) throw std::invalid_argument("solver.alpha_init must be in [0,1]");
  if (parallel_workers < 1) throw std::invalid_argument("solver.parallel_workers must be >= 1");
  if (early_stop_window < 1) throw std::invalid_argument("solver.early_stop_window must be >= 1");
}

SolverConfig SolverConfig::for_toy(ToyKind kind) {
  SolverConfig c;
  if (kind == ToyKind::Mlp) c.learning_rate = 2e-5;
  return c;
}

SolverConfig SolverConfig::nvae() {
  SolverConfig c;
  c.learning_rate = 1e-3;
  c.penalty = 1e4;
  c.max_iterations = 200;
  return c;
}

SolverConfig SolverConfig::sid() { return nvae(); }

SolverConfig SolverConfig::stylegan() {
  SolverConfig c = nvae();
  c.max_iterations = 500;
  return c;
}

SolverConfig SolverConfig::biggan() {
  SolverConfig c;
  c.learning_rate = 1e-4;
  c.penalty = 1e3;
  c.max_iterations = 500;
  return c;
}

double epsilon_budget(const PatchLayout& layout, const PatchSet& s, double coefficient) {
  return coefficient * static_cast<double>(s.size()) * layout.cell_pixels() * layout.channels();
}

namespace {

double masked_sq_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                       const std::vector<Eigen::Index>& idx, Eigen::VectorXd& residual) {
  residual.setZero();
  double acc = 0.0;
  for (auto i : idx) {
    const double d = a[i] - b[i];
    residual[i] = d;
    acc += d * d;
  }
  return acc;
}

}  // namespace

SolveResult minimal_feature(const Generator& gen, const FeatureVector& f, const FeatureVector& f0,
                            const ImageBuffer& x, const PatchSet& s, const SolverConfig& cfg) {
  cfg.validate();
  const Eigen::Index dim = gen.feature_dim();
  require_same_dim(f.size(), dim, "minimal_feature f");
  require_same_dim(f0.size(), dim, "minimal_feature f0");
  const PatchLayout& layout = gen.layout();
  if (!x.matches(layout)) throw ShapeError("minimal_feature: target image does not match layout");
  if (s.universe() != layout.num_patches()) throw ShapeError("minimal_feature: PatchSet universe != n");

  SolveResult out;
  if (s.is_empty()) {
    out.f_hat = f0;
    out.alpha = Eigen::VectorXd::Zero(dim);
    out.constraint_met = true;
    return out;
  }

  const Eigen::VectorXd delta = f - f0;
  const Eigen::VectorXd abs_delta = delta.cwiseAbs();
  const auto region = layout.region_indices(s);
  const double weight = cfg.penalty / s.size();
  const double eps = epsilon_budget(layout, s, cfg.epsilon_coefficient);

  Eigen::VectorXd alpha = Eigen::VectorXd::Constant(dim, cfg.alpha_init);
  Eigen::VectorXd residual = Eigen::VectorXd::Zero(layout.num_values());
  std::deque<double> l1_history;

  int t = 0;
  for (; t < cfg.max_iterations; ++t) {
    const FeatureVector f_hat = f0 + alpha.cwiseProduct(delta);
    const ImageBuffer x_hat = gen.forward(f_hat);
    const double err = masked_sq_error(x_hat.pixels(), x.pixels(), region, residual);
    const double l1 = alpha.cwiseProduct(abs_delta).sum();
    const double loss = l1 + weight * err;
    if (!std::isfinite(loss)) {
      throw SolverError("minimal_feature: non-finite loss at iteration " + std::to_string(t) +
                        " for S=" + s.to_string() + " (l1=" + std::to_string(l1) +
                        ", err=" + std::to_string(err) + ")");
    }

    if (cfg.early_stopping) {
      l1_history.push_back(l1);
      if (static_cast<int>(l1_history.size()) > cfg.early_stop_window) {
        const double before = l1_history.front();
        l1_history.pop_front();
        const double scale = std::max(std::abs(l1), 1e-300);
        if (err < eps && std::abs(l1 - before) / scale < cfg.early_stop_tolerance) break;
      }
    }

    const FeatureVector grad_f = gen.vjp(f_hat, residual);
    Eigen::VectorXd grad = (2.0 * weight) * grad_f.cwiseProduct(delta);
    for (Eigen::Index j = 0; j < dim; ++j)
      if (alpha[j] > 0.0) grad[j] += abs_delta[j];
    alpha = (alpha - cfg.learning_rate * grad).cwiseMax(0.0).cwiseMin(1.0);
  }

  out.f_hat = f0 + alpha.cwiseProduct(delta);
  out.alpha = std::move(alpha);
  out.reconstruction_error = region_sq_error(gen.forward(out.f_hat), x, s, layout);
  if (!std::isfinite(out.reconstruction_error))
    throw SolverError("minimal_feature: non-finite reconstruction error for S=" + s.to_string());
  out.constraint_met = out.reconstruction_error < eps;
  out.iterations_used = t;
  return out;
}

FeatureVector analytic_minimal_feature_linear(const ToyGenerator& gen, const FeatureVector& f,
                                              const FeatureVector& f0, const PatchSet& s) {
  if (gen.kind() != ToyKind::BlockLinear)
    throw std::invalid_argument("analytic_minimal_feature_linear: generator is not block_linear");
  require_same_dim(f.size(), gen.feature_dim(), "analytic f");
  require_same_dim(f0.size(), gen.feature_dim(), "analytic f0");
  FeatureVector out = f0;
  for (const auto& block : gen.blocks())
    if (block.action_field.intersects(s)) out.segment(block.begin, block.size) = f.segment(block.begin, block.size);
  return out;
}

MinimalFeatureTable build_table(std::span<const Generator* const> workers, const FeatureVector& f,
                                const FeatureVector& f0, const ImageBuffer& x,
                                const SolverConfig& cfg, TableBuildReport* report) {
  if (workers.empty()) throw std::invalid_argument("build_table: no workers");
  cfg.validate();
  const Generator& first = *workers.front();
  const int n = first.layout().num_patches();
  const std::uint32_t count = 1u << n;

  std::vector<std::optional<SolveResult>> results(count);
  std::atomic<std::uint32_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&](const Generator& gen) {
    for (;;) {
      const std::uint32_t mask = next.fetch_add(1);
      if (mask >= count) return;
      try {
        results[mask] = minimal_feature(gen, f, f0, x, PatchSet(mask, n), cfg);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };

  if (workers.size() == 1) {
    work(first);
  } else {
    std::vector<std::jthread> pool;
    for (const Generator* g : workers) pool.emplace_back([&, g] { work(*g); });
  }
  if (failure) std::rethrow_exception(failure);

  MinimalFeatureTable table(n, first.feature_dim());
  for (std::uint32_t mask = 0; mask < count; ++mask) {
    auto& r = *results[mask];
    table.set(PatchSet(mask, n), TableEntry{std::move(r.f_hat), r.reconstruction_error,
                                            r.constraint_met,
                                            static_cast<std::uint32_t>(r.iterations_used)});
  }
  if (report) {
    report->unconverged = table.unconverged();
    report->complete = table.complete() && report->unconverged.empty();
  }
  return table;
}

MinimalFeatureTable build_table(const Generator& gen, const FeatureVector& f,
                                const FeatureVector& f0, const ImageBuffer& x,
                                const SolverConfig& cfg, TableBuildReport* report) {
  const int threads = gen.concurrent_safe() ? cfg.parallel_workers : 1;
  std::vector<const Generator*> workers(static_cast<std::size_t>(threads), &gen);
  return build_table(std::span<const Generator* const>(workers), f, f0, x, cfg, report);
}

}  // namespace orfactor
