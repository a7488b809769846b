#include "orfactor/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "orfactor/rng.hpp"

namespace orfactor {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void Series::add_row(std::vector<double> row) {
  if (row.size() != columns.size()) throw ShapeError("Series " + name + ": row width mismatch");
  for (double v : row)
    if (!std::isfinite(v)) throw NonFiniteError("Series " + name + ": non-finite value");
  rows.push_back(std::move(row));
}

std::string Series::to_csv() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
  os << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << format_double(r[i]);
    os << '\n';
  }
  return os.str();
}

void MetricReport::set(const std::string& key, double value) { set(key, std::vector<double>{value}); }

void MetricReport::set(const std::string& key, std::vector<double> values) {
  for (double v : values)
    if (!std::isfinite(v)) throw NonFiniteError("MetricReport: non-finite value for " + key);
  values_[key] = std::move(values);
}

void MetricReport::set_text(const std::string& key, std::string value) { text_[key] = std::move(value); }

void MetricReport::add_series(Series s) { series_.push_back(std::move(s)); }

double MetricReport::scalar(const std::string& key) const {
  const auto& v = values_.at(key);
  if (v.size() != 1) throw std::invalid_argument("MetricReport: " + key + " is not a scalar");
  return v.front();
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : metadata) os << k << " = " << v << '\n';
  for (const auto& [k, v] : text_) os << k << " = " << v << '\n';
  for (const auto& [k, v] : values_) {
    os << k << " = ";
    if (v.size() == 1) {
      os << format_double(v.front());
    } else {
      os << '[';
      for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << format_double(v[i]);
      os << ']';
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

ImageBuffer generate_from_components(const Generator& gen, const ComponentSet& cs,
                                     const std::vector<PatchSet>& omega) {
  require_same_dim(cs.dim(), gen.feature_dim(), "generate_from_components");
  FeatureVector f = cs.baseline();
  for (const auto& k : omega) f += cs.at(k).delta_f;
  return gen.forward(f);
}

std::string to_string(ContextSampling m) {
  return m == ContextSampling::UniformSize ? "uniform_size" : "uniform_subset";
}

ContextSampling context_sampling_from_string(const std::string& s) {
  if (s == "uniform_size") return ContextSampling::UniformSize;
  if (s == "uniform_subset") return ContextSampling::UniformSubset;
  throw std::invalid_argument("unknown context sampling '" + s + "'");
}

namespace {

std::vector<PatchSet> sample_context(const std::vector<PatchSet>& others, ContextSampling mode,
                                     SplitMix64& rng) {
  std::vector<PatchSet> out;
  if (mode == ContextSampling::UniformSubset) {
    for (const auto& k : others)
      if (rng.next_u64() >> 63) out.push_back(k);
    return out;
  }
  // Size uniform in 0..|others|, then a partial Fisher-Yates draw.
  const std::size_t m = others.size();
  const std::size_t size = static_cast<std::size_t>(rng.below(m + 1));
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(m - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  for (auto i : idx) out.push_back(others[i]);
  return out;
}

void require_key(const ComponentSet& cs, const PatchSet& k) {
  if (!cs.has(k)) throw std::out_of_range("unknown component " + k.to_string());
}

}  // namespace

RegionalPattern regional_pattern(const Generator& gen, const ComponentSet& cs, const PatchSet& k,
                                 int mc_samples, std::uint64_t seed, ContextSampling mode) {
  if (mc_samples < 1) throw std::invalid_argument("regional_pattern: mc_samples must be >= 1");
  require_key(cs, k);
  std::vector<PatchSet> others;
  for (const auto& key : cs.keys())
    if (!(key == k)) others.push_back(key);

  std::vector<std::vector<PatchSet>> contexts;
  contexts.reserve(static_cast<std::size_t>(mc_samples));
  for (int j = 0; j < mc_samples; ++j) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
    contexts.push_back(sample_context(others, mode, rng));
  }
  return regional_pattern_over(gen, cs, k, contexts);
}

RegionalPattern regional_pattern_over(const Generator& gen, const ComponentSet& cs,
                                      const PatchSet& k,
                                      const std::vector<std::vector<PatchSet>>& contexts) {
  if (contexts.empty()) throw std::invalid_argument("regional_pattern: no contexts");
  require_key(cs, k);
  const FeatureVector& dk = cs.at(k).delta_f;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(gen.layout().num_values());
  for (const auto& omega : contexts) {
    FeatureVector f = cs.baseline();
    for (const auto& l : omega) {
      if (l == k) throw std::invalid_argument("regional_pattern: context contains the component itself");
      f += cs.at(l).delta_f;
    }
    acc += gen.forward(f + dk).pixels() - gen.forward(f).pixels();
  }
  acc /= static_cast<double>(contexts.size());
  return RegionalPattern{k, ImageBuffer(gen.layout(), std::move(acc)), static_cast<int>(contexts.size())};
}

double gamma_spatial(const RegionalPattern& rp, const PatchLayout& layout) {
  if (!rp.delta_image.matches(layout)) throw ShapeError("gamma_spatial: pattern does not match layout");
  const double total = rp.delta_image.pixels().squaredNorm();
  if (!(total > 0.0)) throw DegenerateComponentError("degenerate component " + rp.key.to_string());
  double inside = 0.0;
  for (auto i : layout.region_indices(rp.key)) inside += rp.delta_image.pixels()[i] * rp.delta_image.pixels()[i];
  return std::sqrt(inside / total);
}

// ---------------------------------------------------------------------------

int count_for_ratio(double p, std::size_t m) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("ratio must lie in [0,1]");
  return static_cast<int>(std::ceil(p * static_cast<double>(m) - 1e-9));
}

std::vector<PatchSet> breach_candidates(const ComponentSet& cs, int patch) {
  std::vector<PatchSet> out;
  for (const auto& k : cs.ranked(true))
    if (!k.contains(patch)) out.push_back(k);
  return out;
}

std::vector<BreachPoint> boundary_breach_curve(const Generator& gen, const ComponentSet& cs,
                                               int patch, const std::vector<double>& ratios,
                                               const ImageBuffer* x) {
  const int n = cs.universe();
  if (patch < 0 || patch >= n) throw std::out_of_range("boundary_breach_curve: patch out of range");
  if (!std::is_sorted(ratios.begin(), ratios.end()))
    throw std::invalid_argument("boundary_breach_curve: ratios must be ascending");
  const PatchLayout& layout = gen.layout();
  const auto cands = breach_candidates(cs, patch);
  const ImageBuffer x0 = gen.forward(cs.baseline());
  const PatchSet target = PatchSet::single(patch, n);
  const PatchSet rest = PatchSet::full(n) - target;

  std::vector<BreachPoint> out;
  for (double p : ratios) {
    const int count = count_for_ratio(p, cands.size());
    const std::vector<PatchSet> omega(cands.begin(), cands.begin() + count);
    const ImageBuffer img = generate_from_components(gen, cs, omega);
    BreachPoint bp;
    bp.p = p;
    bp.added = count;
    bp.rmse_target = region_rmse(img, x0, target, layout);
    if (!rest.is_empty()) {
      bp.rmse_rest = region_rmse(img, x0, rest, layout);
      if (x) bp.rmse_rest_vs_x = region_rmse(img, *x, rest, layout);
    }
    out.push_back(bp);
  }
  return out;
}

std::vector<ReconstructionPoint> controlled_reconstruction(const Generator& gen,
                                                           const ComponentSet& cs,
                                                           const PatchSet& s_target,
                                                           const ImageBuffer& x,
                                                           const std::vector<double>& schedule) {
  if (s_target.is_empty()) throw std::invalid_argument("controlled_reconstruction: empty target");
  const PatchLayout& layout = gen.layout();
  std::vector<PatchSet> cands;
  for (const auto& k : cs.ranked(true))
    if (k.intersects(s_target)) cands.push_back(k);
  const PatchSet rest = PatchSet::full(cs.universe()) - s_target;

  std::vector<ReconstructionPoint> out;
  for (double frac : schedule) {
    const int count = count_for_ratio(frac, cands.size());
    const std::vector<PatchSet> omega(cands.begin(), cands.begin() + count);
    const ImageBuffer img = generate_from_components(gen, cs, omega);
    ReconstructionPoint rp;
    rp.fraction = frac;
    rp.added = count;
    rp.rmse_target = region_rmse(img, x, s_target, layout);
    if (!rest.is_empty()) rp.rmse_rest = region_rmse(img, x, rest, layout);
    out.push_back(rp);
  }
  return out;
}

std::vector<SequentialStep> sequential_reconstruction(const Generator& gen, const ComponentSet& cs,
                                                      const std::vector<int>& order,
                                                      const ImageBuffer& x) {
  const int n = cs.universe();
  const PatchLayout& layout = gen.layout();
  PatchSet active = PatchSet::empty(n);
  std::vector<SequentialStep> out;
  for (int patch : order) {
    if (patch < 0 || patch >= n) throw std::out_of_range("sequential_reconstruction: patch out of range");
    active = active | PatchSet::single(patch, n);
    const auto omega = context_components(cs, active);
    const ImageBuffer img = generate_from_components(gen, cs, omega);
    SequentialStep st;
    st.patch = patch;
    st.added = static_cast<int>(omega.size());
    st.rmse_so_far = region_rmse(img, x, active, layout);
    const PatchSet rest = PatchSet::full(n) - active;
    if (!rest.is_empty()) st.rmse_rest = region_rmse(img, x, rest, layout);
    out.push_back(st);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<PatchSet> context_components(const ComponentSet& cs, const PatchSet& s) {
  return triggered(cs, s);
}

std::vector<double> consistency_alpha(const Generator& gen, const ComponentSet& cs,
                                      const PatchSet& k, const std::vector<PatchSet>& contexts,
                                      const RegionalPattern& mean) {
  require_key(cs, k);
  const double mean_norm = mean.delta_image.pixels().norm();
  if (!(mean_norm > 0.0)) throw DegenerateComponentError("degenerate mean pattern for " + k.to_string());
  const FeatureVector& dk = cs.at(k).delta_f;
  std::vector<double> out;
  for (const auto& s : contexts) {
    if (s.intersects(k)) throw std::invalid_argument("consistency_alpha: context " + s.to_string() +
                                                     " meets the action field " + k.to_string());
    FeatureVector f = cs.baseline();
    for (const auto& l : context_components(cs, s)) f += cs.at(l).delta_f;
    const Eigen::VectorXd dx = gen.forward(f + dk).pixels() - gen.forward(f).pixels();
    out.push_back((dx - mean.delta_image.pixels()).norm() / mean_norm);
  }
  return out;
}

std::vector<PatchSet> default_consistency_contexts(const PatchSet& a_k, int count, std::uint64_t seed) {
  const int n = a_k.universe();
  const auto pool = (PatchSet::full(n) - a_k).members();
  const int max_size = std::max(1, n / 2);
  SplitMix64 rng(seed);
  std::vector<PatchSet> out;
  for (int c = 0; c < count; ++c) {
    int size = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_size)));
    size = std::min<int>(size, static_cast<int>(pool.size()));
    std::vector<int> p = pool;
    std::uint32_t mask = 0;
    for (int i = 0; i < size; ++i) {
      const std::size_t j = static_cast<std::size_t>(i) + rng.below(p.size() - static_cast<std::size_t>(i));
      std::swap(p[static_cast<std::size_t>(i)], p[j]);
      mask |= 1u << p[static_cast<std::size_t>(i)];
    }
    out.emplace_back(mask, n);
  }
  return out;
}

MatchingError matching_error_delta(const ComponentSet& cs, const MinimalFeatureTable& table,
                                   const PatchSet& s, int top_k) {
  const FeatureVector& fhat = table.f_hat(s);
  const FeatureVector h = truncated_logical_model(cs, s, top_k);
  return MatchingError{(h - fhat).lpNorm<1>() / static_cast<double>(fhat.size()), fhat.norm()};
}

SparsityCurve sparsity_curve(const ComponentSet& cs, double floor) {
  if (!(floor > 0.0)) throw std::invalid_argument("sparsity_curve: floor must be > 0");
  SparsityCurve out;
  out.floor = floor;
  for (const auto& k : cs.keys()) {
    const auto& d = cs.at(k).delta_f;
    for (Eigen::Index i = 0; i < d.size(); ++i) out.values.push_back(std::abs(d[i]));
  }
  std::sort(out.values.begin(), out.values.end(), std::greater<>());
  out.log10.reserve(out.values.size());
  for (double v : out.values) out.log10.push_back(std::log10(std::max(v, floor)));
  return out;
}

Transferability transferability(const ComponentSet& cs_a, const ComponentSet& cs_b, int l_a,
                                int l_b, double zero_tol) {
  if (cs_a.universe() != cs_b.universe()) throw ShapeError("transferability: universe mismatch");
  if (l_a < 1 || l_b < 1) throw std::invalid_argument("transferability: l_a and l_b must be >= 1");
  auto ra = cs_a.ranked(true, zero_tol);
  auto rb = cs_b.ranked(true, zero_tol);
  if (ra.empty()) throw DegenerateComponentError("transferability: no non-degenerate components");
  ra.resize(std::min<std::size_t>(ra.size(), static_cast<std::size_t>(l_a)));
  rb.resize(std::min<std::size_t>(rb.size(), static_cast<std::size_t>(l_b)));
  Transferability out;
  for (const auto& k : ra) {
    if (std::find(rb.begin(), rb.end(), k) != rb.end())
      out.transferable.push_back(k);
    else
      out.non_transferable.push_back(k);
  }
  out.t = static_cast<double>(out.transferable.size()) / static_cast<double>(ra.size());
  return out;
}

}  // namespace orfactor
