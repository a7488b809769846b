#include "orfactor/interactions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace orfactor {

FeatureVector or_interaction(const MinimalFeatureTable& table, const PatchSet& a) {
  if (a.universe() != table.universe()) throw ShapeError("or_interaction: universe mismatch");
  return or_interaction_with([&](const PatchSet& s) -> const FeatureVector& { return table.f_hat(s); }, a);
}

// ---------------------------------------------------------------------------

ComponentSet::ComponentSet(int n, FeatureVector baseline)
    : n_(n), baseline_(std::move(baseline)), records_(std::size_t{1} << n) {
  if (baseline_.size() <= 0) throw ShapeError("ComponentSet: empty baseline");
}

void ComponentSet::set(ComponentRecord rec) {
  if (rec.action_field.universe() != n_) throw ShapeError("ComponentSet: universe mismatch");
  if (rec.action_field.is_empty()) throw std::invalid_argument("ComponentSet: empty action field");
  require_same_dim(rec.delta_f.size(), dim(), "ComponentSet record");
  const auto m = rec.action_field.mask();
  records_[m] = std::move(rec);
}

bool ComponentSet::has(const PatchSet& a) const {
  return a.universe() == n_ && !a.is_empty() && records_[a.mask()].has_value();
}

const ComponentRecord& ComponentSet::at(const PatchSet& a) const {
  if (!has(a)) throw std::out_of_range("ComponentSet: unknown component " + a.to_string());
  return *records_[a.mask()];
}

std::size_t ComponentSet::size() const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [](const auto& r) { return r.has_value(); }));
}

std::vector<PatchSet> ComponentSet::keys() const {
  std::vector<PatchSet> out;
  for (std::size_t m = 1; m < records_.size(); ++m)
    if (records_[m]) out.push_back(records_[m]->action_field);
  return out;
}

std::vector<PatchSet> ComponentSet::ranked(bool exclude_degenerate, double zero_tol) const {
  std::vector<PatchSet> out;
  for (const auto& k : keys())
    if (!exclude_degenerate || at(k).l2_norm > zero_tol) out.push_back(k);
  std::stable_sort(out.begin(), out.end(), [&](const PatchSet& a, const PatchSet& b) {
    const double na = at(a).l2_norm, nb = at(b).l2_norm;
    if (na != nb) return na > nb;
    return a.mask() < b.mask();
  });
  return out;
}

std::vector<PatchSet> ComponentSet::degenerate(double zero_tol) const {
  std::vector<PatchSet> out;
  for (const auto& k : keys())
    if (at(k).l2_norm <= zero_tol) out.push_back(k);
  return out;
}

ComponentSet extract_components(const MinimalFeatureTable& table, bool allow_unconverged) {
  if (!table.complete())
    throw IncompleteTableError("extract_components: table is missing entries", table.missing());
  auto unconverged = table.unconverged();
  if (!allow_unconverged && !unconverged.empty())
    throw IncompleteTableError("extract_components: table has unconverged entries", unconverged);

  const int n = table.universe();
  ComponentSet cs(n, table.f_hat(PatchSet::empty(n)));
  for (std::uint32_t m = 1; m < (1u << n); ++m) {
    const PatchSet a(m, n);
    cs.set(ComponentRecord::make(a, or_interaction(table, a)));
  }
  cs.set_unconverged_sources(std::move(unconverged));
  return cs;
}

std::vector<PatchSet> triggered(const ComponentSet& cs, const PatchSet& s) {
  std::vector<PatchSet> out;
  for (const auto& k : cs.keys())
    if (k.intersects(s)) out.push_back(k);
  return out;
}

FeatureVector logical_model(const ComponentSet& cs, const PatchSet& s) {
  if (s.universe() != cs.universe()) throw ShapeError("logical_model: universe mismatch");
  FeatureVector h = cs.baseline();
  for (const auto& k : cs.keys())
    if (k.intersects(s)) h += cs.at(k).delta_f;
  return h;
}

FeatureVector truncated_logical_model(const ComponentSet& cs, const PatchSet& s, int top_k) {
  if (s.universe() != cs.universe()) throw ShapeError("truncated_logical_model: universe mismatch");
  const auto ranked = cs.ranked();
  if (top_k < 1 || static_cast<std::size_t>(top_k) > ranked.size())
    throw std::invalid_argument("truncated_logical_model: top_k out of range");
  std::vector<bool> keep(std::size_t{1} << cs.universe(), false);
  for (int i = 0; i < top_k; ++i) keep[ranked[static_cast<std::size_t>(i)].mask()] = true;
  FeatureVector h = cs.baseline();
  for (const auto& k : cs.keys())
    if (keep[k.mask()] && k.intersects(s)) h += cs.at(k).delta_f;
  return h;
}

// ---------------------------------------------------------------------------

ScalarGame::ScalarGame(int n, std::vector<double> payoff) : n_(n), payoff_(std::move(payoff)) {
  if (n < 0 || n > PatchSet::kMaxUniverse) throw ShapeError("ScalarGame: universe out of range");
  if (payoff_.size() != (std::size_t{1} << n)) throw ShapeError("ScalarGame: payoff must cover 2^n subsets");
}

ScalarGame ScalarGame::random(int n, SplitMix64& rng) {
  std::vector<double> p(std::size_t{1} << n);
  for (auto& v : p) v = rng.normal();
  return ScalarGame(n, std::move(p));
}

ScalarGame ScalarGame::unanimity(const PatchSet& t, double c) {
  const int n = t.universe();
  std::vector<double> p(std::size_t{1} << n, 0.0);
  for (std::uint32_t m = 0; m < p.size(); ++m)
    if (t.is_subset_of(PatchSet(m, n))) p[m] = c;
  return ScalarGame(n, std::move(p));
}

ScalarGame ScalarGame::operator+(const ScalarGame& o) const {
  if (n_ != o.n_) throw ShapeError("ScalarGame: universe mismatch");
  std::vector<double> p(payoff_.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = payoff_[i] + o.payoff_[i];
  return ScalarGame(n_, std::move(p));
}

PatchSet permute(const PatchSet& s, const std::vector<int>& perm) {
  std::uint32_t m = 0;
  for (int i : s.members()) m |= 1u << perm.at(static_cast<std::size_t>(i));
  return PatchSet(m, s.universe());
}

ScalarGame ScalarGame::permuted(const std::vector<int>& perm) const {
  std::vector<double> p(payoff_.size());
  for (std::uint32_t m = 0; m < p.size(); ++m) p[permute(PatchSet(m, n_), perm).mask()] = payoff_[m];
  return ScalarGame(n_, std::move(p));
}

double scalar_harsanyi(const ScalarGame& game, const PatchSet& s) {
  if (s.universe() != game.universe()) throw ShapeError("scalar_harsanyi: universe mismatch");
  return harsanyi_with([&](const PatchSet& l) { return game(l); }, s);
}

namespace {

std::vector<double> all_dividends(const ScalarGame& g) {
  std::vector<double> out(g.payoff().size());
  for (std::uint32_t m = 0; m < out.size(); ++m) out[m] = scalar_harsanyi(g, PatchSet(m, g.universe()));
  return out;
}

std::vector<int> random_permutation(int n, SplitMix64& rng) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  for (int i = n - 1; i > 0; --i)
    std::swap(p[static_cast<std::size_t>(i)], p[rng.below(static_cast<std::uint64_t>(i + 1))]);
  return p;
}

}  // namespace

std::vector<AxiomCheck> check_harsanyi_axioms(const ScalarGame& u, const ScalarGame& v, SplitMix64& rng) {
  const int n = u.universe();
  if (v.universe() != n) throw ShapeError("check_harsanyi_axioms: universe mismatch");
  const std::uint32_t count = 1u << n;
  const PatchSet full = PatchSet::full(n);
  const auto iu = all_dividends(u);
  std::vector<AxiomCheck> out;

  {  // efficiency: u(N) = sum_S I(S)
    double total = 0.0;
    for (double d : iu) total += d;
    out.push_back({"efficiency", std::abs(total - u(full))});
  }
  {  // linearity
    const auto iv = all_dividends(v);
    const auto iw = all_dividends(u + v);
    double err = 0.0;
    for (std::uint32_t m = 0; m < count; ++m) err = std::max(err, std::abs(iw[m] - iu[m] - iv[m]));
    out.push_back({"linearity", err});
  }
  {  // dummy: make player i a dummy, then I(S + i) = 0 for nonempty S not containing i
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const PatchSet pi = PatchSet::single(i, n);
    std::vector<double> p(count);
    for (std::uint32_t m = 0; m < count; ++m) p[m] = u(PatchSet(m, n) - pi);
    const ScalarGame d(n, std::move(p));
    double err = 0.0;
    for (const auto& s : subsets_of(full - pi))
      if (!s.is_empty()) err = std::max(err, std::abs(scalar_harsanyi(d, s | pi)));
    out.push_back({"dummy", err});
  }
  {  // symmetry: symmetrise u in (i, j), then I(S + i) = I(S + j)
    double err = 0.0;
    if (n >= 2) {
      const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
      if (j >= i) ++j;
      std::vector<int> swap_ij(static_cast<std::size_t>(n));
      std::iota(swap_ij.begin(), swap_ij.end(), 0);
      std::swap(swap_ij[static_cast<std::size_t>(i)], swap_ij[static_cast<std::size_t>(j)]);
      std::vector<double> p(count);
      for (std::uint32_t m = 0; m < count; ++m) {
        const PatchSet s(m, n);
        p[m] = 0.5 * (u(s) + u(permute(s, swap_ij)));
      }
      const ScalarGame sym(n, std::move(p));
      const PatchSet pij = PatchSet::of({i, j}, n);
      for (const auto& s : subsets_of(full - pij)) {
        err = std::max(err, std::abs(scalar_harsanyi(sym, s | PatchSet::single(i, n)) -
                                     scalar_harsanyi(sym, s | PatchSet::single(j, n))));
      }
    }
    out.push_back({"symmetry", err});
  }
  {  // anonymity: I_u(S) = I_{pi u}(pi S)
    const auto perm = random_permutation(n, rng);
    const ScalarGame pu = u.permuted(perm);
    double err = 0.0;
    for (std::uint32_t m = 0; m < count; ++m) {
      const PatchSet s(m, n);
      err = std::max(err, std::abs(iu[m] - scalar_harsanyi(pu, permute(s, perm))));
    }
    out.push_back({"anonymity", err});
  }
  {  // recursive: I(S + i) = I(S | i present) - I(S)
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const PatchSet pi = PatchSet::single(i, n);
    double err = 0.0;
    for (const auto& s : subsets_of(full - pi)) {
      const double with_i = harsanyi_with([&](const PatchSet& l) { return u(l | pi); }, s);
      err = std::max(err, std::abs(iu[(s | pi).mask()] - (with_i - iu[s.mask()])));
    }
    out.push_back({"recursive", err});
  }
  {  // interaction distribution: u_T gives I(T) = c and zero elsewhere
    const PatchSet t(static_cast<std::uint32_t>(rng.below(count)), n);
    const double c = rng.normal();
    const ScalarGame ut = ScalarGame::unanimity(t, c);
    double err = 0.0;
    for (std::uint32_t m = 0; m < count; ++m) {
      const double expect = (m == t.mask()) ? c : 0.0;
      err = std::max(err, std::abs(scalar_harsanyi(ut, PatchSet(m, n)) - expect));
    }
    out.push_back({"interaction_distribution", err});
  }
  return out;
}

}  // namespace orfactor
