#pragma once

#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "orfactor/core.hpp"
#include "orfactor/rng.hpp"

namespace orfactor {

class IncompleteTableError : public std::runtime_error {
 public:
  IncompleteTableError(const std::string& what, std::vector<PatchSet> subsets)
      : std::runtime_error(what), subsets_(std::move(subsets)) {}
  const std::vector<PatchSet>& subsets() const { return subsets_; }

 private:
  std::vector<PatchSet> subsets_;
};

/*
 * OR interaction over an arbitrary subset-indexed value:
 *
 *   I_or(A) = - sum_{S' subset of A} (-1)^{|A|-|S'|} v(N \ S'),
 *
 * summed in ascending order of S'. `value_of` maps a PatchSet to a scalar or
 * an Eigen vector.
 */
template <typename Lookup>
auto or_interaction_with(const Lookup& value_of, const PatchSet& a)
    -> std::decay_t<decltype(value_of(a))> {
  using Value = std::decay_t<decltype(value_of(a))>;
  if (a.is_empty()) throw std::invalid_argument("or_interaction: empty action field");
  const PatchSet full = PatchSet::full(a.universe());
  const auto subs = subsets_of(a);
  Value acc{};
  bool first = true;
  for (const auto& sub : subs) {
    const double sign = ((a.size() - sub.size()) % 2 == 0) ? 1.0 : -1.0;
    if (first) {
      acc = Value(sign * value_of(full - sub));
      first = false;
    } else {
      acc += sign * value_of(full - sub);
    }
  }
  return Value(-acc);
}

/// Harsanyi dividend I(S) = sum_{L subset of S} (-1)^{|S|-|L|} u(L), ascending L.
template <typename Lookup>
auto harsanyi_with(const Lookup& value_of, const PatchSet& s) -> std::decay_t<decltype(value_of(s))> {
  using Value = std::decay_t<decltype(value_of(s))>;
  Value acc{};
  bool first = true;
  for (const auto& sub : subsets_of(s)) {
    const double sign = ((s.size() - sub.size()) % 2 == 0) ? 1.0 : -1.0;
    if (first) {
      acc = Value(sign * value_of(sub));
      first = false;
    } else {
      acc += sign * value_of(sub);
    }
  }
  return acc;
}

/// Feature component for action field A from a complete minimal-feature table.
FeatureVector or_interaction(const MinimalFeatureTable& table, const PatchSet& a);

// ---------------------------------------------------------------------------

/// Baseline plus one component per nonempty action field.
class ComponentSet {
 public:
  ComponentSet() = default;
  ComponentSet(int n, FeatureVector baseline);

  int universe() const { return n_; }
  Eigen::Index dim() const { return baseline_.size(); }
  const FeatureVector& baseline() const { return baseline_; }

  void set(ComponentRecord rec);
  bool has(const PatchSet& a) const;
  const ComponentRecord& at(const PatchSet& a) const;
  std::size_t size() const;
  bool complete() const { return size() == (std::size_t{1} << n_) - 1; }

  /// Nonempty action fields in ascending mask order.
  std::vector<PatchSet> keys() const;
  /// Action fields sorted by descending l2_norm, ties by ascending mask.
  /// With `exclude_degenerate`, components with l2_norm <= zero_tol are dropped.
  std::vector<PatchSet> ranked(bool exclude_degenerate = false, double zero_tol = 0.0) const;
  /// Fields with l2_norm <= zero_tol.
  std::vector<PatchSet> degenerate(double zero_tol = 0.0) const;

  /// Table entries that were unconverged when this set was extracted.
  const std::vector<PatchSet>& unconverged_sources() const { return unconverged_; }
  void set_unconverged_sources(std::vector<PatchSet> s) { unconverged_ = std::move(s); }

 private:
  int n_ = 0;
  FeatureVector baseline_;
  std::vector<std::optional<ComponentRecord>> records_;
  std::vector<PatchSet> unconverged_;
};

/// All 2^n - 1 components. Throws IncompleteTableError on missing entries, or on
/// unconverged entries when `allow_unconverged` is false.
ComponentSet extract_components(const MinimalFeatureTable& table, bool allow_unconverged = true);

/// h(S) = f0 + sum of components whose action field meets S.
FeatureVector logical_model(const ComponentSet& cs, const PatchSet& s);
/// h(S) restricted to the top_k components by norm (summed in ascending mask order).
FeatureVector truncated_logical_model(const ComponentSet& cs, const PatchSet& s, int top_k);
/// The components whose action field meets S: Omega_S = {k | A_k meets S}.
std::vector<PatchSet> triggered(const ComponentSet& cs, const PatchSet& s);

// ---------------------------------------------------------------------------
// Scalar games

class ScalarGame {
 public:
  ScalarGame() = default;
  ScalarGame(int n, std::vector<double> payoff);

  static ScalarGame random(int n, SplitMix64& rng);
  /// u_T(S) = c if T subset of S, else 0.
  static ScalarGame unanimity(const PatchSet& t, double c);

  int universe() const { return n_; }
  double operator()(const PatchSet& s) const { return payoff_.at(s.mask()); }
  const std::vector<double>& payoff() const { return payoff_; }

  ScalarGame operator+(const ScalarGame& o) const;
  /// (pi u)(pi S) = u(S), with perm[i] the image of player i.
  ScalarGame permuted(const std::vector<int>& perm) const;

 private:
  int n_ = 0;
  std::vector<double> payoff_;
};

double scalar_harsanyi(const ScalarGame& game, const PatchSet& s);

PatchSet permute(const PatchSet& s, const std::vector<int>& perm);

struct AxiomCheck {
  std::string name;
  double max_error = 0.0;
};

/// Max violation of each of the seven Harsanyi axioms on games derived from `u`
/// (and `v` for linearity), using `rng` for players, permutations and constants.
std::vector<AxiomCheck> check_harsanyi_axioms(const ScalarGame& u, const ScalarGame& v,
                                              SplitMix64& rng);

}  // namespace orfactor
