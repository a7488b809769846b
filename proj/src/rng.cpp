#include "orfactor/rng.hpp"

#include <cmath>
#include <numbers>

namespace orfactor {

double SplitMix64::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t SplitMix64::below(std::uint64_t bound) {
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

Eigen::VectorXd SplitMix64::normal_vector(Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
  SplitMix64 mix(master ^ fnv1a64(stage));
  return mix.next_u64();
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t task_index) {
  SplitMix64 mix(master + 0x632be59bd9b4e019ull * (task_index + 1));
  return mix.next_u64();
}

}  // namespace orfactor
