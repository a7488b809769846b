#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Dense>

namespace orfactor {

/*
 * Seeded stream used for every random quantity in the library.
 *
 * The stream is normative (external backends mirror it to regenerate toy
 * weights bit-for-bit):
 *
 *   state += 0x9e3779b97f4a7c15
 *   z = state
 *   z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
 *   z = (z ^ (z >> 27)) * 0x94d049bb133111eb
 *   next_u64 = z ^ (z >> 31)
 *
 *   uniform = (next_u64 >> 11) * 2^-53                      in [0, 1)
 *   normal  = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)            two uniforms, no caching
 */
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  Eigen::VectorXd normal_vector(Eigen::Index n);

 private:
  std::uint64_t state_;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// Independent child seed for a named stage; adding stages never perturbs others.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage);
/// Independent child seed for the i-th task of a parallel loop.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t task_index);

}  // namespace orfactor
