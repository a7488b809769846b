#pragma once

#include <cstdint>

#include "orfactor/core.hpp"

namespace orfactor {

/// The z -> f -> x pipeline as seen by the solver and metrics: an encoder d(z)
/// producing the intermediate feature and a decoder g(f) producing the image,
/// together with the decoder's vector-Jacobian product.
class Generator {
 public:
  virtual ~Generator() = default;

  virtual Eigen::Index feature_dim() const = 0;
  virtual Eigen::Index code_dim() const = 0;
  virtual const PatchLayout& layout() const = 0;

  virtual ImageBuffer forward(const FeatureVector& f) const = 0;
  /// J^T upstream with J = dg/df evaluated at f.
  virtual FeatureVector vjp(const FeatureVector& f, const Eigen::VectorXd& upstream) const = 0;
  virtual FeatureVector encode(const Eigen::VectorXd& z) const = 0;

  /// Monte Carlo estimate of E_z[d(z)] with z ~ N(0, I) from SplitMix64(seed).
  virtual FeatureVector estimate_baseline(int num_samples, std::uint64_t seed) const;

  /// Whether forward/vjp may be called from several threads at once.
  virtual bool concurrent_safe() const { return true; }
  /// False when vjp is a numerical approximation.
  virtual bool vjp_exact() const { return true; }
};

}  // namespace orfactor
