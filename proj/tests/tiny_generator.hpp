#pragma once

#include <limits>

#include "orfactor/generator.hpp"

namespace orfactor::testing {

// Identity decoder on a 1x2 grid of single pixels: x = f, J = I.
class TinyGenerator : public Generator {
 public:
  explicit TinyGenerator(bool poison = false)
      : layout_(1, 2, 1, 2, 1, {0, 1}), poison_(poison) {}

  Eigen::Index feature_dim() const override { return 2; }
  Eigen::Index code_dim() const override { return 2; }
  const PatchLayout& layout() const override { return layout_; }

  ImageBuffer forward(const FeatureVector& f) const override {
    Eigen::VectorXd x = f;
    if (poison_) x[0] = std::numeric_limits<double>::quiet_NaN();
    return ImageBuffer(layout_, x);
  }
  FeatureVector vjp(const FeatureVector&, const Eigen::VectorXd& upstream) const override { return upstream; }
  FeatureVector encode(const Eigen::VectorXd& z) const override { return z; }

 private:
  PatchLayout layout_;
  bool poison_;
};

}  // namespace orfactor::testing
