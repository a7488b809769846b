#include "orfactor/toygen.hpp"

#include <cmath>
#include <stdexcept>

#include "orfactor/rng.hpp"

namespace orfactor {

FeatureVector Generator::estimate_baseline(int num_samples, std::uint64_t seed) const {
  if (num_samples < 1) throw std::invalid_argument("estimate_baseline: num_samples must be >= 1");
  SplitMix64 rng(seed);
  FeatureVector acc = FeatureVector::Zero(feature_dim());
  for (int s = 0; s < num_samples; ++s) acc += encode(rng.normal_vector(code_dim()));
  return acc / static_cast<double>(num_samples);
}

std::string to_string(ToyKind kind) {
  return kind == ToyKind::BlockLinear ? "block_linear" : "mlp";
}

ToyKind toy_kind_from_string(const std::string& s) {
  if (s == "block_linear") return ToyKind::BlockLinear;
  if (s == "mlp") return ToyKind::Mlp;
  throw std::invalid_argument("unknown toy generator kind '" + s + "'");
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> even_split(Eigen::Index total, int parts) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  const Eigen::Index base = total / parts;
  const Eigen::Index extra = total % parts;
  Eigen::Index at = 0;
  for (int p = 0; p < parts; ++p) {
    const Eigen::Index len = base + (p < extra ? 1 : 0);
    out.emplace_back(at, len);
    at += len;
  }
  return out;
}

// ---------------------------------------------------------------------------

void ToyGeneratorSpec::validate() const {
  if (code_dim <= 0 || feature_dim <= 0) throw ShapeError("toy spec: dimensions must be positive");
  const int n = layout.num_patches();
  if (n < 1) throw ShapeError("toy spec: layout has no selected patches");
  if (block_fields.empty()) throw ShapeError("toy spec: at least one block required");
  if (static_cast<Eigen::Index>(block_fields.size()) > feature_dim)
    throw ShapeError("toy spec: more blocks than feature coordinates");
  for (const auto& a : block_fields) {
    if (a.universe() != n) throw ShapeError("toy spec: block action field universe != n");
    if (a.is_empty()) throw ShapeError("toy spec: block action field must be nonempty");
  }
  if (kind == ToyKind::Mlp) {
    for (int w : widths())
      if (w < static_cast<int>(block_fields.size()))
        throw ShapeError("toy spec: hidden width smaller than block count");
    if (hidden_gain <= 0 || output_gain <= 0) throw std::invalid_argument("toy spec: gains must be > 0");
  }
}

std::vector<FeatureBlock> ToyGeneratorSpec::blocks() const {
  std::vector<FeatureBlock> out;
  const auto split = even_split(feature_dim, static_cast<int>(block_fields.size()));
  for (std::size_t b = 0; b < block_fields.size(); ++b)
    out.push_back({block_fields[b], split[b].first, split[b].second});
  return out;
}

std::vector<int> ToyGeneratorSpec::widths() const {
  if (hidden_widths.empty()) return {static_cast<int>(feature_dim)};
  return hidden_widths;
}

std::vector<PatchSet> default_block_fields(int n) {
  if (n < 6) {
    std::vector<PatchSet> out;
    for (int i = 0; i < n; ++i) out.push_back(PatchSet::single(i, n));
    if (n >= 2) out.push_back(PatchSet::of({0, n - 1}, n));
    return out;
  }
  return {PatchSet::of({0}, n),    PatchSet::of({1}, n),    PatchSet::of({2}, n),
          PatchSet::of({3}, n),    PatchSet::of({3, 4}, n), PatchSet::of({1, 2, 5}, n)};
}

std::vector<PatchSet> random_block_fields(int n, int count, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<PatchSet> out;
  const int max_size = std::min(3, n);
  for (int b = 0; b < count; ++b) {
    const int size = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_size)));
    std::uint32_t mask = 0;
    while (std::popcount(mask) < size) mask |= 1u << rng.below(static_cast<std::uint64_t>(n));
    out.emplace_back(mask, n);
  }
  return out;
}

ToyGeneratorSpec default_block_linear_spec(std::uint64_t seed) {
  ToyGeneratorSpec spec;
  spec.kind = ToyKind::BlockLinear;
  spec.layout = PatchLayout(4, 4, 32, 32, 3, {1, 5, 6, 9, 10, 14});
  spec.block_fields = default_block_fields(6);
  spec.seed = seed;
  return spec;
}

ToyGeneratorSpec default_mlp_spec(std::uint64_t seed) {
  ToyGeneratorSpec spec = default_block_linear_spec(seed);
  spec.kind = ToyKind::Mlp;
  spec.layout = PatchLayout(4, 4, 16, 16, 3, {1, 5, 6, 9, 10, 14});
  return spec;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd orthonormal_block(SplitMix64& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();

  const bool tall = rows >= cols;
  Eigen::MatrixXd v = tall ? m : Eigen::MatrixXd(m.transpose());
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index k = 0; k < j; ++k) v.col(j) -= v.col(k).dot(v.col(j)) * v.col(k);
    v.col(j) /= v.col(j).norm();
  }
  return tall ? v : Eigen::MatrixXd(v.transpose());
}

ToyGenerator::ToyGenerator(ToyGeneratorSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  blocks_ = spec_.blocks();
  SplitMix64 rng(spec_.seed);

  const double enc_scale = 1.0 / std::sqrt(static_cast<double>(spec_.code_dim));
  encode_w_.resize(spec_.feature_dim, spec_.code_dim);
  for (Eigen::Index r = 0; r < encode_w_.rows(); ++r)
    for (Eigen::Index c = 0; c < encode_w_.cols(); ++c) encode_w_(r, c) = rng.normal() * enc_scale;
  encode_b_ = rng.normal_vector(spec_.feature_dim) * spec_.encode_bias_scale;

  if (spec_.kind == ToyKind::BlockLinear)
    build_block_linear(rng);
  else
    build_mlp(rng);
}

void ToyGenerator::build_block_linear(SplitMix64& rng) {
  const auto& layout = spec_.layout;
  const Eigen::Index tile_rows = static_cast<Eigen::Index>(layout.cell_pixels()) * layout.channels();
  for (const auto& block : blocks_) {
    for (int patch : block.action_field.members()) {
      Tile t;
      t.rows = layout.patch_indices(patch);
      t.col_begin = block.begin;
      t.weights = orthonormal_block(rng, tile_rows, block.size) * spec_.decoder_scale;
      tiles_.push_back(std::move(t));
    }
  }
  pixel_b_ = rng.normal_vector(layout.num_values()) * spec_.pixel_bias_scale;
}

void ToyGenerator::build_mlp(SplitMix64& rng) {
  const auto& layout = spec_.layout;
  const int num_blocks = static_cast<int>(blocks_.size());
  Eigen::Index fan_in = spec_.feature_dim;
  auto in_groups = even_split(fan_in, num_blocks);

  for (int width : spec_.widths()) {
    Eigen::MatrixXd w(width, fan_in);
    const double leak = spec_.leakage / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.normal() * leak;
    const auto out_groups = even_split(width, num_blocks);
    for (int b = 0; b < num_blocks; ++b) {
      w.block(out_groups[b].first, in_groups[b].first, out_groups[b].second, in_groups[b].second) =
          orthonormal_block(rng, out_groups[b].second, in_groups[b].second);
    }
    hidden_w_.push_back(std::move(w));
    hidden_b_.push_back(rng.normal_vector(width) * spec_.hidden_bias_scale);
    fan_in = width;
    in_groups = out_groups;
  }

  const Eigen::Index tile_rows = static_cast<Eigen::Index>(layout.cell_pixels()) * layout.channels();
  output_w_.resize(layout.num_values(), fan_in);
  const double leak = spec_.leakage / std::sqrt(static_cast<double>(tile_rows));
  for (Eigen::Index r = 0; r < output_w_.rows(); ++r)
    for (Eigen::Index c = 0; c < output_w_.cols(); ++c) output_w_(r, c) = rng.normal() * leak;
  for (int b = 0; b < num_blocks; ++b) {
    for (int patch : blocks_[b].action_field.members()) {
      const Eigen::MatrixXd tile = orthonormal_block(rng, tile_rows, in_groups[b].second);
      const auto rows = layout.patch_indices(patch);
      for (std::size_t i = 0; i < rows.size(); ++i)
        output_w_.row(rows[i]).segment(in_groups[b].first, in_groups[b].second) =
            tile.row(static_cast<Eigen::Index>(i));
    }
  }
  pixel_b_ = rng.normal_vector(layout.num_values()) * spec_.pixel_bias_scale;
}

// ---------------------------------------------------------------------------

FeatureVector ToyGenerator::encode(const Eigen::VectorXd& z) const {
  require_same_dim(z.size(), spec_.code_dim, "encode");
  return encode_w_ * z + encode_b_;
}

ImageBuffer ToyGenerator::forward(const FeatureVector& f) const {
  require_same_dim(f.size(), spec_.feature_dim, "forward");
  return spec_.kind == ToyKind::BlockLinear ? forward_linear(f) : forward_mlp(f);
}

FeatureVector ToyGenerator::vjp(const FeatureVector& f, const Eigen::VectorXd& upstream) const {
  require_same_dim(f.size(), spec_.feature_dim, "vjp feature");
  require_same_dim(upstream.size(), spec_.layout.num_values(), "vjp upstream");
  return spec_.kind == ToyKind::BlockLinear ? vjp_linear(upstream) : vjp_mlp(f, upstream);
}

ImageBuffer ToyGenerator::forward_linear(const FeatureVector& f) const {
  Eigen::VectorXd x = pixel_b_;
  Eigen::VectorXd y;
  for (const auto& t : tiles_) {
    y.noalias() = t.weights * f.segment(t.col_begin, t.weights.cols());
    for (std::size_t i = 0; i < t.rows.size(); ++i) x[t.rows[i]] += y[static_cast<Eigen::Index>(i)];
  }
  return ImageBuffer(spec_.layout, std::move(x));
}

FeatureVector ToyGenerator::vjp_linear(const Eigen::VectorXd& upstream) const {
  FeatureVector g = FeatureVector::Zero(spec_.feature_dim);
  Eigen::VectorXd u;
  for (const auto& t : tiles_) {
    u.resize(static_cast<Eigen::Index>(t.rows.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i) u[static_cast<Eigen::Index>(i)] = upstream[t.rows[i]];
    g.segment(t.col_begin, t.weights.cols()).noalias() += t.weights.transpose() * u;
  }
  return g;
}

ImageBuffer ToyGenerator::forward_mlp(const FeatureVector& f) const {
  const double g = spec_.hidden_gain;
  const double o = spec_.output_gain;
  Eigen::VectorXd a = f;
  double s = 1.0;
  for (std::size_t l = 0; l < hidden_w_.size(); ++l) {
    a = ((g / s) * (hidden_w_[l] * a) + hidden_b_[l]).array().tanh().matrix();
    s = g;
  }
  Eigen::VectorXd u = (o / g) * (output_w_ * a);
  Eigen::VectorXd x = u.array().tanh().matrix() / o + pixel_b_;
  return ImageBuffer(spec_.layout, std::move(x));
}

FeatureVector ToyGenerator::vjp_mlp(const FeatureVector& f, const Eigen::VectorXd& upstream) const {
  const double g = spec_.hidden_gain;
  const double o = spec_.output_gain;
  const std::size_t depth = hidden_w_.size();

  std::vector<Eigen::VectorXd> acts;
  acts.reserve(depth + 1);
  acts.push_back(f);
  double s = 1.0;
  for (std::size_t l = 0; l < depth; ++l) {
    acts.push_back(((g / s) * (hidden_w_[l] * acts.back()) + hidden_b_[l]).array().tanh().matrix());
    s = g;
  }
  const Eigen::VectorXd y = ((o / g) * (output_w_ * acts.back())).array().tanh().matrix();

  // d x / d u = (1 - y^2), u = (o/g) W_out a_L, x = tanh(u)/o
  Eigen::VectorXd grad_u = upstream.array() * (1.0 - y.array().square());
  Eigen::VectorXd grad_a = (1.0 / g) * (output_w_.transpose() * grad_u);
  for (std::size_t l = depth; l-- > 0;) {
    const double s_in = (l == 0) ? 1.0 : g;
    Eigen::VectorXd grad_pre = grad_a.array() * (1.0 - acts[l + 1].array().square());
    grad_a = (g / s_in) * (hidden_w_[l].transpose() * grad_pre);
  }
  return grad_a;
}

Eigen::MatrixXd ToyGenerator::decoder_matrix() const {
  if (spec_.kind != ToyKind::BlockLinear)
    throw std::logic_error("decoder_matrix: only defined for block_linear generators");
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(spec_.layout.num_values(), spec_.feature_dim);
  for (const auto& t : tiles_)
    for (std::size_t i = 0; i < t.rows.size(); ++i)
      w.row(t.rows[i]).segment(t.col_begin, t.weights.cols()) += t.weights.row(static_cast<Eigen::Index>(i));
  return w;
}

}  // namespace orfactor
