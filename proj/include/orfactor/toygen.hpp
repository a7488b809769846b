#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "orfactor/generator.hpp"
#include "orfactor/rng.hpp"

namespace orfactor {

enum class ToyKind { BlockLinear, Mlp };

std::string to_string(ToyKind kind);
ToyKind toy_kind_from_string(const std::string& s);

/// A contiguous group of feature coordinates with its ground-truth action field.
struct FeatureBlock {
  PatchSet action_field;
  Eigen::Index begin = 0;
  Eigen::Index size = 0;
};

/// Split `total` into `parts` contiguous groups, the first total % parts one larger.
std::vector<std::pair<Eigen::Index, Eigen::Index>> even_split(Eigen::Index total, int parts);

struct ToyGeneratorSpec {
  ToyKind kind = ToyKind::BlockLinear;
  Eigen::Index code_dim = 16;
  Eigen::Index feature_dim = 64;
  PatchLayout layout;
  std::uint64_t seed = 42;

  /// One action field per feature block; coordinates are split evenly.
  std::vector<PatchSet> block_fields;

  double encode_bias_scale = 0.0;
  double decoder_scale = 1.0;
  double pixel_bias_scale = 0.5;

  // mlp only
  std::vector<int> hidden_widths;  // empty -> one layer of width feature_dim
  double hidden_gain = 0.5;
  double output_gain = 0.5;
  double hidden_bias_scale = 0.1;
  double leakage = 1e-3;

  void validate() const;
  std::vector<FeatureBlock> blocks() const;
  std::vector<int> widths() const;
};

/// Desk configuration: 4x4 grid of 8x8 cells, C=3, D=64, n=6, six blocks.
ToyGeneratorSpec default_block_linear_spec(std::uint64_t seed = 42);
/// Same block structure as the linear default, 4x4-pixel cells to keep solves cheap.
ToyGeneratorSpec default_mlp_spec(std::uint64_t seed = 42);
/// Six blocks over n patches: singletons plus one pair and one triple.
std::vector<PatchSet> default_block_fields(int n);
/// `count` random nonempty action fields of size 1..min(3, n).
std::vector<PatchSet> random_block_fields(int n, int count, std::uint64_t seed);

/*
 * Deterministic toy decoder with exact gradients.
 *
 * Weight fill order from SplitMix64(seed), every draw a standard normal:
 *   1. encoder matrix E (D x K, row-major) times 1/sqrt(K), then D encoder biases
 *      times encode_bias_scale;
 *   2. block_linear: for each block, for each patch of its action field in
 *      ascending order, an (L*C x |block|) tile orthonormalised by modified
 *      Gram-Schmidt over columns and scaled by decoder_scale; then H*W*C pixel
 *      biases times pixel_bias_scale;
 *   3. mlp: per hidden layer a dense (width x fan_in) matrix times
 *      leakage/sqrt(fan_in), whose in-group blocks are then overwritten by
 *      orthonormal tiles (columns if tall, rows if wide), then `width` biases
 *      times hidden_bias_scale; the output layer is a dense (H*W*C x width)
 *      matrix times leakage/sqrt(L*C) whose (patch rows x group columns) tiles
 *      are overwritten block by block as in step 2; then pixel biases.
 *
 * block_linear: x = b_pix + W f with W zero outside each block's cells.
 * mlp:          a_0 = f, a_l = tanh(g W_l a_{l-1} / s_{l-1} + b_l), s_0 = 1, s_l = g,
 *               x = tanh(o W_out a_L / g) / o + b_pix  (g = hidden_gain, o = output_gain).
 */
class ToyGenerator : public Generator {
 public:
  explicit ToyGenerator(ToyGeneratorSpec spec);

  Eigen::Index feature_dim() const override { return spec_.feature_dim; }
  Eigen::Index code_dim() const override { return spec_.code_dim; }
  const PatchLayout& layout() const override { return spec_.layout; }

  ImageBuffer forward(const FeatureVector& f) const override;
  FeatureVector vjp(const FeatureVector& f, const Eigen::VectorXd& upstream) const override;
  FeatureVector encode(const Eigen::VectorXd& z) const override;

  const ToyGeneratorSpec& spec() const { return spec_; }
  ToyKind kind() const { return spec_.kind; }
  const std::vector<FeatureBlock>& blocks() const { return blocks_; }

  const Eigen::MatrixXd& encode_matrix() const { return encode_w_; }
  const Eigen::VectorXd& encode_bias() const { return encode_b_; }
  const Eigen::VectorXd& pixel_bias() const { return pixel_b_; }
  /// Dense decoder matrix W (block_linear only).
  Eigen::MatrixXd decoder_matrix() const;

 private:
  struct Tile {
    std::vector<Eigen::Index> rows;
    Eigen::Index col_begin = 0;
    Eigen::MatrixXd weights;
  };

  void build_block_linear(SplitMix64& rng);
  void build_mlp(SplitMix64& rng);

  ImageBuffer forward_linear(const FeatureVector& f) const;
  ImageBuffer forward_mlp(const FeatureVector& f) const;
  FeatureVector vjp_linear(const Eigen::VectorXd& upstream) const;
  FeatureVector vjp_mlp(const FeatureVector& f, const Eigen::VectorXd& upstream) const;

  ToyGeneratorSpec spec_;
  std::vector<FeatureBlock> blocks_;
  Eigen::MatrixXd encode_w_;
  Eigen::VectorXd encode_b_;
  Eigen::VectorXd pixel_b_;

  std::vector<Tile> tiles_;

  std::vector<Eigen::MatrixXd> hidden_w_;
  std::vector<Eigen::VectorXd> hidden_b_;
  Eigen::MatrixXd output_w_;
};

/// Orthonormal (rows x cols) block from row-major standard normal draws.
Eigen::MatrixXd orthonormal_block(SplitMix64& rng, Eigen::Index rows, Eigen::Index cols);

}  // namespace orfactor
