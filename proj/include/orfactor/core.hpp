#pragma once

#include <bit>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace orfactor {

// Dense vectors are templated on the scalar so the interaction algebra can be
// instantiated for other field types (e.g. long double in oracles).
template <typename Scalar>
using FeatureVectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using FeatureVector = FeatureVectorT<double>;

/// Thrown when two objects disagree on shape/dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a value that must be finite is not.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& v) {
  return v.allFinite();
}

void require_finite(const Eigen::Ref<const Eigen::VectorXd>& v, const std::string& what);
void require_same_dim(Eigen::Index a, Eigen::Index b, const std::string& what);

// ---------------------------------------------------------------------------
// PatchSet

/// Subset of the n selected patches, bit i set iff selected patch i is present.
class PatchSet {
 public:
  static constexpr int kMaxUniverse = 16;

  PatchSet() = default;
  PatchSet(std::uint32_t mask, int n);

  static PatchSet empty(int n) { return PatchSet(0, n); }
  static PatchSet full(int n);
  static PatchSet single(int i, int n);
  static PatchSet of(std::initializer_list<int> members, int n);

  std::uint32_t mask() const { return mask_; }
  int universe() const { return n_; }
  int size() const { return std::popcount(mask_); }
  bool is_empty() const { return mask_ == 0; }
  bool contains(int i) const { return (mask_ >> i) & 1u; }
  bool intersects(const PatchSet& o) const { return (mask_ & o.mask_) != 0; }
  bool is_subset_of(const PatchSet& o) const { return (mask_ & ~o.mask_) == 0; }

  PatchSet complement() const;
  PatchSet operator|(const PatchSet& o) const;
  PatchSet operator&(const PatchSet& o) const;
  PatchSet operator-(const PatchSet& o) const;

  std::vector<int> members() const;
  std::string to_string() const;

  friend bool operator==(const PatchSet&, const PatchSet&) = default;

 private:
  void check_same_universe(const PatchSet& o) const;

  std::uint32_t mask_ = 0;
  int n_ = 0;
};

/// All subsets of `a` in ascending mask order (2^|a| of them).
std::vector<PatchSet> subsets_of(const PatchSet& a);

// ---------------------------------------------------------------------------
// PatchLayout

struct PixelRect {
  int row0, col0, rows, cols;
};

/// Grid segmentation of an image plus the ordered list of selected cells.
class PatchLayout {
 public:
  PatchLayout() = default;
  PatchLayout(int grid_rows, int grid_cols, int image_h, int image_w, int channels,
              std::vector<int> selected);

  int grid_rows() const { return grid_rows_; }
  int grid_cols() const { return grid_cols_; }
  int image_h() const { return image_h_; }
  int image_w() const { return image_w_; }
  int channels() const { return channels_; }
  int cell_h() const { return image_h_ / grid_rows_; }
  int cell_w() const { return image_w_ / grid_cols_; }
  /// Pixels per cell (L), not counting channels.
  int cell_pixels() const { return cell_h() * cell_w(); }
  int num_patches() const { return static_cast<int>(selected_.size()); }
  const std::vector<int>& selected() const { return selected_; }
  Eigen::Index num_values() const {
    return static_cast<Eigen::Index>(image_h_) * image_w_ * channels_;
  }

  PixelRect cell_rect(int grid_cell) const;
  PixelRect patch_rect(int patch) const { return cell_rect(selected_.at(patch)); }

  /// Flat offset of (row, col, ch) in HWC order.
  Eigen::Index offset(int row, int col, int ch) const {
    return (static_cast<Eigen::Index>(row) * image_w_ + col) * channels_ + ch;
  }

  /// Flat indices of one selected patch, row-major pixels with channels innermost.
  std::vector<Eigen::Index> patch_indices(int patch) const;
  /// Flat indices of all patches in `s`, ascending patch order.
  std::vector<Eigen::Index> region_indices(const PatchSet& s) const;

  friend bool operator==(const PatchLayout&, const PatchLayout&) = default;

 private:
  int grid_rows_ = 0, grid_cols_ = 0, image_h_ = 0, image_w_ = 0, channels_ = 0;
  std::vector<int> selected_;
};

// ---------------------------------------------------------------------------
// ImageBuffer

/// H x W x C raster of unclamped reals stored flat in HWC order.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  explicit ImageBuffer(const PatchLayout& layout);
  ImageBuffer(const PatchLayout& layout, Eigen::VectorXd pixels);

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  const Eigen::VectorXd& pixels() const { return pixels_; }
  Eigen::VectorXd& pixels() { return pixels_; }

  double at(int row, int col, int ch) const {
    return pixels_[(static_cast<Eigen::Index>(row) * w_ + col) * c_ + ch];
  }

  bool matches(const PatchLayout& layout) const;

  ImageBuffer operator-(const ImageBuffer& o) const;
  ImageBuffer operator+(const ImageBuffer& o) const;

 private:
  int h_ = 0, w_ = 0, c_ = 0;
  Eigen::VectorXd pixels_;
};

/// Concatenated pixel values of the patches in `s`.
std::vector<double> region_clip(const ImageBuffer& img, const PatchSet& s,
                                const PatchLayout& layout);

/// Per-scalar RMSE over the clipped region: sqrt(||a_S - b_S||^2 / (|S| L C)).
double region_rmse(const ImageBuffer& a, const ImageBuffer& b, const PatchSet& s,
                   const PatchLayout& layout);

/// Squared L2 distance over the clipped region.
double region_sq_error(const ImageBuffer& a, const ImageBuffer& b, const PatchSet& s,
                       const PatchLayout& layout);

// ---------------------------------------------------------------------------
// Component and table records

struct ComponentRecord {
  PatchSet action_field;
  FeatureVector delta_f;
  double l2_norm = 0.0;

  static ComponentRecord make(const PatchSet& field, FeatureVector delta);
};

struct TableEntry {
  FeatureVector f_hat;
  double reconstruction_error = 0.0;
  bool converged = false;
  std::uint32_t iterations_used = 0;
};

/// Minimal features for every subset of the universe, indexed by mask.
class MinimalFeatureTable {
 public:
  MinimalFeatureTable() = default;
  MinimalFeatureTable(int n, Eigen::Index dim);

  int universe() const { return n_; }
  Eigen::Index dim() const { return dim_; }
  std::size_t capacity() const { return entries_.size(); }

  void set(const PatchSet& s, TableEntry entry);
  bool has(const PatchSet& s) const;
  const TableEntry& at(const PatchSet& s) const;
  const FeatureVector& f_hat(const PatchSet& s) const { return at(s).f_hat; }

  bool complete() const;
  std::vector<PatchSet> missing() const;
  std::vector<PatchSet> unconverged() const;

 private:
  int n_ = 0;
  Eigen::Index dim_ = 0;
  std::vector<std::optional<TableEntry>> entries_;
};

}  // namespace orfactor
