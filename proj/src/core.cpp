#include "orfactor/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace orfactor {

void require_finite(const Eigen::Ref<const Eigen::VectorXd>& v, const std::string& what) {
  if (!v.allFinite()) throw NonFiniteError(what + ": non-finite entries");
}

void require_same_dim(Eigen::Index a, Eigen::Index b, const std::string& what) {
  if (a != b) {
    throw ShapeError(what + ": dimension mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}

// ---------------------------------------------------------------------------

PatchSet::PatchSet(std::uint32_t mask, int n) : mask_(mask), n_(n) {
  if (n < 0 || n > kMaxUniverse) throw ShapeError("PatchSet: universe size out of range");
  if (n < 32 && (mask >> n) != 0) throw ShapeError("PatchSet: mask exceeds universe");
}

PatchSet PatchSet::full(int n) { return PatchSet(n == 0 ? 0u : (~0u >> (32 - n)), n); }

PatchSet PatchSet::single(int i, int n) {
  if (i < 0 || i >= n) throw ShapeError("PatchSet: member out of range");
  return PatchSet(1u << i, n);
}

PatchSet PatchSet::of(std::initializer_list<int> members, int n) {
  std::uint32_t m = 0;
  for (int i : members) m |= single(i, n).mask();
  return PatchSet(m, n);
}

void PatchSet::check_same_universe(const PatchSet& o) const {
  if (n_ != o.n_) throw ShapeError("PatchSet: universe mismatch");
}

PatchSet PatchSet::complement() const { return PatchSet(full(n_).mask_ & ~mask_, n_); }

PatchSet PatchSet::operator|(const PatchSet& o) const {
  check_same_universe(o);
  return PatchSet(mask_ | o.mask_, n_);
}

PatchSet PatchSet::operator&(const PatchSet& o) const {
  check_same_universe(o);
  return PatchSet(mask_ & o.mask_, n_);
}

PatchSet PatchSet::operator-(const PatchSet& o) const {
  check_same_universe(o);
  return PatchSet(mask_ & ~o.mask_, n_);
}

std::vector<int> PatchSet::members() const {
  std::vector<int> out;
  for (int i = 0; i < n_; ++i)
    if (contains(i)) out.push_back(i);
  return out;
}

std::string PatchSet::to_string() const {
  std::ostringstream os;
  os << '{';
  bool first = true;
  for (int i : members()) {
    if (!first) os << ',';
    os << i;
    first = false;
  }
  os << '}';
  return os.str();
}

std::vector<PatchSet> subsets_of(const PatchSet& a) {
  std::vector<PatchSet> out;
  out.reserve(std::size_t{1} << a.size());
  const std::uint32_t m = a.mask();
  std::uint32_t sub = 0;
  // Next submask in ascending order: fill the holes, carry, and re-mask.
  do {
    out.emplace_back(sub, a.universe());
    sub = ((sub | ~m) + 1u) & m;
  } while (sub != 0);
  return out;
}

// ---------------------------------------------------------------------------

PatchLayout::PatchLayout(int grid_rows, int grid_cols, int image_h, int image_w, int channels,
                         std::vector<int> selected)
    : grid_rows_(grid_rows),
      grid_cols_(grid_cols),
      image_h_(image_h),
      image_w_(image_w),
      channels_(channels),
      selected_(std::move(selected)) {
  if (grid_rows <= 0 || grid_cols <= 0 || image_h <= 0 || image_w <= 0 || channels <= 0)
    throw ShapeError("PatchLayout: dimensions must be positive");
  if (image_h % grid_rows != 0 || image_w % grid_cols != 0)
    throw ShapeError("PatchLayout: image size must be divisible by the grid");
  const int cells = grid_rows * grid_cols;
  const int n = static_cast<int>(selected_.size());
  if (n < 1 || n > cells) throw ShapeError("PatchLayout: need 1 <= n <= grid cells");
  if (n > PatchSet::kMaxUniverse) throw ShapeError("PatchLayout: too many selected patches");
  std::vector<int> sorted = selected_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ShapeError("PatchLayout: selected cells must be distinct");
  if (sorted.front() < 0 || sorted.back() >= cells)
    throw ShapeError("PatchLayout: selected cell index out of range");
}

PixelRect PatchLayout::cell_rect(int grid_cell) const {
  const int r = grid_cell / grid_cols_;
  const int c = grid_cell % grid_cols_;
  return {r * cell_h(), c * cell_w(), cell_h(), cell_w()};
}

std::vector<Eigen::Index> PatchLayout::patch_indices(int patch) const {
  const PixelRect rect = patch_rect(patch);
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(rect.rows) * rect.cols * channels_);
  for (int r = rect.row0; r < rect.row0 + rect.rows; ++r)
    for (int c = rect.col0; c < rect.col0 + rect.cols; ++c)
      for (int ch = 0; ch < channels_; ++ch) idx.push_back(offset(r, c, ch));
  return idx;
}

std::vector<Eigen::Index> PatchLayout::region_indices(const PatchSet& s) const {
  if (s.universe() != num_patches()) throw ShapeError("region: PatchSet universe != layout n");
  std::vector<Eigen::Index> idx;
  for (int i : s.members()) {
    auto p = patch_indices(i);
    idx.insert(idx.end(), p.begin(), p.end());
  }
  return idx;
}

// ---------------------------------------------------------------------------

ImageBuffer::ImageBuffer(const PatchLayout& layout)
    : h_(layout.image_h()),
      w_(layout.image_w()),
      c_(layout.channels()),
      pixels_(Eigen::VectorXd::Zero(layout.num_values())) {}

ImageBuffer::ImageBuffer(const PatchLayout& layout, Eigen::VectorXd pixels)
    : h_(layout.image_h()), w_(layout.image_w()), c_(layout.channels()), pixels_(std::move(pixels)) {
  require_same_dim(pixels_.size(), layout.num_values(), "ImageBuffer");
}

bool ImageBuffer::matches(const PatchLayout& layout) const {
  return h_ == layout.image_h() && w_ == layout.image_w() && c_ == layout.channels() &&
         pixels_.size() == layout.num_values();
}

ImageBuffer ImageBuffer::operator-(const ImageBuffer& o) const {
  if (h_ != o.h_ || w_ != o.w_ || c_ != o.c_) throw ShapeError("ImageBuffer: shape mismatch");
  ImageBuffer out = *this;
  out.pixels_ -= o.pixels_;
  return out;
}

ImageBuffer ImageBuffer::operator+(const ImageBuffer& o) const {
  if (h_ != o.h_ || w_ != o.w_ || c_ != o.c_) throw ShapeError("ImageBuffer: shape mismatch");
  ImageBuffer out = *this;
  out.pixels_ += o.pixels_;
  return out;
}

std::vector<double> region_clip(const ImageBuffer& img, const PatchSet& s,
                                const PatchLayout& layout) {
  if (!img.matches(layout)) throw ShapeError("region_clip: image does not match layout");
  const auto idx = layout.region_indices(s);
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(img.pixels()[i]);
  return out;
}

double region_sq_error(const ImageBuffer& a, const ImageBuffer& b, const PatchSet& s,
                       const PatchLayout& layout) {
  if (!a.matches(layout) || !b.matches(layout))
    throw ShapeError("region error: image does not match layout");
  double acc = 0.0;
  for (auto i : layout.region_indices(s)) {
    const double d = a.pixels()[i] - b.pixels()[i];
    acc += d * d;
  }
  return acc;
}

double region_rmse(const ImageBuffer& a, const ImageBuffer& b, const PatchSet& s,
                   const PatchLayout& layout) {
  if (s.is_empty()) throw std::invalid_argument("region_rmse: empty patch set");
  const double count =
      static_cast<double>(s.size()) * layout.cell_pixels() * layout.channels();
  return std::sqrt(region_sq_error(a, b, s, layout) / count);
}

// ---------------------------------------------------------------------------

ComponentRecord ComponentRecord::make(const PatchSet& field, FeatureVector delta) {
  if (field.is_empty()) throw std::invalid_argument("ComponentRecord: empty action field");
  ComponentRecord rec{field, std::move(delta), 0.0};
  rec.l2_norm = rec.delta_f.norm();
  return rec;
}

MinimalFeatureTable::MinimalFeatureTable(int n, Eigen::Index dim)
    : n_(n), dim_(dim), entries_(std::size_t{1} << n) {
  if (n < 0 || n > PatchSet::kMaxUniverse) throw ShapeError("table: universe out of range");
  if (dim <= 0) throw ShapeError("table: dimension must be positive");
}

void MinimalFeatureTable::set(const PatchSet& s, TableEntry entry) {
  if (s.universe() != n_) throw ShapeError("table: universe mismatch");
  require_same_dim(entry.f_hat.size(), dim_, "table entry");
  entries_[s.mask()] = std::move(entry);
}

bool MinimalFeatureTable::has(const PatchSet& s) const {
  return s.universe() == n_ && entries_[s.mask()].has_value();
}

const TableEntry& MinimalFeatureTable::at(const PatchSet& s) const {
  if (!has(s)) throw std::out_of_range("table: missing entry " + s.to_string());
  return *entries_[s.mask()];
}

bool MinimalFeatureTable::complete() const {
  return std::all_of(entries_.begin(), entries_.end(), [](const auto& e) { return e.has_value(); });
}

std::vector<PatchSet> MinimalFeatureTable::missing() const {
  std::vector<PatchSet> out;
  for (std::size_t m = 0; m < entries_.size(); ++m)
    if (!entries_[m]) out.emplace_back(static_cast<std::uint32_t>(m), n_);
  return out;
}

std::vector<PatchSet> MinimalFeatureTable::unconverged() const {
  std::vector<PatchSet> out;
  for (std::size_t m = 0; m < entries_.size(); ++m)
    if (entries_[m] && !entries_[m]->converged)
      out.emplace_back(static_cast<std::uint32_t>(m), n_);
  return out;
}

}  // namespace orfactor
