#include <doctest.h>

#include <algorithm>

#include "orfactor/core.hpp"

using namespace orfactor;

namespace {

// 2x2 grid of 2x2 cells, two channels, cells 3 and 0 selected in that order.
PatchLayout small_layout() { return PatchLayout(2, 2, 4, 4, 2, {3, 0}); }

ImageBuffer ramp(const PatchLayout& layout) {
  return ImageBuffer(layout, Eigen::VectorXd::LinSpaced(layout.num_values(), 0.0, layout.num_values() - 1.0));
}

}  // namespace

TEST_CASE("patch set algebra") {
  const PatchSet a = PatchSet::of({0, 2}, 4);
  const PatchSet b = PatchSet::of({2, 3}, 4);
  CHECK(a.mask() == 0b0101u);
  CHECK((a | b).mask() == 0b1101u);
  CHECK((a & b).mask() == 0b0100u);
  CHECK((a - b).mask() == 0b0001u);
  CHECK(a.complement().mask() == 0b1010u);
  CHECK(a.size() == 2);
  CHECK(a.intersects(b));
  CHECK_FALSE(a.is_subset_of(b));
  CHECK(PatchSet::empty(4).is_subset_of(a));
  CHECK(a.members() == std::vector<int>{0, 2});
  CHECK(a.to_string() == "{0,2}");
  CHECK(PatchSet::empty(3).to_string() == "{}");
  CHECK(PatchSet::full(6).mask() == 63u);
  CHECK(PatchSet::full(16).mask() == 0xffffu);
}

TEST_CASE("patch set rejects bad masks and universes") {
  CHECK_THROWS_AS(PatchSet(0b1000u, 3), ShapeError);
  CHECK_THROWS_AS(PatchSet(0, 17), ShapeError);
  CHECK_THROWS_AS(PatchSet::single(3, 3), ShapeError);
  CHECK_THROWS_AS(PatchSet::of({0}, 3) | PatchSet::of({0}, 4), ShapeError);
}

TEST_CASE("subsets come out in ascending mask order") {
  const PatchSet a = PatchSet::of({0, 2, 3}, 5);
  const auto subs = subsets_of(a);
  REQUIRE(subs.size() == 8);
  std::vector<std::uint32_t> masks;
  for (const auto& s : subs) masks.push_back(s.mask());
  CHECK(masks == std::vector<std::uint32_t>{0b0000, 0b0001, 0b0100, 0b0101, 0b1000, 0b1001, 0b1100, 0b1101});
  CHECK(subsets_of(PatchSet::empty(5)).size() == 1);
}

TEST_CASE("layout geometry") {
  const PatchLayout l = small_layout();
  CHECK(l.cell_h() == 2);
  CHECK(l.cell_pixels() == 4);
  CHECK(l.num_patches() == 2);
  CHECK(l.num_values() == 32);
  // Patch 0 is grid cell 3: rows 2..3, cols 2..3.
  const auto idx = l.patch_indices(0);
  REQUIRE(idx.size() == 8);
  CHECK(idx.front() == l.offset(2, 2, 0));
  CHECK(idx[1] == l.offset(2, 2, 1));
  CHECK(idx.back() == l.offset(3, 3, 1));
  CHECK_THROWS_AS(PatchLayout(2, 2, 5, 4, 1, {0}), ShapeError);
  CHECK_THROWS_AS(PatchLayout(2, 2, 4, 4, 1, {0, 0}), ShapeError);
  CHECK_THROWS_AS(PatchLayout(2, 2, 4, 4, 1, {4}), ShapeError);
}

TEST_CASE("region clip follows selected-index order, row-major pixels") {
  const PatchLayout l = small_layout();
  const ImageBuffer img = ramp(l);
  const auto both = region_clip(img, PatchSet::full(2), l);
  const auto p0 = region_clip(img, PatchSet::single(0, 2), l);
  const auto p1 = region_clip(img, PatchSet::single(1, 2), l);
  REQUIRE(both.size() == 16);
  CHECK(std::equal(p0.begin(), p0.end(), both.begin()));
  CHECK(std::equal(p1.begin(), p1.end(), both.begin() + 8));
  // Cell 0, pixel (0,1), channel 1 -> flat offset (0*4 + 1)*2 + 1 = 3.
  CHECK(p1[3] == 3.0);
  CHECK(region_clip(img, PatchSet::empty(2), l).empty());
}

TEST_CASE("region rmse is per scalar over |S| L C values") {
  const PatchLayout l = small_layout();
  ImageBuffer a(l), b(l);
  for (auto i : l.patch_indices(1)) b.pixels()[i] = 2.0;
  CHECK(region_sq_error(a, b, PatchSet::single(1, 2), l) == doctest::Approx(8 * 4.0));
  CHECK(region_rmse(a, b, PatchSet::single(1, 2), l) == doctest::Approx(2.0));
  CHECK(region_rmse(a, b, PatchSet::full(2), l) == doctest::Approx(std::sqrt(2.0)));
  CHECK(region_rmse(a, b, PatchSet::single(0, 2), l) == 0.0);
  CHECK_THROWS(region_rmse(a, b, PatchSet::empty(2), l));
}

TEST_CASE("component record norm") {
  FeatureVector d(3);
  d << 3.0, 0.0, -4.0;
  const auto rec = ComponentRecord::make(PatchSet::single(0, 2), d);
  CHECK(rec.l2_norm == doctest::Approx(5.0).epsilon(1e-12));
  CHECK_THROWS(ComponentRecord::make(PatchSet::empty(2), d));
}

TEST_CASE("table tracks missing and unconverged entries") {
  MinimalFeatureTable t(2, 3);
  CHECK_FALSE(t.complete());
  CHECK(t.missing().size() == 4);
  t.set(PatchSet(0, 2), TableEntry{FeatureVector::Zero(3), 0.0, true, 0});
  t.set(PatchSet(1, 2), TableEntry{FeatureVector::Ones(3), 0.5, false, 10});
  CHECK(t.missing().size() == 2);
  REQUIRE(t.unconverged().size() == 1);
  CHECK(t.unconverged()[0].mask() == 1u);
  CHECK_THROWS_AS(t.at(PatchSet(3, 2)), std::out_of_range);
  CHECK_THROWS_AS(t.set(PatchSet(2, 2), TableEntry{FeatureVector::Zero(4), 0.0, true, 0}), ShapeError);
}
