#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pointteacher/geometry.hpp"
#include "test_oracles.hpp"

using namespace pointteacher;

namespace {

OBox random_obox(std::mt19937_64& eng, bool rotated) {
  std::uniform_real_distribution<double> pos(-10.0, 10.0);
  std::uniform_real_distribution<double> size(0.5, 12.0);
  std::uniform_real_distribution<double> angle(-1.5, 1.5);
  return OBox(pos(eng), pos(eng), size(eng), size(eng), rotated ? angle(eng) : 0.0);
}

}  // namespace

TEST_CASE("hbox construction rejects degenerate boxes") {
  CHECK_THROWS_AS(HBox(0, 0, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(HBox(0, 0, 1.0, -2.0), std::invalid_argument);
  CHECK_THROWS_AS(HBox(std::nan(""), 0, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(OBox(0, 0, 1, 1, std::numeric_limits<double>::infinity()),
                  std::invalid_argument);
}

TEST_CASE("theta normalization lands in [-pi/2, pi/2)") {
  constexpr double pi = std::numbers::pi;
  CHECK(normalize_theta(0.0) == doctest::Approx(0.0));
  CHECK(normalize_theta(pi) == doctest::Approx(0.0));
  CHECK(normalize_theta(pi / 2) == doctest::Approx(-pi / 2));
  CHECK(normalize_theta(-pi / 2) == doctest::Approx(-pi / 2));
  CHECK(normalize_theta(pi / 4 + 3 * pi) == doctest::Approx(pi / 4));
  std::mt19937_64 eng(1);
  std::uniform_real_distribution<double> angle(-20.0, 20.0);
  for (int i = 0; i < 200; ++i) {
    const double t = normalize_theta(angle(eng));
    CHECK(t >= -pi / 2);
    CHECK(t < pi / 2);
  }
}

TEST_CASE("iou_h identity, disjoint and hand-computed overlap") {
  const HBox b(3.0, -2.0, 4.0, 5.0);
  CHECK(iou_h(b, b) == 1.0);
  CHECK(iou_h(HBox(0, 0, 2, 2), HBox(10, 10, 2, 2)) == 0.0);
  // Intersection 1x2 = 2, union 8 - 2 = 6.
  CHECK(iou_h(HBox(0, 0, 2, 2), HBox(1, 0, 2, 2)) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("iou_h symmetry and range over random pairs") {
  std::mt19937_64 eng(2);
  for (int i = 0; i < 500; ++i) {
    const HBox a = to_hbox(random_obox(eng, false));
    const HBox b = to_hbox(random_obox(eng, false));
    const double ab = iou_h(a, b);
    const double ba = iou_h(b, a);
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("iou_o identity is exactly one") {
  std::mt19937_64 eng(3);
  for (int i = 0; i < 100; ++i) {
    const OBox b = random_obox(eng, true);
    CHECK(iou_o(b, b) == 1.0);
  }
}

TEST_CASE("iou_o of a unit square against its 45-degree rotation is 1/sqrt(2)") {
  const OBox a(0, 0, 1, 1, 0.0);
  const OBox b(0, 0, 1, 1, std::numbers::pi / 4);
  // Octagon intersection: area 2(sqrt(2)-1), union 2 - that; the ratio
  // simplifies to 1/sqrt(2).
  CHECK(iou_o(a, b) == doctest::Approx(1.0 / std::numbers::sqrt2).epsilon(1e-12));
  std::mt19937_64 eng(4);
  const double mc = ptest::mc_iou(a, b, 1000000, eng);
  CHECK(std::abs(mc - iou_o(a, b)) < 5e-3);
}

TEST_CASE("iou_o equals iou_h at theta zero") {
  std::mt19937_64 eng(5);
  for (int i = 0; i < 500; ++i) {
    const OBox a = random_obox(eng, false);
    const OBox b = random_obox(eng, false);
    CHECK(std::abs(iou_o(a, b) - iou_h(to_hbox(a), to_hbox(b))) <= 1e-12);
  }
}

TEST_CASE("iou_o matches the Monte-Carlo oracle on random rotated pairs") {
  std::mt19937_64 eng(6);
  for (int i = 0; i < 120; ++i) {
    OBox a = random_obox(eng, true);
    OBox b = random_obox(eng, true);
    b.cx = a.cx + std::uniform_real_distribution<double>(-6.0, 6.0)(eng);
    b.cy = a.cy + std::uniform_real_distribution<double>(-6.0, 6.0)(eng);
    const double exact = iou_o(a, b);
    const double mc = ptest::mc_iou(a, b, 200000, eng);
    CHECK(std::abs(exact - mc) < 8e-3);  // 2e5 samples; acceptance uses 1e6
    CHECK(std::abs(iou_o(a, b) - iou_o(b, a)) == 0.0);
  }
}

TEST_CASE("contains_point basics") {
  const HBox h(4, 4, 2, 2);
  CHECK(contains_point(h, Point2D{4, 4}));
  CHECK(contains_point(h, Point2D{5, 5}));        // corner inclusive
  CHECK_FALSE(contains_point(h, Point2D{7, 4}));  // distance w from edge

  const OBox o(0, 0, 2, 1, std::numbers::pi / 4);
  const Point2D p{0.9, 0.9};
  CHECK(contains_point(o, p) == ptest::mc_inside(o, p.x, p.y));
}

TEST_CASE("contains_point agrees with the inverse-rotation oracle") {
  std::mt19937_64 eng(7);
  std::uniform_real_distribution<double> coord(-14.0, 14.0);
  for (int i = 0; i < 2000; ++i) {
    const OBox b = random_obox(eng, true);
    const Point2D p{coord(eng), coord(eng)};
    CHECK(contains_point(b, p) == ptest::mc_inside(b, p.x, p.y));
  }
}

TEST_CASE("box center is always contained") {
  std::mt19937_64 eng(8);
  for (int i = 0; i < 300; ++i) {
    const OBox b = random_obox(eng, true);
    CHECK(contains_point(b, Point2D{b.cx, b.cy}));
  }
}

TEST_CASE("l1 center distance") {
  CHECK(l1_center_distance(HBox(0, 0, 3, 3), Point2D{0, 0}) == 0.0);
  CHECK(l1_center_distance(HBox(0, 0, 3, 3), Point2D{3, 4}) == 7.0);
  // Depends only on centers, not the box size.
  CHECK(l1_center_distance(HBox(0, 0, 1, 9), Point2D{3, 4}) == 7.0);
  CHECK(l1_center_distance(OBox(0, 0, 3, 3, 0.7), Point2D{3, 4}) == 7.0);
}

TEST_CASE("aabb covers the rotated box") {
  std::mt19937_64 eng(9);
  for (int i = 0; i < 200; ++i) {
    const OBox b = random_obox(eng, true);
    const HBox bb = b.aabb();
    for (const Point2D& c : b.corners()) {
      CHECK(c.x >= bb.x0() - 1e-9);
      CHECK(c.x <= bb.x1() + 1e-9);
      CHECK(c.y >= bb.y0() - 1e-9);
      CHECK(c.y <= bb.y1() + 1e-9);
    }
  }
}
