// Independent oracles used by the tests: Monte-Carlo areas, finite
// differences, brute-force rankings. These deliberately avoid the library's
// own computation paths.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "pointteacher/geometry.hpp"

namespace ptest {

// Point-in-rotated-rect by inverse rotation, written out independently.
inline bool mc_inside(const pointteacher::OBox& b, double px, double py) {
  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  const double dx = px - b.cx;
  const double dy = py - b.cy;
  const double u = dx * c + dy * s;
  const double v = -dx * s + dy * c;
  return std::abs(u) <= 0.5 * b.w && std::abs(v) <= 0.5 * b.h;
}

// Monte-Carlo IoU estimate: sample inside the overlap of the two AABBs.
inline double mc_iou(const pointteacher::OBox& a, const pointteacher::OBox& b,
                     int samples, std::mt19937_64& eng) {
  const pointteacher::HBox ba = a.aabb();
  const pointteacher::HBox bb = b.aabb();
  const double x0 = std::max(ba.x0(), bb.x0());
  const double x1 = std::min(ba.x1(), bb.x1());
  const double y0 = std::max(ba.y0(), bb.y0());
  const double y1 = std::min(ba.y1(), bb.y1());
  const double area_a = a.w * a.h;
  const double area_b = b.w * b.h;
  if (x1 <= x0 || y1 <= y0) return 0.0;
  std::uniform_real_distribution<double> ux(x0, x1);
  std::uniform_real_distribution<double> uy(y0, y1);
  long long hits = 0;
  for (int i = 0; i < samples; ++i) {
    const double px = ux(eng);
    const double py = uy(eng);
    if (mc_inside(a, px, py) && mc_inside(b, px, py)) ++hits;
  }
  const double inter = (x1 - x0) * (y1 - y0) * static_cast<double>(hits) / samples;
  return inter / (area_a + area_b - inter);
}

// Central finite difference of a scalar function of one coordinate.
template <typename F>
double central_diff(F&& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace ptest
