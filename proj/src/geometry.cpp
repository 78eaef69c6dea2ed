#include "pointteacher/geometry.hpp"

#include <algorithm>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace pointteacher {

namespace {

void check_box(double cx, double cy, double w, double h, double theta) {
  if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(w) ||
      !std::isfinite(h) || !std::isfinite(theta)) {
    throw std::invalid_argument("box fields must be finite");
  }
  if (w <= 0.0 || h <= 0.0) {
    throw std::invalid_argument("box sides must be positive");
  }
}

double cross(const Point2D& o, const Point2D& a, const Point2D& b) {
  return (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
}

// Signed area * 2 (shoelace).
double shoelace2(const std::vector<Point2D>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Point2D& a = p[i];
    const Point2D& b = p[(i + 1) % p.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return s;
}

double shoelace2(const std::array<Point2D, 4>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point2D& a = p[i];
    const Point2D& b = p[(i + 1) % 4];
    s += a.x * b.y - b.x * a.y;
  }
  return s;
}

// Clips a convex polygon against the half-plane left of edge e0->e1.
// Points exactly on the edge (cross == 0) are kept.
std::vector<Point2D> clip_half_plane(const std::vector<Point2D>& poly,
                                     const Point2D& e0, const Point2D& e1) {
  std::vector<Point2D> out;
  out.reserve(poly.size() + 2);
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2D& cur = poly[i];
    const Point2D& nxt = poly[(i + 1) % n];
    const double dc = cross(e0, e1, cur);
    const double dn = cross(e0, e1, nxt);
    const bool cur_in = dc >= 0.0;
    const bool nxt_in = dn >= 0.0;
    if (cur_in) out.push_back(cur);
    if (cur_in != nxt_in) {
      const double t = dc / (dc - dn);
      out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
    }
  }
  return out;
}

}  // namespace

double normalize_theta(double theta) {
  constexpr double pi = std::numbers::pi;
  double t = std::fmod(theta + 0.5 * pi, pi);
  if (t < 0.0) t += pi;
  return t - 0.5 * pi;
}

HBox::HBox(double cx_, double cy_, double w_, double h_)
    : cx(cx_), cy(cy_), w(w_), h(h_) {
  check_box(cx, cy, w, h, 0.0);
}

OBox::OBox(double cx_, double cy_, double w_, double h_, double theta_)
    : cx(cx_), cy(cy_), w(w_), h(h_), theta(normalize_theta(theta_)) {
  check_box(cx, cy, w, h, theta_);
}

std::array<Point2D, 4> OBox::corners() const {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double hw = 0.5 * w;
  const double hh = 0.5 * h;
  // CCW order in math axes: (-hw,-hh), (hw,-hh), (hw,hh), (-hw,hh) rotated.
  return {Point2D{cx - c * hw + s * hh, cy - s * hw - c * hh},
          Point2D{cx + c * hw + s * hh, cy + s * hw - c * hh},
          Point2D{cx + c * hw - s * hh, cy + s * hw + c * hh},
          Point2D{cx - c * hw - s * hh, cy - s * hw + c * hh}};
}

HBox OBox::aabb() const {
  const double c = std::abs(std::cos(theta));
  const double s = std::abs(std::sin(theta));
  const double hw = 0.5 * (w * c + h * s);
  const double hh = 0.5 * (w * s + h * c);
  return HBox(cx, cy, 2.0 * hw, 2.0 * hh);
}

HBox to_hbox(const OBox& b) { return HBox(b.cx, b.cy, b.w, b.h); }

OBox to_obox(const HBox& b) { return OBox(b.cx, b.cy, b.w, b.h, 0.0); }

double iou_h(const HBox& a, const HBox& b) {
  const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double iou_o(const OBox& a, const OBox& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  std::vector<Point2D> poly(ca.begin(), ca.end());
  for (std::size_t i = 0; i < 4 && poly.size() >= 3; ++i) {
    poly = clip_half_plane(poly, cb[i], cb[(i + 1) % 4]);
  }
  if (poly.size() < 3) return 0.0;
  const double inter = 0.5 * std::abs(shoelace2(poly));
  if (inter <= 0.0) return 0.0;
  // Shoelace for the operand areas too, so iou_o(b, b) is exactly 1.
  const double area_a = 0.5 * std::abs(shoelace2(ca));
  const double area_b = 0.5 * std::abs(shoelace2(cb));
  const double clipped = std::min(inter, std::min(area_a, area_b));
  return clipped / (area_a + area_b - clipped);
}

double box_iou(const OBox& a, const OBox& b, Task task) {
  if (task == Task::kHbb) return iou_h(to_hbox(a), to_hbox(b));
  return iou_o(a, b);
}

bool contains_point(const HBox& b, const Point2D& p) {
  return std::abs(p.x - b.cx) <= 0.5 * b.w && std::abs(p.y - b.cy) <= 0.5 * b.h;
}

bool contains_point(const OBox& b, const Point2D& p) {
  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  const double dx = p.x - b.cx;
  const double dy = p.y - b.cy;
  const double u = dx * c + dy * s;
  const double v = -dx * s + dy * c;
  return std::abs(u) <= 0.5 * b.w && std::abs(v) <= 0.5 * b.h;
}

double l1_center_distance(const HBox& b, const Point2D& p) {
  return std::abs(b.cx - p.x) + std::abs(b.cy - p.y);
}

double l1_center_distance(const OBox& b, const Point2D& p) {
  return std::abs(b.cx - p.x) + std::abs(b.cy - p.y);
}

}  // namespace pointteacher
