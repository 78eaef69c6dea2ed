#pragma once

#include <array>
#include <cmath>

namespace pointteacher {

enum class Task { kHbb, kObb };

struct Point2D {
  double x = 0.0;
  double y = 0.0;
};

// Wraps an angle into [-pi/2, pi/2). Rectangles are invariant under pi
// rotations, so this is the canonical range.
double normalize_theta(double theta);

// Axis-aligned box, center/size parameterization. Construction rejects
// degenerate sizes (w <= 0 or h <= 0) and non-finite values.
struct HBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;

  HBox() = default;
  HBox(double cx_, double cy_, double w_, double h_);

  double x0() const { return cx - 0.5 * w; }
  double x1() const { return cx + 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

// Rotated box. theta is stored in radians, normalized to [-pi/2, pi/2) at
// construction. theta = 0 coincides with the axis-aligned case.
struct OBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;
  double theta = 0.0;

  OBox() = default;
  OBox(double cx_, double cy_, double w_, double h_, double theta_ = 0.0);

  double area() const { return w * h; }
  std::array<Point2D, 4> corners() const;
  // Axis-aligned bounding box of the rotated rectangle.
  HBox aabb() const;
};

HBox to_hbox(const OBox& b);  // drops theta; callers guard theta == 0 in HBB mode
OBox to_obox(const HBox& b);

double iou_h(const HBox& a, const HBox& b);

// Exact rotated IoU: one rectangle is clipped against the other's four
// half-planes (Sutherland-Hodgman, boundary counted as inside), the
// intersection area comes from the shoelace formula. Box areas use the same
// shoelace route so iou_o(b, b) == 1 exactly.
double iou_o(const OBox& a, const OBox& b);

// Dispatch on task: kHbb ignores theta (boxes are axis-aligned by contract).
double box_iou(const OBox& a, const OBox& b, Task task);

// Boundary-inclusive containment.
bool contains_point(const HBox& b, const Point2D& p);
bool contains_point(const OBox& b, const Point2D& p);

double l1_center_distance(const HBox& b, const Point2D& p);
double l1_center_distance(const OBox& b, const Point2D& p);

}  // namespace pointteacher
