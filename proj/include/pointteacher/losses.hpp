#pragma once

#include <array>

#include "pointteacher/geometry.hpp"

namespace pointteacher {

// Probabilities are clamped into [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-6;

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

struct ScalarLoss {
  double value = 0.0;
  double dp = 0.0;  // d value / d p (zero where the clamp is active)
};

// Focal loss on a single probability. positive selects the target in {0,1};
// alpha weights the positive term, (1 - alpha) the negative one.
ScalarLoss focal_loss(double p, bool positive, const FocalParams& fp = {});

struct BoxLoss {
  double value = 0.0;
  // Gradient wrt the predicted box parameters (cx, cy, w, h, theta).
  std::array<double, 5> dpred{};
};

// 1 - IoU. HBB gradients are analytic (piecewise-smooth selection of the
// intersection edges); OBB gradients use central finite differences with a
// step of 1e-4 * sqrt(w*h) (1e-4 rad for theta). Disjoint boxes sit on a
// plateau: value 1, gradient 0.
BoxLoss iou_loss(const OBox& pred, const OBox& target, Task task);

// The target plus its four (+-r on w) x (+-r on h) size perturbations.
// Centers (and theta) stay fixed. Order: unchanged, (-,-), (-,+), (+,-), (+,+).
std::array<OBox, 5> jitter_targets(const OBox& gt, double r);

// iou_loss against gt plus the minimum iou_loss over the jittered targets;
// argmin ties break toward the lowest index. r = 0 reduces to exactly
// 2 * iou_loss.
BoxLoss jittering_iou_loss(const OBox& pred, const OBox& gt, double r, Task task);

double compose_phase1(double reg_sa, double reg_dmil, double cls_dmil,
                      double alpha1 = 0.01, double alpha2 = 0.25);
double compose_phase2(double reg_na, double reg_dmil, double cls_dmil,
                      double alpha1 = 0.01, double alpha2 = 0.25);
double compose_total(double l_cls, double l_sa, double l_na);

}  // namespace pointteacher
