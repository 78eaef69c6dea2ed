#include "pointteacher/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pointteacher {

namespace {

struct Side {
  double value = 0.0;
  bool from_pred = false;
};

Side take_max(double pred_edge, double target_edge) {
  // Tie goes to the prediction side; kinks are excluded from gradient checks.
  if (pred_edge >= target_edge) return {pred_edge, true};
  return {target_edge, false};
}

Side take_min(double pred_edge, double target_edge) {
  if (pred_edge <= target_edge) return {pred_edge, true};
  return {target_edge, false};
}

BoxLoss iou_loss_hbb(const HBox& a, const HBox& b) {
  BoxLoss out;
  const Side left = take_max(a.x0(), b.x0());
  const Side right = take_min(a.x1(), b.x1());
  const Side bottom = take_max(a.y0(), b.y0());
  const Side top = take_min(a.y1(), b.y1());
  const double iw = right.value - left.value;
  const double ih = top.value - bottom.value;
  if (iw <= 0.0 || ih <= 0.0) {
    out.value = 1.0;
    return out;
  }
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  out.value = 1.0 - inter / uni;

  // d iw / d(cx, w): left edge = cx - w/2, right edge = cx + w/2.
  const double diw_dcx = (right.from_pred ? 1.0 : 0.0) - (left.from_pred ? 1.0 : 0.0);
  const double diw_dw = (right.from_pred ? 0.5 : 0.0) + (left.from_pred ? 0.5 : 0.0);
  const double dih_dcy = (top.from_pred ? 1.0 : 0.0) - (bottom.from_pred ? 1.0 : 0.0);
  const double dih_dh = (top.from_pred ? 0.5 : 0.0) + (bottom.from_pred ? 0.5 : 0.0);

  const std::array<double, 4> dinter = {
      ih * diw_dcx, iw * dih_dcy, ih * diw_dw, iw * dih_dh};
  const std::array<double, 4> darea_pred = {0.0, 0.0, a.h, a.w};
  // IoU = I/U with U = Sa + Sb - I:
  // dIoU = (dI*(U+I) - I*dSa) / U^2;  loss gradient is the negative.
  for (int i = 0; i < 4; ++i) {
    const double diou = (dinter[i] * (uni + inter) - inter * darea_pred[i]) / (uni * uni);
    out.dpred[i] = -diou;
  }
  return out;
}

BoxLoss iou_loss_obb_fd(const OBox& pred, const OBox& target) {
  BoxLoss out;
  const double iou = iou_o(pred, target);
  out.value = 1.0 - iou;
  if (iou <= 0.0) return out;  // plateau
  const double scale = std::sqrt(pred.w * pred.h);
  const std::array<double, 5> steps = {1e-4 * scale, 1e-4 * scale,
                                       1e-4 * scale, 1e-4 * scale, 1e-4};
  std::array<double, 5> params = {pred.cx, pred.cy, pred.w, pred.h, pred.theta};
  for (int i = 0; i < 5; ++i) {
    auto lo = params;
    auto hi = params;
    lo[i] -= steps[i];
    hi[i] += steps[i];
    if (i == 2 || i == 3) {
      lo[i] = std::max(lo[i], 0.5 * steps[i]);  // keep sizes positive
    }
    const OBox plo(lo[0], lo[1], lo[2], lo[3], lo[4]);
    const OBox phi(hi[0], hi[1], hi[2], hi[3], hi[4]);
    const double flo = 1.0 - iou_o(plo, target);
    const double fhi = 1.0 - iou_o(phi, target);
    out.dpred[i] = (fhi - flo) / (hi[i] - lo[i]);
  }
  return out;
}

}  // namespace

ScalarLoss focal_loss(double p, bool positive, const FocalParams& fp) {
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const bool clamped = pc != p;
  ScalarLoss out;
  if (positive) {
    const double one_minus = 1.0 - pc;
    const double mod = std::pow(one_minus, fp.gamma);
    out.value = -fp.alpha * mod * std::log(pc);
    if (!clamped) {
      const double mod_dm1 =
          fp.gamma == 0.0 ? 0.0 : std::pow(one_minus, fp.gamma - 1.0);
      out.dp = fp.alpha * fp.gamma * mod_dm1 * std::log(pc) - fp.alpha * mod / pc;
    }
  } else {
    const double wa = 1.0 - fp.alpha;
    const double mod = std::pow(pc, fp.gamma);
    out.value = -wa * mod * std::log(1.0 - pc);
    if (!clamped) {
      const double mod_dm1 = fp.gamma == 0.0 ? 0.0 : std::pow(pc, fp.gamma - 1.0);
      out.dp = -wa * fp.gamma * mod_dm1 * std::log(1.0 - pc) + wa * mod / (1.0 - pc);
    }
  }
  return out;
}

BoxLoss iou_loss(const OBox& pred, const OBox& target, Task task) {
  if (task == Task::kHbb) return iou_loss_hbb(to_hbox(pred), to_hbox(target));
  return iou_loss_obb_fd(pred, target);
}

std::array<OBox, 5> jitter_targets(const OBox& gt, double r) {
  if (r < 0.0 || r >= 1.0) {
    throw std::invalid_argument("jitter ratio r must be in [0, 1)");
  }
  auto sized = [&](double sw, double sh) {
    return OBox(gt.cx, gt.cy, gt.w * sw, gt.h * sh, gt.theta);
  };
  return {gt, sized(1.0 - r, 1.0 - r), sized(1.0 - r, 1.0 + r),
          sized(1.0 + r, 1.0 - r), sized(1.0 + r, 1.0 + r)};
}

BoxLoss jittering_iou_loss(const OBox& pred, const OBox& gt, double r, Task task) {
  const BoxLoss base = iou_loss(pred, gt, task);
  const auto targets = jitter_targets(gt, r);
  int best = 0;
  double best_value = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double v = 1.0 - box_iou(pred, targets[i], task);
    if (i == 0 || v < best_value) {
      best = i;
      best_value = v;
    }
  }
  const BoxLoss branch = iou_loss(pred, targets[best], task);
  BoxLoss out;
  out.value = base.value + branch.value;
  for (int i = 0; i < 5; ++i) out.dpred[i] = base.dpred[i] + branch.dpred[i];
  return out;
}

double compose_phase1(double reg_sa, double reg_dmil, double cls_dmil,
                      double alpha1, double alpha2) {
  return reg_sa + alpha1 * reg_dmil + alpha2 * cls_dmil;
}

double compose_phase2(double reg_na, double reg_dmil, double cls_dmil,
                      double alpha1, double alpha2) {
  return reg_na + alpha1 * reg_dmil + alpha2 * cls_dmil;
}

double compose_total(double l_cls, double l_sa, double l_na) {
  return l_cls + l_sa + l_na;
}

}  // namespace pointteacher
