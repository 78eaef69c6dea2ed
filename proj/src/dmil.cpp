#include "pointteacher/dmil.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pointteacher {

namespace {

// Clamp bounds on decoded deltas predicted by the regressor.
constexpr std::array<double, kDeltaDim> kDeltaClamp = {1.0, 1.0, 0.6931471805599453,
                                                       0.6931471805599453,
                                                       0.39269908169872414};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

JitterGrid default_construct_grid() {
  JitterGrid g;
  g.scales = {0.7, 0.85, 1.0, 1.15, 1.3};
  g.offsets = {-0.25, 0.0, 0.25};
  return g;
}

JitterGrid default_extend_grid() {
  JitterGrid g;
  g.scales = {0.9, 1.0, 1.1};
  g.offsets = {-0.1, 0.0, 0.1};
  return g;
}

Bag construct_bag(const OBox& seed, const JitterGrid& grid) {
  Bag bag;
  bag.seed = seed;
  bag.proposals.reserve(static_cast<std::size_t>(grid.size()));
  for (double dt : grid.theta_offsets) {
    for (double s : grid.scales) {
      for (double dy : grid.offsets) {
        for (double dx : grid.offsets) {
          bag.proposals.emplace_back(seed.cx + dx * seed.w, seed.cy + dy * seed.h,
                                     seed.w * s, seed.h * s, seed.theta + dt);
        }
      }
    }
  }
  return bag;
}

ExtendedBag extend_bag(const Bag& bag, const JitterGrid& grid) {
  ExtendedBag ext;
  ext.u1 = static_cast<int>(bag.proposals.size());
  ext.u2 = grid.size();
  ext.boxes.reserve(static_cast<std::size_t>(ext.u1) * ext.u2);
  for (const OBox& p : bag.proposals) {
    const Bag sub = construct_bag(p, grid);
    ext.boxes.insert(ext.boxes.end(), sub.proposals.begin(), sub.proposals.end());
  }
  return ext;
}

ExtendedBag refine_bag(const ExtendedBag& bag, std::span<const double> deltas,
                       Task task) {
  const std::size_t n = bag.boxes.size();
  if (deltas.size() != n * kDeltaDim) {
    throw std::invalid_argument("refine_bag: delta tensor shape mismatch");
  }
  for (double d : deltas) {
    if (!std::isfinite(d)) throw std::invalid_argument("refine_bag: non-finite delta");
  }
  ExtendedBag out;
  out.u1 = bag.u1;
  out.u2 = bag.u2;
  out.boxes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const OBox& b = bag.boxes[i];
    const double* d = deltas.data() + i * kDeltaDim;
    const double theta = task == Task::kObb ? b.theta + d[4] : b.theta;
    out.boxes.emplace_back(b.cx + d[0] * b.w, b.cy + d[1] * b.h,
                           b.w * std::exp(d[2]), b.h * std::exp(d[3]), theta);
  }
  return out;
}

std::array<double, kDeltaDim> encode_deltas(const OBox& from, const OBox& to) {
  return {(to.cx - from.cx) / from.w, (to.cy - from.cy) / from.h,
          std::log(to.w / from.w), std::log(to.h / from.h),
          to.theta - from.theta};
}

BagScores score_bag(const ScoreSheet& sheet, int u1, int u2) {
  if (sheet.count != u1 * u2) {
    throw std::invalid_argument("score_bag: sheet does not match u1*u2 proposals");
  }
  const int classes = sheet.classes;
  BagScores out;
  out.u1 = u1;
  out.u2 = u2;
  out.classes = classes;
  out.s.resize(static_cast<std::size_t>(u1) * u2 * classes);
  out.s_hat.assign(static_cast<std::size_t>(u1) * classes, 0.0);
  for (int i = 0; i < u1; ++i) {
    for (int c = 0; c < classes; ++c) {
      // Stable softmax over the u2 axis for this (i, c).
      double max_logit = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < u2; ++j) {
        max_logit = std::max(max_logit, sheet.ins(i * u2 + j, c));
      }
      double denom = 0.0;
      for (int j = 0; j < u2; ++j) {
        denom += std::exp(sheet.ins(i * u2 + j, c) - max_logit);
      }
      double hat = 0.0;
      for (int j = 0; j < u2; ++j) {
        const double s_ins = std::exp(sheet.ins(i * u2 + j, c) - max_logit) / denom;
        const double s_cls = sigmoid(sheet.cls(i * u2 + j, c));
        const double s = s_cls * s_ins;
        out.s[(static_cast<std::size_t>(i) * u2 + j) * classes + c] = s;
        hat += s;
      }
      out.s_hat[static_cast<std::size_t>(i) * classes + c] = hat;
    }
  }
  return out;
}

DmilClsLoss dmil_cls_loss(std::span<const BagForLoss> bags,
                          const ScoreSheet* negatives, const FocalParams& fp) {
  DmilClsLoss out;
  std::size_t total_logits = 0;
  int total_rows = 0;
  for (const BagForLoss& b : bags) {
    total_logits += static_cast<std::size_t>(b.u1) * b.u2 * b.sheet->classes;
    total_rows += b.u1;
  }
  out.d_cls_logits.assign(total_logits, 0.0);
  out.d_ins_logits.assign(total_logits, 0.0);

  double pos_sum = 0.0;
  std::size_t offset = 0;
  for (const BagForLoss& bag : bags) {
    const ScoreSheet& sheet = *bag.sheet;
    const int classes = sheet.classes;
    BagScores local;
    if (bag.scores == nullptr) local = score_bag(sheet, bag.u1, bag.u2);
    const BagScores& scores = bag.scores ? *bag.scores : local;
    const double row_norm = total_rows > 0 ? 1.0 / total_rows : 0.0;
    for (int i = 0; i < bag.u1; ++i) {
      for (int c = 0; c < classes; ++c) {
        const double p = scores.hat(i, c);
        const ScalarLoss fl = focal_loss(p, c == bag.target_class, fp);
        pos_sum += fl.value;
        if (fl.dp == 0.0) continue;
        const double upstream = fl.dp * row_norm;
        for (int j = 0; j < bag.u2; ++j) {
          const int row = i * bag.u2 + j;
          const double s_cls = sigmoid(sheet.cls(row, c));
          const double s = scores.at(i, j, c);
          const double s_ins = s_cls > 0.0 ? s / s_cls : 0.0;
          const std::size_t at = offset + static_cast<std::size_t>(row) * classes + c;
          // dp/d cls_logit = sigma'(a) * s_ins; dp/d ins_logit = s_ins*(sigma - p).
          out.d_cls_logits[at] += upstream * s_cls * (1.0 - s_cls) * s_ins;
          out.d_ins_logits[at] += upstream * s_ins * (s_cls - p);
        }
      }
    }
    offset += static_cast<std::size_t>(bag.u1) * bag.u2 * classes;
  }
  const double pos_term = total_rows > 0 ? pos_sum / total_rows : 0.0;

  double neg_term = 0.0;
  if (negatives != nullptr && negatives->count > 0) {
    out.d_neg_logits.assign(negatives->cls_logits.size(), 0.0);
    double neg_sum = 0.0;
    const double norm = 1.0 / negatives->count;
    for (int n = 0; n < negatives->count; ++n) {
      for (int c = 0; c < negatives->classes; ++c) {
        const double p = sigmoid(negatives->cls(n, c));
        const ScalarLoss fl = focal_loss(p, false, fp);
        neg_sum += fl.value;
        out.d_neg_logits[static_cast<std::size_t>(n) * negatives->classes + c] =
            fl.dp * p * (1.0 - p) * norm;
      }
    }
    neg_term = neg_sum * norm;
  }
  out.value = pos_term + neg_term;
  return out;
}

DmilRegLoss dmil_reg_loss(const ExtendedBag& bag, std::span<const double> deltas,
                          const OBox& target, double r, Task task) {
  const ExtendedBag refined = refine_bag(bag, deltas, task);
  const std::size_t n = refined.boxes.size();
  if (n == 0) throw std::invalid_argument("dmil_reg_loss: empty bag");
  DmilRegLoss out;
  out.d_deltas.assign(n * kDeltaDim, 0.0);
  const double norm = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const OBox& base = bag.boxes[i];
    const OBox& box = refined.boxes[i];
    const BoxLoss loss = jittering_iou_loss(box, target, r, task);
    out.value += loss.value * norm;
    double* d = out.d_deltas.data() + i * kDeltaDim;
    d[0] = loss.dpred[0] * base.w * norm;
    d[1] = loss.dpred[1] * base.h * norm;
    d[2] = loss.dpred[2] * box.w * norm;  // w' = w * exp(dw)
    d[3] = loss.dpred[3] * box.h * norm;
    d[4] = task == Task::kObb ? loss.dpred[4] * norm : 0.0;
  }
  return out;
}

OBox select_and_fuse(const ExtendedBag& refined, const BagScores& scores,
                     const OBox& seed, int cls, int k, double beta) {
  const int pool = refined.size();
  if (k < 1 || k > pool) {
    throw std::invalid_argument("select_and_fuse: k must be in [1, u1*u2]");
  }
  if (beta < 0.0 || beta > 1.0) {
    throw std::invalid_argument("select_and_fuse: beta must be in [0, 1]");
  }
  if (scores.u1 != refined.u1 || scores.u2 != refined.u2) {
    throw std::invalid_argument("select_and_fuse: scores/bag shape mismatch");
  }
  if (beta == 1.0) return seed;

  std::vector<int> order(static_cast<std::size_t>(pool));
  std::iota(order.begin(), order.end(), 0);
  auto score_of = [&](int flat) {
    return scores.s[static_cast<std::size_t>(flat) * scores.classes + cls];
  };
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = score_of(a);
    const double sb = score_of(b);
    if (sa != sb) return sa > sb;
    return a < b;
  });

  double weight_sum = 0.0;
  for (int i = 0; i < k; ++i) weight_sum += score_of(order[i]);
  OBox fused = seed;
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0, theta = 0.0;
  for (int i = 0; i < k; ++i) {
    const double weight =
        weight_sum > 0.0 ? score_of(order[i]) / weight_sum : 1.0 / k;
    const OBox& b = refined.boxes[static_cast<std::size_t>(order[i])];
    cx += weight * b.cx;
    cy += weight * b.cy;
    w += weight * b.w;
    h += weight * b.h;
    theta += weight * b.theta;
  }
  fused = OBox(beta * seed.cx + (1.0 - beta) * cx, beta * seed.cy + (1.0 - beta) * cy,
               beta * seed.w + (1.0 - beta) * w, beta * seed.h + (1.0 - beta) * h,
               beta * seed.theta + (1.0 - beta) * theta);
  return fused;
}

int top_proposal_index(const BagScores& scores, int cls) {
  int best = 0;
  double best_score = -1.0;
  const int pool = scores.u1 * scores.u2;
  for (int i = 0; i < pool; ++i) {
    const double s = scores.s[static_cast<std::size_t>(i) * scores.classes + cls];
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

BagRegressor BagRegressor::zeros() {
  BagRegressor r;
  r.weights.assign(static_cast<std::size_t>(kFeatureDim) * kDeltaDim, 0.0);
  return r;
}

std::array<double, kDeltaDim> BagRegressor::predict(
    const std::array<double, kFeatureDim>& f) const {
  std::array<double, kDeltaDim> out{};
  for (int t = 0; t < kDeltaDim; ++t) {
    double raw = 0.0;
    for (int d = 0; d < kFeatureDim; ++d) {
      raw += weights[static_cast<std::size_t>(d) * kDeltaDim + t] * f[d];
    }
    out[t] = std::clamp(raw, -kDeltaClamp[t], kDeltaClamp[t]);
  }
  return out;
}

void BagRegressor::accumulate_grad(std::vector<double>& grad,
                                   const std::array<double, kFeatureDim>& f,
                                   std::span<const double> d_delta) const {
  for (int t = 0; t < kDeltaDim; ++t) {
    double raw = 0.0;
    for (int d = 0; d < kFeatureDim; ++d) {
      raw += weights[static_cast<std::size_t>(d) * kDeltaDim + t] * f[d];
    }
    if (std::abs(raw) >= kDeltaClamp[t]) continue;  // clamped: zero derivative
    const double g = d_delta[t];
    if (g == 0.0) continue;
    for (int d = 0; d < kFeatureDim; ++d) {
      grad[static_cast<std::size_t>(d) * kDeltaDim + t] += g * f[d];
    }
  }
}

}  // namespace pointteacher
