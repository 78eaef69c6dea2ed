#include "pointteacher/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pointteacher {

std::array<double, kFeatureDim> proposal_features(const OBox& box,
                                                  const SceneContext& ctx) {
  std::array<double, kFeatureDim> f{};
  f[0] = 1.0;
  f[4] = std::log(std::sqrt(box.w * box.h) / 8.0);
  f[5] = std::log(box.w / box.h);
  double mask_iou = 0.0;
  for (const OBox& region : ctx.mask_regions) {
    mask_iou = std::max(mask_iou, box_iou(box, region, ctx.task));
  }
  f[3] = mask_iou;
  if (ctx.stats == nullptr) return f;

  const HBox bb = ctx.task == Task::kHbb ? to_hbox(box) : box.aabb();
  const auto inside = ctx.stats->query(bb.x0(), bb.y0(), bb.x1(), bb.y1());
  if (inside.pixels > 0.0) {
    f[1] = inside.sum / inside.pixels / Signal::kObjectLevel;
  }
  const auto center = ctx.stats->query(box.cx - 0.25 * bb.w, box.cy - 0.25 * bb.h,
                                       box.cx + 0.25 * bb.w, box.cy + 0.25 * bb.h);
  if (center.pixels > 0.0) {
    f[2] = center.sum / center.pixels / Signal::kObjectLevel;
  }
  // Anomaly statistics over a 2x window: where does local evidence (object
  // occupancy or a masked hole) sit relative to the proposal?
  const auto window = ctx.stats->query(box.cx - bb.w, box.cy - bb.h,
                                       box.cx + bb.w, box.cy + bb.h);
  if (window.dev > 1e-9) {
    f[6] = std::clamp((window.dev_x / window.dev - box.cx) / box.w, -2.0, 2.0);
    f[7] = std::clamp((window.dev_y / window.dev - box.cy) / box.h, -2.0, 2.0);
    f[8] = std::clamp(std::sqrt(window.blob) / std::sqrt(box.w * box.h), 0.0, 4.0);
  }
  return f;
}

OracleScorer::OracleScorer(const Dataset* data, double noise_sigma)
    : data_(data), sigma_(noise_sigma) {
  if (noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
}

ScoreSheet OracleScorer::score(std::span<const OBox> proposals,
                               const SceneContext& ctx, RngStream& rng) const {
  const Scene* scene = data_->find_scene(ctx.scene_id);
  if (scene == nullptr) {
    throw std::runtime_error("oracle scorer: unknown scene id `" + ctx.scene_id + "`");
  }
  const int classes = static_cast<int>(data_->classes.size());
  ScoreSheet sheet;
  sheet.count = static_cast<int>(proposals.size());
  sheet.classes = classes;
  sheet.cls_logits.resize(proposals.size() * static_cast<std::size_t>(classes));
  sheet.ins_logits.resize(proposals.size() * static_cast<std::size_t>(classes));
  std::normal_distribution<double> noise(0.0, sigma_ > 0.0 ? sigma_ : 1.0);
  std::vector<double> best(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    std::fill(best.begin(), best.end(), 0.0);
    for (const SceneObject& obj : scene->objects) {
      const double iou = box_iou(proposals[i], obj.gt, ctx.task);
      double& slot = best[static_cast<std::size_t>(obj.class_id)];
      slot = std::max(slot, iou);
    }
    for (int c = 0; c < classes; ++c) {
      const double p = std::clamp(best[static_cast<std::size_t>(c)], kIouClamp,
                                  1.0 - kIouClamp);
      const double logit = std::log(p / (1.0 - p));
      const double n_cls = sigma_ > 0.0 ? noise(rng.engine()) : 0.0;
      const double n_ins = sigma_ > 0.0 ? noise(rng.engine()) : 0.0;
      sheet.cls_logits[i * classes + c] = logit + n_cls;
      sheet.ins_logits[i * classes + c] = logit + n_ins;
    }
  }
  return sheet;
}

double LinearHead::apply(const std::array<double, kFeatureDim>& f, int c,
                         int classes) const {
  double v = bias[c];
  for (int d = 0; d < kFeatureDim; ++d) {
    v += weights[static_cast<std::size_t>(d) * classes + c] * f[d];
  }
  return v;
}

LinearScorerParams LinearScorerParams::zeros(int classes) {
  LinearScorerParams p;
  p.classes = classes;
  p.cls.weights.assign(static_cast<std::size_t>(kFeatureDim) * classes, 0.0);
  p.cls.bias.assign(static_cast<std::size_t>(classes), 0.0);
  p.ins.weights = p.cls.weights;
  p.ins.bias = p.cls.bias;
  return p;
}

ScoreSheet linear_score(const LinearScorerParams& params,
                        std::span<const std::array<double, kFeatureDim>> feats) {
  if (params.classes <= 0 ||
      params.cls.weights.size() != static_cast<std::size_t>(kFeatureDim) * params.classes ||
      params.ins.weights.size() != params.cls.weights.size() ||
      params.cls.bias.size() != static_cast<std::size_t>(params.classes) ||
      params.ins.bias.size() != params.cls.bias.size()) {
    throw std::invalid_argument("linear scorer parameter dimensions are inconsistent");
  }
  ScoreSheet sheet;
  sheet.count = static_cast<int>(feats.size());
  sheet.classes = params.classes;
  sheet.cls_logits.resize(feats.size() * static_cast<std::size_t>(params.classes));
  sheet.ins_logits.resize(feats.size() * static_cast<std::size_t>(params.classes));
  for (std::size_t i = 0; i < feats.size(); ++i) {
    for (int c = 0; c < params.classes; ++c) {
      sheet.cls_logits[i * params.classes + c] = params.cls.apply(feats[i], c, params.classes);
      sheet.ins_logits[i * params.classes + c] = params.ins.apply(feats[i], c, params.classes);
    }
  }
  return sheet;
}

ScoreSheet LinearScorer::score(std::span<const OBox> proposals,
                               const SceneContext& ctx, RngStream&) const {
  std::vector<std::array<double, kFeatureDim>> feats;
  feats.reserve(proposals.size());
  for (const OBox& b : proposals) feats.push_back(proposal_features(b, ctx));
  return linear_score(params_, feats);
}

void sgd_step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != grad.size()) {
    throw std::invalid_argument("sgd_step: parameter/gradient size mismatch");
  }
  if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be > 0");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
}

void sgd_step(LinearScorerParams& params, const LinearScorerParams& grad, double lr) {
  sgd_step(params.cls.weights, grad.cls.weights, lr);
  sgd_step(params.cls.bias, grad.cls.bias, lr);
  sgd_step(params.ins.weights, grad.ins.weights, lr);
  sgd_step(params.ins.bias, grad.ins.bias, lr);
}

void accumulate_linear_grad(LinearHead& grad_head,
                            std::span<const std::array<double, kFeatureDim>> feats,
                            std::span<const double> d_logits, int classes) {
  for (std::size_t i = 0; i < feats.size(); ++i) {
    for (int c = 0; c < classes; ++c) {
      const double g = d_logits[i * classes + c];
      if (g == 0.0) continue;
      grad_head.bias[c] += g;
      for (int d = 0; d < kFeatureDim; ++d) {
        grad_head.weights[static_cast<std::size_t>(d) * classes + c] += g * feats[i][d];
      }
    }
  }
}

}  // namespace pointteacher
