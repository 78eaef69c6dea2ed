#include "pointteacher/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "pointteacher/version.hpp"

namespace pointteacher {

using nlohmann::json;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct HeadClsLoss {
  double value = 0.0;
  std::vector<double> grad;  // cells * classes
  int positives = 0;
};

// Focal loss over the full per-cell class table; positives are (cell, class)
// pairs from the assignment, everything else is background. Value and
// gradient are normalized by max(1, #positives).
HeadClsLoss head_cls_loss(const GridDetectorParams& params,
                          const std::vector<std::pair<int, int>>& positives,
                          const FocalParams& fp) {
  HeadClsLoss out;
  out.grad.assign(params.cls_logits.size(), 0.0);
  std::vector<int> target(params.cls_logits.size(), 0);
  for (const auto& [cell, cls] : positives) {
    if (cell < 0) continue;
    target[static_cast<std::size_t>(cell) * params.classes + cls] = 1;
    ++out.positives;
  }
  const double norm = 1.0 / std::max(1, out.positives);
  double sum = 0.0;
  for (std::size_t i = 0; i < params.cls_logits.size(); ++i) {
    const double p = sigmoid(params.cls_logits[i]);
    const ScalarLoss fl = focal_loss(p, target[i] != 0, fp);
    sum += fl.value;
    out.grad[i] = fl.dp * p * (1.0 - p) * norm;
  }
  out.value = sum * norm;
  return out;
}

std::vector<OBox> sample_negatives(double width, double height, int count,
                                   std::span<const OBox> seeds, Task task,
                                   double min_side, double max_side, RngStream& rng) {
  std::vector<OBox> out;
  out.reserve(static_cast<std::size_t>(count));
  const double side_cap = std::max(1.0, std::min(width, height) - 1.0);
  const double lo = std::min(min_side, side_cap);
  const double hi = std::min(max_side, side_cap);
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const double w = rng.uniform(lo, hi);
      const double h = rng.uniform(lo, hi);
      const double cx = rng.uniform(0.5 * w, width - 0.5 * w);
      const double cy = rng.uniform(0.5 * h, height - 0.5 * h);
      const OBox candidate(cx, cy, w, h, 0.0);
      bool ok = true;
      for (const OBox& seed : seeds) {
        if (box_iou(candidate, seed, task) >= 0.1) {
          ok = false;
          break;
        }
      }
      if (ok) {
        out.push_back(candidate);
        placed = true;
      }
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

RefineOutcome dmil_refine(const OBox& seed, int cls, const RunConfig& cfg,
                          const BagRegressor& regressor, ProposalScorer& scorer,
                          const SceneContext& ctx, RngStream& rng) {
  RefineOutcome out;
  const Bag bag = construct_bag(seed, cfg.construct_grid);
  out.extended = extend_bag(bag, cfg.extend_grid);
  const std::size_t n = out.extended.boxes.size();
  out.features.reserve(n);
  out.deltas.resize(n * kDeltaDim);
  for (std::size_t i = 0; i < n; ++i) {
    out.features.push_back(proposal_features(out.extended.boxes[i], ctx));
    const auto d = regressor.predict(out.features.back());
    std::copy(d.begin(), d.end(), out.deltas.begin() + i * kDeltaDim);
  }
  const ExtendedBag refined_bag = refine_bag(out.extended, out.deltas, ctx.task);
  out.sheet = scorer.score(refined_bag.boxes, ctx, rng);
  out.scores = score_bag(out.sheet, out.extended.u1, out.extended.u2);
  out.refined = select_and_fuse(refined_bag, out.scores, seed, cls, cfg.k3, cfg.beta);
  const int top = top_proposal_index(out.scores, cls);
  out.top_class_prob = sigmoid(out.sheet.cls(top, cls));
  return out;
}

Trainer::Trainer(const RunConfig& cfg, std::vector<TrainScene> scenes,
                 int class_count, ProposalScorer* external_scorer)
    : cfg_(cfg),
      task_(cfg.task_enum()),
      classes_(class_count),
      scenes_(std::move(scenes)),
      external_scorer_(external_scorer),
      rng_scene_(cfg.seed, "scene-sampling"),
      rng_mask_(cfg.seed, "masks"),
      rng_neg_(cfg.seed, "negatives"),
      rng_score_(cfg.seed, "scorer-noise") {
  if (task_ != Task::kHbb) {
    throw std::invalid_argument("gradient training supports the hbb task only");
  }
  if (cfg_.scorer == "linear") {
    linear_scorer_ = std::make_unique<LinearScorer>(LinearScorerParams::zeros(classes_));
    linear_velocity_ = LinearScorerParams::zeros(classes_);
  } else if (external_scorer_ == nullptr) {
    throw std::invalid_argument("oracle scorer instance required");
  }
  model_.regressor_velocity.assign(model_.regressor.weights.size(), 0.0);
  for (TrainScene& scene : scenes_) {
    SceneState st;
    const GridShape shape = grid_shape_for(scene.width, scene.height, cfg_.stride);
    st.student = GridDetectorParams::init(shape, classes_);
    st.teacher = st.student;
    st.cls_velocity.assign(st.student.cls_logits.size(), 0.0);
    st.box_velocity.assign(st.student.box_params.size(), 0.0);
    const FeatureGrid pyramid = build_feature_grid(scene.base_signal);
    st.aggregated = fpn_aggregate(pyramid, model_.fpn);
    if (st.aggregated.width != shape.cells_x || st.aggregated.height != shape.cells_y) {
      throw std::logic_error("aggregated map does not match the head grid");
    }
    model_.scenes.emplace(scene.id, std::move(st));
  }
}

ProposalScorer& Trainer::active_scorer() {
  if (linear_scorer_) return *linear_scorer_;
  return *external_scorer_;
}

double Trainer::lr_at(long long iter) const {
  double lr = cfg_.lr;
  for (double milestone : cfg_.lr_decay_milestones) {
    if (static_cast<double>(iter) >= milestone * cfg_.iterations) {
      lr *= cfg_.lr_decay_factor;
    }
  }
  return lr;
}

void Trainer::sgd_update(std::vector<double>& params, std::vector<double>& velocity,
                         const std::vector<double>& grad, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = cfg_.sgd_momentum * velocity[i] + grad[i];
    params[i] -= lr * velocity[i];
  }
}

void Trainer::ema_all() {
  for (auto& [id, st] : model_.scenes) {
    ema_update(st.teacher, st.student, cfg_.ema_momentum);
  }
}

void Trainer::phase1_step(const TrainScene& scene) {
  SceneState& st = model_.scenes.at(scene.id);
  Scene shell;
  shell.id = scene.id;
  shell.width = scene.width;
  shell.height = scene.height;
  const std::vector<OBox> masks = sample_mask_regions(
      shell, cfg_.mask_count, cfg_.mask_min_side, cfg_.mask_max_side, task_, rng_mask_);

  Signal sig = scene.base_signal;
  apply_mask(sig, masks);
  const SignalStats stats = SignalStats::build(sig);
  SceneContext ctx{scene.id, task_, scene.width, scene.height, &sig, &stats, masks};

  // Masked-region regression: each region supervises its nearest grid cell.
  std::vector<Point2D> mask_centers;
  mask_centers.reserve(masks.size());
  for (const OBox& m : masks) mask_centers.push_back({m.cx, m.cy});
  const std::vector<int> mask_cells = assign_labels(mask_centers, st.student.shape);
  int assigned = 0;
  for (int cell : mask_cells) assigned += cell >= 0 ? 1 : 0;

  std::vector<double> box_grad(st.student.box_params.size(), 0.0);
  double l_sa_reg = 0.0;
  if (assigned > 0) {
    const double norm = 1.0 / assigned;
    for (std::size_t i = 0; i < masks.size(); ++i) {
      const int cell = mask_cells[i];
      if (cell < 0) continue;
      const OBox decoded = decoded_box(st.student, cell);
      const BoxLoss bl = jittering_iou_loss(decoded, masks[i], cfg_.jitter_r, task_);
      l_sa_reg += bl.value * norm;
      double* g = box_grad.data() + static_cast<std::size_t>(cell) * 4;
      g[0] += bl.dpred[0] * cfg_.stride * norm;
      g[1] += bl.dpred[1] * cfg_.stride * norm;
      g[2] += bl.dpred[2] * decoded.w * norm;
      g[3] += bl.dpred[3] * decoded.h * norm;
    }
  }

  // DMIL regression on mask bags (Bag Construction/Extension + regressor).
  std::vector<double> reg_grad(model_.regressor.weights.size(), 0.0);
  double l_dmil_reg = 0.0;
  if (!masks.empty()) {
    const double norm = 1.0 / static_cast<double>(masks.size());
    for (const OBox& mask : masks) {
      const Bag bag = construct_bag(mask, cfg_.construct_grid);
      const ExtendedBag ext = extend_bag(bag, cfg_.extend_grid);
      std::vector<std::array<double, kFeatureDim>> feats;
      feats.reserve(ext.boxes.size());
      std::vector<double> deltas(ext.boxes.size() * kDeltaDim);
      for (std::size_t i = 0; i < ext.boxes.size(); ++i) {
        feats.push_back(proposal_features(ext.boxes[i], ctx));
        const auto d = model_.regressor.predict(feats.back());
        std::copy(d.begin(), d.end(), deltas.begin() + i * kDeltaDim);
      }
      const DmilRegLoss res = dmil_reg_loss(ext, deltas, mask, cfg_.jitter_r, task_);
      l_dmil_reg += res.value * norm;
      for (std::size_t i = 0; i < ext.boxes.size(); ++i) {
        std::array<double, kDeltaDim> scaled;
        for (int t = 0; t < kDeltaDim; ++t) {
          scaled[static_cast<std::size_t>(t)] = res.d_deltas[i * kDeltaDim + t] * norm;
        }
        model_.regressor.accumulate_grad(reg_grad, feats[i], scaled);
      }
    }
  }

  // DMIL classification on point-seeded bags plus a negative set.
  std::vector<RefineOutcome> outcomes;
  std::vector<BagForLoss> bags;
  std::vector<OBox> seeds;
  outcomes.reserve(scene.points.size());
  for (const PointAnnotation& point : scene.points) {
    const OBox seed(point.p.x, point.p.y, cfg_.seed_box_size, cfg_.seed_box_size, 0.0);
    seeds.push_back(seed);
    outcomes.push_back(dmil_refine(seed, point.class_id, cfg_, model_.regressor,
                                   active_scorer(), ctx, rng_score_));
  }
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    bags.push_back({&outcomes[i].sheet, outcomes[i].extended.u1,
                    outcomes[i].extended.u2, scene.points[i].class_id,
                    &outcomes[i].scores});
  }
  const std::vector<OBox> negatives =
      sample_negatives(scene.width, scene.height, cfg_.u_neg, seeds, task_,
                       cfg_.mask_min_side, cfg_.mask_max_side, rng_neg_);
  ScoreSheet neg_sheet;
  if (!negatives.empty()) {
    neg_sheet = active_scorer().score(negatives, ctx, rng_score_);
  }
  const DmilClsLoss cls_res =
      dmil_cls_loss(bags, negatives.empty() ? nullptr : &neg_sheet, cfg_.focal());

  // Detector-head classification from the annotated points.
  std::vector<Point2D> point_centers;
  for (const PointAnnotation& p : scene.points) point_centers.push_back(p.p);
  const std::vector<int> point_cells = assign_labels(point_centers, st.student.shape);
  std::vector<std::pair<int, int>> positives;
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    positives.push_back({point_cells[i], scene.points[i].class_id});
  }
  const HeadClsLoss head = head_cls_loss(st.student, positives, cfg_.focal());

  const double l_sa = compose_phase1(l_sa_reg, l_dmil_reg, cls_res.value,
                                     cfg_.alpha1, cfg_.alpha2);
  losses_.push_back({iter_, compose_total(head.value, l_sa, 0.0), head.value, l_sa,
                     0.0, static_cast<int>(scene.points.size())});

  const double lr = lr_at(iter_);
  sgd_update(st.student.cls_logits, st.cls_velocity, head.grad, lr * cfg_.lr_cls_scale);
  sgd_update(st.student.box_params, st.box_velocity, box_grad, lr * cfg_.lr_box_scale);
  for (double& g : reg_grad) g *= cfg_.alpha1;
  sgd_update(model_.regressor.weights, model_.regressor_velocity, reg_grad,
             lr * cfg_.lr_dmil_reg_scale);
  if (linear_scorer_) {
    LinearScorerParams grad = LinearScorerParams::zeros(classes_);
    std::size_t offset = 0;
    for (std::size_t b = 0; b < bags.size(); ++b) {
      const std::size_t n = outcomes[b].sheet.cls_logits.size();
      accumulate_linear_grad(grad.cls, outcomes[b].features,
                             std::span<const double>(cls_res.d_cls_logits.data() + offset, n),
                             classes_);
      accumulate_linear_grad(grad.ins, outcomes[b].features,
                             std::span<const double>(cls_res.d_ins_logits.data() + offset, n),
                             classes_);
      offset += n;
    }
    if (!negatives.empty() && !cls_res.d_neg_logits.empty()) {
      std::vector<std::array<double, kFeatureDim>> neg_feats;
      neg_feats.reserve(negatives.size());
      for (const OBox& b : negatives) neg_feats.push_back(proposal_features(b, ctx));
      accumulate_linear_grad(grad.cls, neg_feats, cls_res.d_neg_logits, classes_);
    }
    auto scale = [&](std::vector<double>& v) {
      for (double& g : v) g *= cfg_.alpha2;
    };
    scale(grad.cls.weights);
    scale(grad.cls.bias);
    scale(grad.ins.weights);
    scale(grad.ins.bias);
    const double slr = lr * cfg_.lr_scorer_scale;
    auto step = [&](std::vector<double>& p, std::vector<double>& v,
                    const std::vector<double>& g) { sgd_update(p, v, g, slr); };
    step(linear_scorer_->params().cls.weights, linear_velocity_->cls.weights, grad.cls.weights);
    step(linear_scorer_->params().cls.bias, linear_velocity_->cls.bias, grad.cls.bias);
    step(linear_scorer_->params().ins.weights, linear_velocity_->ins.weights, grad.ins.weights);
    step(linear_scorer_->params().ins.bias, linear_velocity_->ins.bias, grad.ins.bias);
  }
  ema_all();
}

void Trainer::phase2_step(const TrainScene& scene, const EvolutionSink& sink) {
  SceneState& st = model_.scenes.at(scene.id);
  const SignalStats stats = SignalStats::build(scene.base_signal);
  SceneContext ctx{scene.id, task_, scene.width, scene.height,
                   &scene.base_signal, &stats, {}};

  const std::vector<Prediction> preds = predict(st.teacher, cfg_.pred_threshold);
  const std::vector<PointMatch> matches =
      match_points(scene.points, preds, cfg_.k1, cfg_.k2, task_, cfg_.focal());

  struct PerPoint {
    int index = 0;
    bool matched = false;
    OBox coarse;
    OBox refined;
    RefineOutcome outcome;
    bool has_outcome = false;
  };
  std::vector<PerPoint> rows;
  rows.reserve(scene.points.size());
  std::vector<OBox> coarse_seeds;
  for (std::size_t j = 0; j < scene.points.size(); ++j) {
    PerPoint row;
    row.index = static_cast<int>(j);
    const PointMatch& match = matches[j];
    if (!match.selected.empty()) {
      row.matched = true;
      std::vector<OBox> boxes;
      std::vector<double> scores;
      for (const MatchCandidate& cand : match.selected) {
        boxes.push_back(preds[static_cast<std::size_t>(cand.pred)].box);
        scores.push_back(cand.score);
      }
      row.coarse = fuse_coarse(boxes, scores);
      coarse_seeds.push_back(row.coarse);
      if (cfg_.dmil_refine) {
        row.outcome = dmil_refine(row.coarse, scene.points[j].class_id, cfg_,
                                  model_.regressor, active_scorer(), ctx, rng_score_);
        row.refined = row.outcome.refined;
        row.has_outcome = true;
      } else {
        row.refined = row.coarse;
      }
    }
    rows.push_back(std::move(row));
  }

  // Label assignment: pseudo-box centers for matched points, the raw point
  // for unmatched ones (classification supervision continues either way).
  std::vector<Point2D> centers;
  for (const PerPoint& row : rows) {
    centers.push_back(row.matched ? Point2D{row.refined.cx, row.refined.cy}
                                  : scene.points[static_cast<std::size_t>(row.index)].p);
  }
  const std::vector<int> cells = assign_labels(centers, st.student.shape);
  std::vector<std::pair<int, int>> positives;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    positives.push_back({cells[j], scene.points[j].class_id});
  }
  const HeadClsLoss head = head_cls_loss(st.student, positives, cfg_.focal());

  // Regression of the detection head toward the refined pseudo boxes.
  std::vector<double> box_grad(st.student.box_params.size(), 0.0);
  double l_na_reg = 0.0;
  int matched_assigned = 0;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j].matched && cells[j] >= 0) ++matched_assigned;
  }
  if (matched_assigned > 0) {
    const double norm = 1.0 / matched_assigned;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (!rows[j].matched || cells[j] < 0) continue;
      const OBox decoded = decoded_box(st.student, cells[j]);
      const BoxLoss bl = jittering_iou_loss(decoded, rows[j].refined, cfg_.jitter_r, task_);
      l_na_reg += bl.value * norm;
      double* g = box_grad.data() + static_cast<std::size_t>(cells[j]) * 4;
      g[0] += bl.dpred[0] * cfg_.stride * norm;
      g[1] += bl.dpred[1] * cfg_.stride * norm;
      g[2] += bl.dpred[2] * decoded.w * norm;
      g[3] += bl.dpred[3] * decoded.h * norm;
    }
  }

  // DMIL losses over the refinement bags (targets are the refined boxes).
  std::vector<double> reg_grad(model_.regressor.weights.size(), 0.0);
  double l_dmil_reg = 0.0;
  double l_dmil_cls = 0.0;
  if (cfg_.dmil_refine) {
    int with_outcome = 0;
    for (const PerPoint& row : rows) with_outcome += row.has_outcome ? 1 : 0;
    if (with_outcome > 0) {
      const double norm = 1.0 / with_outcome;
      std::vector<BagForLoss> bags;
      for (const PerPoint& row : rows) {
        if (!row.has_outcome) continue;
        const RefineOutcome& out = row.outcome;
        const DmilRegLoss res =
            dmil_reg_loss(out.extended, out.deltas, row.refined, cfg_.jitter_r, task_);
        l_dmil_reg += res.value * norm;
        for (std::size_t i = 0; i < out.extended.boxes.size(); ++i) {
          std::array<double, kDeltaDim> scaled;
          for (int t = 0; t < kDeltaDim; ++t) {
            scaled[static_cast<std::size_t>(t)] = res.d_deltas[i * kDeltaDim + t] * norm;
          }
          model_.regressor.accumulate_grad(reg_grad, out.features[i], scaled);
        }
        bags.push_back({&out.sheet, out.extended.u1, out.extended.u2,
                        scene.points[static_cast<std::size_t>(row.index)].class_id,
                        &out.scores});
      }
      const std::vector<OBox> negatives =
          sample_negatives(scene.width, scene.height, cfg_.u_neg, coarse_seeds, task_,
                           cfg_.mask_min_side, cfg_.mask_max_side, rng_neg_);
      ScoreSheet neg_sheet;
      if (!negatives.empty()) {
        neg_sheet = active_scorer().score(negatives, ctx, rng_score_);
      }
      const DmilClsLoss cls_res =
          dmil_cls_loss(bags, negatives.empty() ? nullptr : &neg_sheet, cfg_.focal());
      l_dmil_cls = cls_res.value;
      if (linear_scorer_) {
        LinearScorerParams grad = LinearScorerParams::zeros(classes_);
        std::size_t offset = 0;
        std::size_t bag_idx = 0;
        for (const PerPoint& row : rows) {
          if (!row.has_outcome) continue;
          const std::size_t n = row.outcome.sheet.cls_logits.size();
          accumulate_linear_grad(
              grad.cls, row.outcome.features,
              std::span<const double>(cls_res.d_cls_logits.data() + offset, n), classes_);
          accumulate_linear_grad(
              grad.ins, row.outcome.features,
              std::span<const double>(cls_res.d_ins_logits.data() + offset, n), classes_);
          offset += n;
          ++bag_idx;
        }
        if (!negatives.empty() && !cls_res.d_neg_logits.empty()) {
          std::vector<std::array<double, kFeatureDim>> neg_feats;
          for (const OBox& b : negatives) neg_feats.push_back(proposal_features(b, ctx));
          accumulate_linear_grad(grad.cls, neg_feats, cls_res.d_neg_logits, classes_);
        }
        auto scale = [&](std::vector<double>& v) {
          for (double& g : v) g *= cfg_.alpha2;
        };
        scale(grad.cls.weights);
        scale(grad.cls.bias);
        scale(grad.ins.weights);
        scale(grad.ins.bias);
        const double slr = lr_at(iter_) * cfg_.lr_scorer_scale;
        sgd_update(linear_scorer_->params().cls.weights, linear_velocity_->cls.weights,
                   grad.cls.weights, slr);
        sgd_update(linear_scorer_->params().cls.bias, linear_velocity_->cls.bias,
                   grad.cls.bias, slr);
        sgd_update(linear_scorer_->params().ins.weights, linear_velocity_->ins.weights,
                   grad.ins.weights, slr);
        sgd_update(linear_scorer_->params().ins.bias, linear_velocity_->ins.bias,
                   grad.ins.bias, slr);
      }
    }
  }

  const double l_na = compose_phase2(l_na_reg, l_dmil_reg, l_dmil_cls,
                                     cfg_.alpha1, cfg_.alpha2);
  int matched = 0;
  for (const PerPoint& row : rows) matched += row.matched ? 1 : 0;
  losses_.push_back({iter_, compose_total(head.value, 0.0, l_na), head.value, 0.0,
                     l_na, matched});

  const double lr = lr_at(iter_);
  sgd_update(st.student.cls_logits, st.cls_velocity, head.grad, lr * cfg_.lr_cls_scale);
  sgd_update(st.student.box_params, st.box_velocity, box_grad, lr * cfg_.lr_box_scale);
  for (double& g : reg_grad) g *= cfg_.alpha1;
  sgd_update(model_.regressor.weights, model_.regressor_velocity, reg_grad,
             lr * cfg_.lr_dmil_reg_scale);
  ema_all();

  if (sink) {
    for (const PerPoint& row : rows) {
      if (!row.matched) continue;
      EvolutionEntry entry;
      entry.iter = iter_;
      entry.scene_id = scene.id;
      entry.point_idx = row.index;
      entry.theta_coarse = row.coarse;
      entry.theta_refined = row.refined;
      sink(entry);
    }
  }
}

void Trainer::train_phase1(int iters) {
  for (int i = 0; i < iters; ++i) {
    const TrainScene& scene = scenes_[rng_scene_.uniform_index(scenes_.size())];
    phase1_step(scene);
    ++iter_;
  }
}

void Trainer::train_phase2(int iters, const EvolutionSink& sink) {
  for (int i = 0; i < iters; ++i) {
    const TrainScene& scene = scenes_[rng_scene_.uniform_index(scenes_.size())];
    phase2_step(scene, sink);
    ++iter_;
  }
}

void Trainer::run_all(const EvolutionSink& sink) {
  const int p1 = cfg_.phase1_iterations();
  train_phase1(p1);
  train_phase2(cfg_.iterations - p1, sink);
}

std::vector<Prediction> Trainer::predict_scene(const std::string& scene_id,
                                               bool use_teacher) const {
  const SceneState& st = model_.scenes.at(scene_id);
  return predict(use_teacher ? st.teacher : st.student, cfg_.pred_threshold);
}

std::vector<Detection> infer_points(
    const Dataset& data,
    const std::map<std::string, std::vector<PointAnnotation>>& points,
    const RunConfig& cfg, const BagRegressor& regressor, ProposalScorer& scorer,
    RngStream& rng) {
  std::vector<Detection> dets;
  const Task task = data.task;
  for (const Scene& scene : data.scenes) {
    const auto it = points.find(scene.id);
    if (it == points.end()) continue;
    const Signal sig = Signal::rasterize(scene, task);
    const SignalStats stats = SignalStats::build(sig);
    SceneContext ctx{scene.id, task, scene.width, scene.height, &sig, &stats, {}};
    for (const PointAnnotation& point : it->second) {
      OBox box(point.p.x, point.p.y, cfg.seed_box_size, cfg.seed_box_size, 0.0);
      if (cfg.dmil_refine) {
        for (int round = 0; round < cfg.infer_rounds; ++round) {
          box = dmil_refine(box, point.class_id, cfg, regressor, scorer, ctx, rng).refined;
        }
      }
      const std::vector<OBox> single{box};
      const ScoreSheet sheet = scorer.score(single, ctx, rng);
      Detection det;
      det.scene_id = scene.id;
      det.class_id = point.class_id;
      det.box = box;
      det.score = 1.0 / (1.0 + std::exp(-sheet.cls(0, point.class_id)));
      dets.push_back(std::move(det));
    }
  }
  return dets;
}

namespace {

json box_json(const OBox& b, Task task) {
  json arr = json::array({b.cx, b.cy, b.w, b.h});
  if (task == Task::kObb) arr.push_back(b.theta);
  return arr;
}

json checkpoint_json(const RunConfig& cfg, const Trainer* trainer,
                     const std::map<std::string, std::vector<OBox>>* pseudo,
                     long long iteration) {
  json j;
  j["version"] = kVersion;
  j["config"] = json::parse(config_to_json_text(cfg));
  j["iteration"] = iteration;
  j["task"] = cfg.task;
  if (trainer != nullptr) {
    const PipelineModel& model = trainer->model();
    json weights = json::array();
    for (const auto& mat : model.fpn.level_weights) weights.push_back(mat);
    j["fpn_weights"] = std::move(weights);
    j["regressor"] = model.regressor.weights;
    json scenes = json::object();
    for (const auto& [id, st] : model.scenes) {
      json js;
      js["cells_x"] = st.student.shape.cells_x;
      js["cells_y"] = st.student.shape.cells_y;
      js["stride"] = st.student.shape.stride;
      js["classes"] = st.student.classes;
      js["student_cls"] = st.student.cls_logits;
      js["student_box"] = st.student.box_params;
      js["teacher_cls"] = st.teacher.cls_logits;
      js["teacher_box"] = st.teacher.box_params;
      scenes[id] = std::move(js);
    }
    j["scenes"] = std::move(scenes);
  }
  if (pseudo != nullptr) {
    json boxes = json::object();
    for (const auto& [id, list] : *pseudo) {
      json arr = json::array();
      for (const OBox& b : list) arr.push_back(box_json(b, cfg.task_enum()));
      boxes[id] = std::move(arr);
    }
    j["pseudo_boxes"] = std::move(boxes);
  }
  return j;
}

void add_quality_metrics(std::map<std::string, double>& metrics,
                         const std::vector<EvolutionEntry>& log, const Dataset& data,
                         const std::map<std::string, std::vector<PointAnnotation>>& points,
                         int round_len) {
  if (log.empty()) return;
  const auto rounds = pseudo_quality(log, data, points, round_len);
  metrics["evolution_rounds"] = static_cast<double>(rounds.size());
  double entries = 0.0;
  double skipped = 0.0;
  for (const RoundQuality& q : rounds) {
    entries += q.count;
    skipped += q.skipped;
  }
  metrics["evolution_entries"] = entries;
  metrics["evolution_skipped"] = skipped;
  for (const RoundQuality& q : rounds) {
    if (q.count > 0) {
      metrics["coarse_iou_median_first_round"] = q.median_coarse;
      metrics["coarse_iou_mean_first_round"] = q.mean_coarse;
      metrics["refined_iou_median_first_round"] = q.median_refined;
      metrics["refined_iou_mean_first_round"] = q.mean_refined;
      break;
    }
  }
  for (auto it = rounds.rbegin(); it != rounds.rend(); ++it) {
    if (it->count > 0) {
      metrics["coarse_iou_median_final_round"] = it->median_coarse;
      metrics["coarse_iou_mean_final_round"] = it->mean_coarse;
      metrics["refined_iou_median_final_round"] = it->median_refined;
      metrics["refined_iou_mean_final_round"] = it->mean_refined;
      break;
    }
  }
}

void add_report_metrics(std::map<std::string, double>& metrics,
                        const EvalReport& report, const std::string& suffix) {
  metrics["map_" + suffix] = report.map;
  for (int b = 0; b < 4; ++b) {
    metrics[std::string("ap_") + kSizeBucketNames[static_cast<std::size_t>(b)] + "_" + suffix] =
        report.size_ap[static_cast<std::size_t>(b)];
  }
  metrics["detections_" + suffix] = 0.0;  // filled by caller when known
}

}  // namespace

RunArtifacts run_experiment(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.dataset.empty()) {
    throw ConfigError("config field `dataset` is required for `run`");
  }
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  RunArtifacts artifacts;
  artifacts.out_dir = out_dir;
  artifacts.checkpoint_path = (fs::path(out_dir) / "checkpoint.json").string();
  artifacts.evolution_path = (fs::path(out_dir) / "evolution.jsonl").string();
  artifacts.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  artifacts.config_path = (fs::path(out_dir) / "config.resolved.json").string();

  const Dataset data = load_dataset(cfg.dataset);
  if ((data.task == Task::kHbb) != (cfg.task_enum() == Task::kHbb)) {
    throw ConfigError("config field `task` does not match the dataset task");
  }
  std::map<std::string, std::vector<PointAnnotation>> points;
  if (!cfg.points.empty()) {
    points = load_points(cfg.points, data);
  } else {
    RngStream rng(cfg.seed, "annotation");
    for (const Scene& scene : data.scenes) {
      points[scene.id] = simulate_points_for_scene(scene, cfg.m, data.task, rng);
    }
  }

  // Resolved config snapshot first; it documents the run even if it dies.
  {
    std::ofstream out(artifacts.config_path, std::ios::binary);
    json j;
    j["version"] = kVersion;
    j["config"] = json::parse(config_to_json_text(cfg));
    out << j.dump(2) << "\n";
  }

  std::ofstream evo(artifacts.evolution_path, std::ios::binary);
  {
    json meta;
    meta["type"] = "meta";
    meta["version"] = kVersion;
    meta["config"] = json::parse(config_to_json_text(cfg));
    evo << meta.dump() << "\n";
  }
  std::vector<EvolutionEntry> log_entries;
  const Task task = cfg.task_enum();
  auto sink = [&](const EvolutionEntry& raw) {
    EvolutionEntry entry = raw;
    // Diagnostics only: tie the refined box back to its object when the
    // annotation carries provenance.
    entry.iou_gt = 0.0;
    const Scene* scene = data.find_scene(entry.scene_id);
    const auto it = points.find(entry.scene_id);
    if (scene != nullptr && it != points.end() && entry.point_idx >= 0 &&
        entry.point_idx < static_cast<int>(it->second.size())) {
      const int object_id = it->second[static_cast<std::size_t>(entry.point_idx)].object_id;
      if (object_id >= 0 && object_id < static_cast<int>(scene->objects.size())) {
        entry.iou_gt = box_iou(entry.theta_refined,
                               scene->objects[static_cast<std::size_t>(object_id)].gt, task);
      }
    }
    json j;
    j["iter"] = entry.iter;
    j["scene_id"] = entry.scene_id;
    j["point_idx"] = entry.point_idx;
    j["theta_coarse"] = box_json(entry.theta_coarse, task);
    j["theta_refined"] = box_json(entry.theta_refined, task);
    j["iou_gt"] = entry.iou_gt;
    evo << j.dump() << "\n";
    log_entries.push_back(std::move(entry));
  };

  std::map<std::string, double> metrics;
  metrics["iterations_total"] = cfg.iterations;
  metrics["phase1_iterations"] = cfg.phase1_iterations();

  std::unique_ptr<OracleScorer> oracle;
  if (cfg.scorer == "oracle") {
    oracle = std::make_unique<OracleScorer>(&data, cfg.oracle_noise_sigma);
  }

  std::unique_ptr<Trainer> trainer;
  std::map<std::string, std::vector<OBox>> pseudo_state;
  long long final_iter = 0;

  if (task == Task::kHbb) {
    std::vector<TrainScene> train_scenes;
    train_scenes.reserve(data.scenes.size());
    for (const Scene& scene : data.scenes) {
      TrainScene ts;
      ts.id = scene.id;
      ts.width = scene.width;
      ts.height = scene.height;
      ts.base_signal = Signal::rasterize(scene, task);
      const auto it = points.find(scene.id);
      if (it != points.end()) ts.points = it->second;
      train_scenes.push_back(std::move(ts));
    }
    trainer = std::make_unique<Trainer>(cfg, std::move(train_scenes),
                                        static_cast<int>(data.classes.size()),
                                        oracle.get());
    trainer->run_all(sink);
    final_iter = trainer->iteration();

    // Training-set AP from the student head.
    std::vector<Detection> train_dets;
    for (const Scene& scene : data.scenes) {
      for (const Prediction& pred : trainer->predict_scene(scene.id, false)) {
        int best = 0;
        for (std::size_t c = 1; c < pred.scores.size(); ++c) {
          if (pred.scores[c] > pred.scores[best]) best = static_cast<int>(c);
        }
        train_dets.push_back({scene.id, best, pred.box, pred.scores[static_cast<std::size_t>(best)]});
      }
    }
    const EvalReport train_report =
        evaluate(train_dets, data, cfg.eval_iou_thr, cfg.size_bucket_edges);
    add_report_metrics(metrics, train_report, "train");
    metrics["detections_train"] = static_cast<double>(train_dets.size());
  } else {
    // OBB mode: label evolution on scorer-backed predictions, no gradient
    // training (the tabular head trains on the HBB task only).
    if (!oracle) {
      throw ConfigError("config field `scorer` must be \"oracle\" for the obb task");
    }
    const int rounds = std::max(1, cfg.infer_rounds);
    for (const Scene& scene : data.scenes) {
      const auto it = points.find(scene.id);
      if (it == points.end()) continue;
      std::vector<OBox> boxes;
      for (const PointAnnotation& p : it->second) {
        boxes.emplace_back(p.p.x, p.p.y, cfg.seed_box_size, cfg.seed_box_size, 0.0);
      }
      pseudo_state[scene.id] = std::move(boxes);
    }
    RngStream rng_score(cfg.seed, "scorer-noise");
    BagRegressor regressor = BagRegressor::zeros();
    for (int round = 0; round < rounds; ++round) {
      for (const Scene& scene : data.scenes) {
        const auto it = points.find(scene.id);
        if (it == points.end()) continue;
        auto& boxes = pseudo_state[scene.id];
        const Signal sig = Signal::rasterize(scene, task);
        const SignalStats stats = SignalStats::build(sig);
        SceneContext ctx{scene.id, task, scene.width, scene.height, &sig, &stats, {}};
        const ScoreSheet sheet = oracle->score(boxes, ctx, rng_score);
        std::vector<Prediction> preds;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
          Prediction p;
          p.box = boxes[i];
          p.scores.resize(data.classes.size());
          for (std::size_t c = 0; c < data.classes.size(); ++c) {
            p.scores[c] = 1.0 / (1.0 + std::exp(-sheet.cls(static_cast<int>(i),
                                                           static_cast<int>(c))));
          }
          preds.push_back(std::move(p));
        }
        const std::vector<PointMatch> matches =
            match_points(it->second, preds, cfg.k1, cfg.k2, task, cfg.focal());
        for (std::size_t j = 0; j < matches.size(); ++j) {
          if (matches[j].selected.empty()) continue;
          std::vector<OBox> cand;
          std::vector<double> scores;
          for (const MatchCandidate& mc : matches[j].selected) {
            cand.push_back(preds[static_cast<std::size_t>(mc.pred)].box);
            scores.push_back(mc.score);
          }
          const OBox coarse = fuse_coarse(cand, scores);
          OBox refined = coarse;
          if (cfg.dmil_refine) {
            refined = dmil_refine(coarse, it->second[j].class_id, cfg, regressor,
                                  *oracle, ctx, rng_score).refined;
          }
          boxes[j] = refined;
          EvolutionEntry entry;
          entry.iter = round;
          entry.scene_id = scene.id;
          entry.point_idx = static_cast<int>(j);
          entry.theta_coarse = coarse;
          entry.theta_refined = refined;
          sink(entry);
        }
      }
    }
    final_iter = rounds;
    std::vector<Detection> dets;
    RngStream rng_det(cfg.seed, "scorer-noise-final");
    for (const Scene& scene : data.scenes) {
      const auto it = points.find(scene.id);
      if (it == points.end()) continue;
      const Signal sig = Signal::rasterize(scene, task);
      const SignalStats stats = SignalStats::build(sig);
      SceneContext ctx{scene.id, task, scene.width, scene.height, &sig, &stats, {}};
      const auto& boxes = pseudo_state[scene.id];
      const ScoreSheet sheet = oracle->score(boxes, ctx, rng_det);
      for (std::size_t j = 0; j < boxes.size(); ++j) {
        const int cls = it->second[j].class_id;
        dets.push_back({scene.id, cls, boxes[j],
                        1.0 / (1.0 + std::exp(-sheet.cls(static_cast<int>(j), cls)))});
      }
    }
    const EvalReport report = evaluate(dets, data, cfg.eval_iou_thr, cfg.size_bucket_edges);
    add_report_metrics(metrics, report, "train");
    metrics["detections_train"] = static_cast<double>(dets.size());
  }

  add_quality_metrics(metrics, log_entries, data, points,
                      std::max<int>(1, static_cast<int>(data.scenes.size())));

  // Held-out evaluation through point-conditioned inference.
  if (!cfg.eval_dataset.empty()) {
    const Dataset eval_data = load_dataset(cfg.eval_dataset);
    std::map<std::string, std::vector<PointAnnotation>> eval_points;
    if (!cfg.eval_points.empty()) {
      eval_points = load_points(cfg.eval_points, eval_data);
    } else {
      RngStream rng(cfg.seed, "annotation-eval");
      for (const Scene& scene : eval_data.scenes) {
        eval_points[scene.id] = simulate_points_for_scene(scene, cfg.m, eval_data.task, rng);
      }
    }
    std::unique_ptr<OracleScorer> eval_oracle;
    ProposalScorer* eval_scorer = nullptr;
    if (cfg.scorer == "oracle") {
      eval_oracle = std::make_unique<OracleScorer>(&eval_data, cfg.oracle_noise_sigma);
      eval_scorer = eval_oracle.get();
    } else {
      eval_scorer = &trainer->active_scorer();
    }
    RngStream rng_infer(cfg.seed, "inference");
    const BagRegressor regressor =
        trainer ? trainer->model().regressor : BagRegressor::zeros();
    const std::vector<Detection> eval_dets =
        infer_points(eval_data, eval_points, cfg, regressor, *eval_scorer, rng_infer);
    const EvalReport report =
        evaluate(eval_dets, eval_data, cfg.eval_iou_thr, cfg.size_bucket_edges);
    add_report_metrics(metrics, report, "eval");
    metrics["detections_eval"] = static_cast<double>(eval_dets.size());
  }

  // Metrics CSV with the resolved config embedded as comment lines.
  {
    std::ofstream out(artifacts.metrics_path, std::ios::binary);
    out << "# pointteacher " << kVersion << "\n";
    out << "# config: " << json::parse(config_to_json_text(cfg)).dump() << "\n";
    out << "metric,value\n";
    for (const auto& [key, value] : metrics) {
      out << key << "," << format_double(value) << "\n";
    }
  }
  {
    std::ofstream out(artifacts.checkpoint_path, std::ios::binary);
    out << checkpoint_json(cfg, trainer.get(),
                           pseudo_state.empty() ? nullptr : &pseudo_state, final_iter)
               .dump()
        << "\n";
  }
  artifacts.metrics = std::move(metrics);
  return artifacts;
}

}  // namespace pointteacher
