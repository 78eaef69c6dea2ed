#include "pointteacher/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pointteacher {

namespace {

struct GtRef {
  int scene = 0;
  int object = 0;
  double area = 0.0;
  bool matched = false;
};

int size_bucket(double area, const std::array<double, 3>& edges) {
  if (area < edges[0]) return 0;
  if (area < edges[1]) return 1;
  if (area < edges[2]) return 2;
  return 3;
}

// AP from a PR curve: integrate recall against the running max of precision
// from the right (all-point interpolation).
double ap_from_pr(const std::vector<PrPoint>& pr) {
  if (pr.empty()) return 0.0;
  double ap = 0.0;
  double prev_recall = 0.0;
  double envelope = 0.0;
  std::vector<double> env(pr.size());
  for (std::size_t i = pr.size(); i-- > 0;) {
    envelope = std::max(envelope, pr[i].precision);
    env[i] = envelope;
  }
  for (std::size_t i = 0; i < pr.size(); ++i) {
    ap += (pr[i].recall - prev_recall) * env[i];
    prev_recall = pr[i].recall;
  }
  return ap;
}

struct ClassOutcome {
  double ap = 0.0;
  std::vector<PrPoint> pr;
};

// Runs the greedy evaluation for one class over a GT subset selected by
// `keep_gt`. Detections whose best match (in the unrestricted pool) falls
// outside the subset are dropped rather than counted as false positives.
ClassOutcome evaluate_class(const std::vector<const Detection*>& dets,
                            const Dataset& data, int cls, double thr,
                            const std::vector<char>* keep_gt,
                            int* gt_count_out) {
  // Index ground truth of this class per scene.
  std::map<std::string, std::vector<int>> gt_by_scene;
  std::vector<GtRef> gts;
  std::vector<char> keep;
  int scene_idx = 0;
  for (const Scene& scene : data.scenes) {
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
      if (scene.objects[o].class_id != cls) continue;
      gt_by_scene[scene.id].push_back(static_cast<int>(gts.size()));
      gts.push_back({scene_idx, static_cast<int>(o), scene.objects[o].gt.area(), false});
      keep.push_back(keep_gt == nullptr ? 1 : (*keep_gt)[gts.size() - 1]);
    }
    ++scene_idx;
  }
  int total_gt = 0;
  for (char k : keep) total_gt += k;
  if (gt_count_out != nullptr) *gt_count_out = total_gt;

  ClassOutcome out;
  if (total_gt == 0) return out;

  int tp = 0;
  int fp = 0;
  for (const Detection* det : dets) {
    const auto it = gt_by_scene.find(det->scene_id);
    int best_gt = -1;
    double best_iou = 0.0;
    if (it != gt_by_scene.end()) {
      for (int gi : it->second) {
        if (gts[static_cast<std::size_t>(gi)].matched) continue;
        const Scene& scene = data.scenes[static_cast<std::size_t>(gts[gi].scene)];
        const double iou =
            box_iou(det->box, scene.objects[static_cast<std::size_t>(gts[gi].object)].gt,
                    data.task);
        if (iou >= thr && iou > best_iou) {
          best_iou = iou;
          best_gt = gi;
        }
      }
    }
    if (best_gt >= 0) {
      gts[static_cast<std::size_t>(best_gt)].matched = true;
      if (!keep[static_cast<std::size_t>(best_gt)]) continue;  // out-of-subset: ignore
      ++tp;
    } else {
      ++fp;
    }
    out.pr.push_back({static_cast<double>(tp) / total_gt,
                      static_cast<double>(tp) / (tp + fp)});
  }
  out.ap = ap_from_pr(out.pr);
  return out;
}

}  // namespace

EvalReport evaluate(std::span<const Detection> detections, const Dataset& data,
                    double iou_threshold, const std::array<double, 3>& size_edges) {
  if (iou_threshold <= 0.0 || iou_threshold >= 1.0) {
    throw std::invalid_argument("evaluate: iou threshold must be in (0, 1)");
  }
  EvalReport report;
  report.iou_threshold = iou_threshold;

  // Canonical ordering makes the report independent of input order.
  std::vector<const Detection*> ordered;
  ordered.reserve(detections.size());
  for (const Detection& d : detections) ordered.push_back(&d);
  std::sort(ordered.begin(), ordered.end(), [](const Detection* a, const Detection* b) {
    if (a->score != b->score) return a->score > b->score;
    if (a->scene_id != b->scene_id) return a->scene_id < b->scene_id;
    if (a->box.cx != b->box.cx) return a->box.cx < b->box.cx;
    if (a->box.cy != b->box.cy) return a->box.cy < b->box.cy;
    if (a->box.w != b->box.w) return a->box.w < b->box.w;
    if (a->box.h != b->box.h) return a->box.h < b->box.h;
    return a->box.theta < b->box.theta;
  });

  const int classes = static_cast<int>(data.classes.size());
  double ap_sum = 0.0;
  int ap_classes = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<const Detection*> dets;
    for (const Detection* d : ordered) {
      if (d->class_id == c) dets.push_back(d);
    }
    int gt_count = 0;
    ClassOutcome outcome = evaluate_class(dets, data, c, iou_threshold, nullptr, &gt_count);
    if (gt_count == 0) {
      report.excluded_classes.push_back(c);
      continue;
    }
    ClassEval ce;
    ce.class_id = c;
    ce.gt_count = gt_count;
    ce.ap = outcome.ap;
    ce.pr = std::move(outcome.pr);
    report.per_class.push_back(std::move(ce));
    ap_sum += outcome.ap;
    ++ap_classes;
  }
  report.map = ap_classes > 0 ? ap_sum / ap_classes : 0.0;

  // Size-bucketed APs: mean over classes that have ground truth in the bucket.
  for (int bucket = 0; bucket < 4; ++bucket) {
    double sum = 0.0;
    int n = 0;
    int bucket_gt = 0;
    for (int c = 0; c < classes; ++c) {
      std::vector<char> keep;
      int have = 0;
      for (const Scene& scene : data.scenes) {
        for (const SceneObject& obj : scene.objects) {
          if (obj.class_id != c) continue;
          const char k = size_bucket(obj.gt.area(), size_edges) == bucket ? 1 : 0;
          keep.push_back(k);
          have += k;
        }
      }
      if (have == 0) continue;
      bucket_gt += have;
      std::vector<const Detection*> dets;
      for (const Detection* d : ordered) {
        if (d->class_id == c) dets.push_back(d);
      }
      int unused = 0;
      sum += evaluate_class(dets, data, c, iou_threshold, &keep, &unused).ap;
      ++n;
    }
    report.size_ap[static_cast<std::size_t>(bucket)] = n > 0 ? sum / n : 0.0;
    report.size_gt_count[static_cast<std::size_t>(bucket)] = bucket_gt;
  }
  return report;
}

std::vector<RoundQuality> pseudo_quality(
    std::span<const EvolutionEntry> log, const Dataset& data,
    const std::map<std::string, std::vector<PointAnnotation>>& points_by_scene,
    int round_len) {
  if (round_len < 1) throw std::invalid_argument("pseudo_quality: round_len must be >= 1");
  if (log.empty()) throw std::invalid_argument("pseudo_quality: empty evolution log");
  const long long first_iter = log.front().iter;

  std::map<int, std::vector<std::pair<double, double>>> per_round;  // coarse, refined
  std::map<int, int> skipped;
  for (const EvolutionEntry& e : log) {
    const int round = static_cast<int>((e.iter - first_iter) / round_len);
    const Scene* scene = data.find_scene(e.scene_id);
    const auto pts = points_by_scene.find(e.scene_id);
    int object_id = -1;
    if (pts != points_by_scene.end() && e.point_idx >= 0 &&
        e.point_idx < static_cast<int>(pts->second.size())) {
      object_id = pts->second[static_cast<std::size_t>(e.point_idx)].object_id;
    }
    if (scene == nullptr || object_id < 0 ||
        object_id >= static_cast<int>(scene->objects.size())) {
      ++skipped[round];
      continue;
    }
    const OBox& gt = scene->objects[static_cast<std::size_t>(object_id)].gt;
    per_round[round].push_back({box_iou(e.theta_coarse, gt, data.task),
                                box_iou(e.theta_refined, gt, data.task)});
  }

  auto median = [](std::vector<double>& v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  std::vector<RoundQuality> out;
  for (auto& [round, pairs] : per_round) {
    RoundQuality q;
    q.round = round;
    q.count = static_cast<int>(pairs.size());
    q.skipped = skipped.count(round) ? skipped[round] : 0;
    std::vector<double> coarse, refined;
    for (auto& [c, r] : pairs) {
      coarse.push_back(c);
      refined.push_back(r);
      q.mean_coarse += c;
      q.mean_refined += r;
    }
    q.mean_coarse /= pairs.size();
    q.mean_refined /= pairs.size();
    q.median_coarse = median(coarse);
    q.median_refined = median(refined);
    out.push_back(q);
  }
  for (auto& [round, count] : skipped) {
    if (!per_round.count(round)) {
      RoundQuality q;
      q.round = round;
      q.skipped = count;
      out.push_back(q);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const RoundQuality& a, const RoundQuality& b) { return a.round < b.round; });
  return out;
}

}  // namespace pointteacher
