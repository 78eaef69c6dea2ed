#include "pointteacher/matching.hpp"

#include <algorithm>
#include <stdexcept>

namespace pointteacher {

namespace {

int argmax_class(const Prediction& pred) {
  int best = 0;
  for (std::size_t c = 1; c < pred.scores.size(); ++c) {
    if (pred.scores[c] > pred.scores[best]) best = static_cast<int>(c);
  }
  return best;
}

}  // namespace

std::vector<PointMatch> match_points(std::span<const PointAnnotation> points,
                                     std::span<const Prediction> preds,
                                     int k1, int k2, Task task,
                                     const FocalParams& fp) {
  if (k1 < 1 || k2 < 1 || k2 > k1) {
    throw std::invalid_argument("match_points: require 1 <= k2 <= k1");
  }
  std::vector<int> pred_class(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) pred_class[i] = argmax_class(preds[i]);

  std::vector<PointMatch> out(points.size());
  struct Entry {
    int pred;
    double distance;
    double cost;
    double score;
  };
  std::vector<Entry> stage1;
  for (std::size_t j = 0; j < points.size(); ++j) {
    const PointAnnotation& point = points[j];
    stage1.clear();
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (pred_class[i] != point.class_id) continue;
      stage1.push_back({static_cast<int>(i),
                        l1_center_distance(preds[i].box, point.p), 0.0, 0.0});
    }
    if (stage1.empty()) continue;
    const std::size_t keep1 = std::min<std::size_t>(stage1.size(), static_cast<std::size_t>(k1));
    std::partial_sort(stage1.begin(), stage1.begin() + keep1, stage1.end(),
                      [](const Entry& a, const Entry& b) {
                        if (a.distance != b.distance) return a.distance < b.distance;
                        return a.pred < b.pred;
                      });
    stage1.resize(keep1);

    for (Entry& e : stage1) {
      const Prediction& pred = preds[static_cast<std::size_t>(e.pred)];
      e.score = pred.scores[static_cast<std::size_t>(point.class_id)];
      const bool inside = task == Task::kHbb
                              ? contains_point(to_hbox(pred.box), point.p)
                              : contains_point(pred.box, point.p);
      e.cost = focal_loss(e.score, true, fp).value + (inside ? 0.0 : 1.0);
    }
    std::stable_sort(stage1.begin(), stage1.end(), [](const Entry& a, const Entry& b) {
      if (a.cost != b.cost) return a.cost < b.cost;
      if (a.distance != b.distance) return a.distance < b.distance;
      return a.pred < b.pred;
    });
    const std::size_t keep2 = std::min<std::size_t>(stage1.size(), static_cast<std::size_t>(k2));
    for (std::size_t i = 0; i < keep2; ++i) {
      out[j].selected.push_back(
          {stage1[i].pred, stage1[i].distance, stage1[i].cost, stage1[i].score});
    }
  }
  return out;
}

OBox fuse_coarse(std::span<const OBox> boxes, std::span<const double> scores) {
  if (boxes.empty() || boxes.size() != scores.size()) {
    throw std::invalid_argument("fuse_coarse: need matching, non-empty boxes and scores");
  }
  if (boxes.size() == 1) return boxes[0];
  double total = 0.0;
  for (double s : scores) total += s;
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const double weight = total > 0.0 ? scores[i] / total : 1.0 / boxes.size();
    cx += weight * boxes[i].cx;
    cy += weight * boxes[i].cy;
    w += weight * boxes[i].w;
    h += weight * boxes[i].h;
    theta += weight * boxes[i].theta;
  }
  return OBox(cx, cy, w, h, theta);
}

}  // namespace pointteacher
