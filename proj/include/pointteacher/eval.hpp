#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pointteacher/geometry.hpp"
#include "pointteacher/scenes.hpp"

namespace pointteacher {

struct Detection {
  std::string scene_id;
  int class_id = 0;
  OBox box;
  double score = 0.0;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct ClassEval {
  int class_id = 0;
  int gt_count = 0;
  double ap = 0.0;
  std::vector<PrPoint> pr;
};

// Buckets follow AI-TOD-style area edges: vt < 8^2, t < 16^2, s < 32^2, m rest.
inline constexpr std::array<double, 3> kDefaultSizeEdges = {64.0, 256.0, 1024.0};
inline constexpr std::array<const char*, 4> kSizeBucketNames = {"vt", "t", "s", "m"};

struct EvalReport {
  double map = 0.0;
  std::vector<ClassEval> per_class;          // classes with >= 1 ground truth
  std::vector<int> excluded_classes;         // no ground truth anywhere
  std::array<double, 4> size_ap = {0, 0, 0, 0};
  std::array<int, 4> size_gt_count = {0, 0, 0, 0};
  double iou_threshold = 0.25;
};

// Greedy score-ordered matching against unmatched ground truth at the given
// IoU threshold; AP integrates the interpolated (running-max) PR curve over
// all points. Detections are canonically ordered by (score desc, scene_id,
// box params), so input permutations cannot change the report.
EvalReport evaluate(std::span<const Detection> detections, const Dataset& data,
                    double iou_threshold,
                    const std::array<double, 3>& size_edges = kDefaultSizeEdges);

// One line of the label-evolution log.
struct EvolutionEntry {
  long long iter = 0;
  std::string scene_id;
  int point_idx = 0;
  OBox theta_coarse;
  OBox theta_refined;
  double iou_gt = 0.0;
};

struct RoundQuality {
  int round = 0;
  int count = 0;
  int skipped = 0;  // entries without usable object provenance
  double mean_coarse = 0.0;
  double median_coarse = 0.0;
  double mean_refined = 0.0;
  double median_refined = 0.0;
};

// Per-round IoU-to-ground-truth statistics of logged pseudo boxes. Rounds
// group entries by iteration windows of round_len. Entries are tied back to
// their object through the point annotations' object_id provenance.
std::vector<RoundQuality> pseudo_quality(
    std::span<const EvolutionEntry> log, const Dataset& data,
    const std::map<std::string, std::vector<PointAnnotation>>& points_by_scene,
    int round_len);

}  // namespace pointteacher
