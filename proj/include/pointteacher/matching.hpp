#pragma once

#include <span>
#include <vector>

#include "pointteacher/geometry.hpp"
#include "pointteacher/losses.hpp"
#include "pointteacher/scenes.hpp"

namespace pointteacher {

struct Prediction {
  OBox box;
  std::vector<double> scores;  // per-class probabilities in [0, 1]
  int cell = -1;               // producing grid cell, -1 if not applicable
};

struct MatchCandidate {
  int pred = -1;
  double distance = 0.0;
  double cost = 0.0;
  double score = 0.0;  // probability on the annotated class
};

// Candidates for one annotated point; empty means unmatched.
struct PointMatch {
  std::vector<MatchCandidate> selected;
};

// Two-stage top-k matching. Stage 1 keeps the k1 predictions (restricted to
// those whose argmax class equals the annotated class) closest in L1 center
// distance. Stage 2 keeps the k2 of those with the smallest
//   cost = focal(score on annotated class as positive) + (1 - [point in box]).
// Ties break by distance, then prediction index. Fewer than k1 predictions
// uses all of them; zero leaves the point unmatched.
std::vector<PointMatch> match_points(std::span<const PointAnnotation> points,
                                     std::span<const Prediction> preds,
                                     int k1, int k2, Task task,
                                     const FocalParams& fp = {});

// Parameter-wise fusion weighted by scores renormalized to sum to 1.
OBox fuse_coarse(std::span<const OBox> boxes, std::span<const double> scores);

}  // namespace pointteacher
