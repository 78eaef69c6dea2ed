#pragma once

#include <span>
#include <vector>

#include "pointteacher/geometry.hpp"
#include "pointteacher/losses.hpp"
#include "pointteacher/scorer.hpp"

namespace pointteacher {

// Deterministic jitter grid: every scale is combined with every (dx, dy)
// offset pair (and theta offset, normally just {0}). Proposal order is
// theta-major, then scale, then dy, then dx.
struct JitterGrid {
  std::vector<double> scales{1.0};
  std::vector<double> offsets{0.0};        // fractions of (w, h), per axis
  std::vector<double> theta_offsets{0.0};  // radians; {0} keeps the seed angle

  int size() const {
    return static_cast<int>(theta_offsets.size() * scales.size() *
                            offsets.size() * offsets.size());
  }
};

JitterGrid default_construct_grid();  // 5 scales x 3x3 offsets = 45
JitterGrid default_extend_grid();     // 3 scales x 3x3 offsets = 27

struct Bag {
  OBox seed;
  std::vector<OBox> proposals;
};

Bag construct_bag(const OBox& seed, const JitterGrid& grid);

// u1 x u2 proposals, row-major by u1. boxes[i * u2 + j] is sub-proposal j of
// bag proposal i.
struct ExtendedBag {
  int u1 = 0;
  int u2 = 0;
  std::vector<OBox> boxes;

  const OBox& at(int i, int j) const { return boxes[static_cast<std::size_t>(i) * u2 + j]; }
  int size() const { return u1 * u2; }
};

ExtendedBag extend_bag(const Bag& bag, const JitterGrid& grid);

inline constexpr int kDeltaDim = 5;  // dx, dy, dw, dh, dtheta

// Standard delta decoding: cx' = cx + dx*w, cy' = cy + dy*h, w' = w*exp(dw),
// h' = h*exp(dh), theta' = theta + dtheta (HBB ignores dtheta). deltas are
// size() x kDeltaDim. Non-finite deltas are rejected.
ExtendedBag refine_bag(const ExtendedBag& bag, std::span<const double> deltas, Task task);

// Inverse of the decoding; used by round-trip checks.
std::array<double, kDeltaDim> encode_deltas(const OBox& from, const OBox& to);

// S = sigmoid(cls) ⊙ softmax_over_u2(ins); S_hat sums S over u2.
struct BagScores {
  int u1 = 0;
  int u2 = 0;
  int classes = 0;
  std::vector<double> s;      // u1 * u2 * classes
  std::vector<double> s_hat;  // u1 * classes

  double at(int i, int j, int c) const {
    return s[(static_cast<std::size_t>(i) * u2 + j) * classes + c];
  }
  double hat(int i, int c) const { return s_hat[static_cast<std::size_t>(i) * classes + c]; }
};

BagScores score_bag(const ScoreSheet& sheet, int u1, int u2);

// One positive bag for the classification loss: its logits and the annotated
// class every (u1) entry is labelled with. scores may carry the precomputed
// score_bag result; when null it is recomputed.
struct BagForLoss {
  const ScoreSheet* sheet = nullptr;
  int u1 = 0;
  int u2 = 0;
  int target_class = 0;
  const BagScores* scores = nullptr;
};

struct DmilClsLoss {
  double value = 0.0;
  // Gradients wrt the logits, concatenated over bags in call order.
  std::vector<double> d_cls_logits;
  std::vector<double> d_ins_logits;
  // Gradients wrt the negative-set class logits.
  std::vector<double> d_neg_logits;
};

// Focal loss on bag scores S_hat with one-hot targets on the annotated class
// plus an all-negative term over the negative proposals (class logits only).
// Positives are averaged over bag proposals, negatives over the set.
DmilClsLoss dmil_cls_loss(std::span<const BagForLoss> bags,
                          const ScoreSheet* negatives, const FocalParams& fp = {});

struct DmilRegLoss {
  double value = 0.0;
  std::vector<double> d_deltas;  // size() x kDeltaDim
};

// Mean jittering IoU loss of the refined bag against a single replicated
// target, with the exact chain rule back to the regression deltas.
DmilRegLoss dmil_reg_loss(const ExtendedBag& bag, std::span<const double> deltas,
                          const OBox& target, double r, Task task);

// Top-k selection on the annotated class followed by score-weighted,
// parameter-wise fusion against the seed (Eq. 6 shape):
//   out = beta * seed + (1 - beta) * sum_k w_k * box_k, sum w_k = 1.
// Ties in the ranking break toward the lower flat index; beta = 1 returns the
// seed bit-exactly.
OBox select_and_fuse(const ExtendedBag& refined, const BagScores& scores,
                     const OBox& seed, int cls, int k, double beta);

// Index of the top proposal chosen by select_and_fuse (diagnostics/scoring).
int top_proposal_index(const BagScores& scores, int cls);

// Linear regression head mapping proposal features to clamped deltas; the
// trainable part of bag refinement.
struct BagRegressor {
  std::vector<double> weights;  // kFeatureDim x kDeltaDim, row-major by feature

  static BagRegressor zeros();

  std::array<double, kDeltaDim> predict(const std::array<double, kFeatureDim>& f) const;
  // Chain d loss / d delta into d loss / d weights, honoring the clamp.
  void accumulate_grad(std::vector<double>& grad,
                       const std::array<double, kFeatureDim>& f,
                       std::span<const double> d_delta) const;
};

}  // namespace pointteacher
