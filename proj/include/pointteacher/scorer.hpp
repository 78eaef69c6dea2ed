#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "pointteacher/geometry.hpp"
#include "pointteacher/rng.hpp"
#include "pointteacher/scenes.hpp"

namespace pointteacher {

// Per-proposal class and instance logits, row-major (proposal, class).
struct ScoreSheet {
  int count = 0;
  int classes = 0;
  std::vector<double> cls_logits;
  std::vector<double> ins_logits;

  double cls(int i, int c) const { return cls_logits[static_cast<std::size_t>(i) * classes + c]; }
  double ins(int i, int c) const { return ins_logits[static_cast<std::size_t>(i) * classes + c]; }
};

// What a scorer may look at besides the proposals themselves. Ground truth is
// deliberately absent; the oracle scorer holds its own dataset reference.
struct SceneContext {
  std::string scene_id;
  Task task = Task::kHbb;
  double width = 0.0;
  double height = 0.0;
  const Signal* signal = nullptr;
  const SignalStats* stats = nullptr;
  std::span<const OBox> mask_regions;
};

inline constexpr int kFeatureDim = 9;

// Handcrafted geometric features: bias, mean signal inside, center-signal
// statistic, max IoU against masked regions, log scale, log aspect, signal
// anomaly centroid offsets, anomaly size ratio. Rotated proposals are
// queried through their AABB.
std::array<double, kFeatureDim> proposal_features(const OBox& box,
                                                  const SceneContext& ctx);

class ProposalScorer {
 public:
  virtual ~ProposalScorer() = default;
  virtual ScoreSheet score(std::span<const OBox> proposals,
                           const SceneContext& ctx, RngStream& rng) const = 0;
};

// Emulates a trained head: logits are logit(clamp(max IoU against same-class
// ground truth)) plus optional gaussian noise. Instance logits use the same
// construction with independent noise draws.
class OracleScorer : public ProposalScorer {
 public:
  static constexpr double kIouClamp = 1e-4;

  OracleScorer(const Dataset* data, double noise_sigma);

  ScoreSheet score(std::span<const OBox> proposals, const SceneContext& ctx,
                   RngStream& rng) const override;

 private:
  const Dataset* data_;
  double sigma_;
};

struct LinearHead {
  std::vector<double> weights;  // kFeatureDim x classes, row-major by feature
  std::vector<double> bias;     // classes

  double apply(const std::array<double, kFeatureDim>& f, int c, int classes) const;
};

struct LinearScorerParams {
  int classes = 0;
  LinearHead cls;
  LinearHead ins;

  static LinearScorerParams zeros(int classes);
};

ScoreSheet linear_score(const LinearScorerParams& params,
                        std::span<const std::array<double, kFeatureDim>> feats);

class LinearScorer : public ProposalScorer {
 public:
  explicit LinearScorer(LinearScorerParams params) : params_(std::move(params)) {}

  ScoreSheet score(std::span<const OBox> proposals, const SceneContext& ctx,
                   RngStream& rng) const override;

  LinearScorerParams& params() { return params_; }
  const LinearScorerParams& params() const { return params_; }

 private:
  LinearScorerParams params_;
};

// Plain SGD: params -= lr * grad.
void sgd_step(std::span<double> params, std::span<const double> grad, double lr);
void sgd_step(LinearScorerParams& params, const LinearScorerParams& grad, double lr);

// d loss / d weights and bias from per-proposal logit gradients.
void accumulate_linear_grad(LinearHead& grad_head,
                            std::span<const std::array<double, kFeatureDim>> feats,
                            std::span<const double> d_logits, int classes);

}  // namespace pointteacher
