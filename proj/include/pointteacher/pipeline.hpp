#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pointteacher/config.hpp"
#include "pointteacher/detector.hpp"
#include "pointteacher/dmil.hpp"
#include "pointteacher/eval.hpp"
#include "pointteacher/json_io.hpp"
#include "pointteacher/matching.hpp"
#include "pointteacher/scenes.hpp"
#include "pointteacher/scorer.hpp"

namespace pointteacher {

// Ground-truth-free view of one training scene: the trainer works from the
// raster signal and the point annotations only. Box coordinates never enter
// this struct; only the oracle scorer and the diagnostics logger see them.
struct TrainScene {
  std::string id;
  double width = 0.0;
  double height = 0.0;
  Signal base_signal;
  std::vector<PointAnnotation> points;
};

struct SceneState {
  GridDetectorParams student;
  GridDetectorParams teacher;
  std::vector<double> cls_velocity;
  std::vector<double> box_velocity;
  // Top-down aggregated map; its resolution is the head's grid.
  GridLevel aggregated;
};

struct LossTrace {
  long long iter = 0;
  double total = 0.0;
  double l_cls = 0.0;
  double l_sa = 0.0;
  double l_na = 0.0;
  int matched_points = 0;
};

struct PipelineModel {
  FpnWeights fpn = FpnWeights::identity(1);
  std::map<std::string, SceneState> scenes;  // ordered: deterministic walks
  BagRegressor regressor = BagRegressor::zeros();
  std::vector<double> regressor_velocity;
};

using EvolutionSink = std::function<void(const EvolutionEntry&)>;

class Trainer {
 public:
  // external_scorer supplies scoring when cfg.scorer == "oracle"; the linear
  // scorer lives inside the trainer so its parameters can train.
  Trainer(const RunConfig& cfg, std::vector<TrainScene> scenes, int class_count,
          ProposalScorer* external_scorer);

  // Phase 1: masked-region regression + DMIL spatial training.
  void train_phase1(int iters);
  // Phase 2: teacher matching, coarse fusion, DMIL refinement, label evolution.
  void train_phase2(int iters, const EvolutionSink& sink);

  // Runs phase 1 then phase 2 with the configured split.
  void run_all(const EvolutionSink& sink);

  PipelineModel& model() { return model_; }
  const PipelineModel& model() const { return model_; }
  const std::vector<TrainScene>& scenes() const { return scenes_; }
  const std::vector<LossTrace>& losses() const { return losses_; }
  long long iteration() const { return iter_; }

  // Student predictions for one scene at the configured threshold.
  std::vector<Prediction> predict_scene(const std::string& scene_id,
                                        bool use_teacher) const;

  // The scorer actually in use (external oracle or the internal linear one).
  ProposalScorer& active_scorer();

 private:
  double lr_at(long long iter) const;
  void sgd_update(std::vector<double>& params, std::vector<double>& velocity,
                  const std::vector<double>& grad, double lr);
  void phase1_step(const TrainScene& scene);
  void phase2_step(const TrainScene& scene, const EvolutionSink& sink);
  void ema_all();

  RunConfig cfg_;
  Task task_;
  int classes_ = 0;
  std::vector<TrainScene> scenes_;
  ProposalScorer* external_scorer_;
  std::unique_ptr<LinearScorer> linear_scorer_;
  std::optional<LinearScorerParams> linear_velocity_;
  PipelineModel model_;
  std::vector<LossTrace> losses_;
  long long iter_ = 0;
  RngStream rng_scene_;
  RngStream rng_mask_;
  RngStream rng_neg_;
  RngStream rng_score_;
};

// DMIL refinement of one seed box (bag construction + extension + regression
// refinement + scoring + top-k fusion). Returns the fused box, the refinement
// intermediates for loss computation, and the top proposal's class probability.
struct RefineOutcome {
  OBox refined;
  double top_class_prob = 0.0;
  ExtendedBag extended;
  std::vector<double> deltas;
  ScoreSheet sheet;
  BagScores scores;
  std::vector<std::array<double, kFeatureDim>> features;
};

RefineOutcome dmil_refine(const OBox& seed, int cls, const RunConfig& cfg,
                          const BagRegressor& regressor, ProposalScorer& scorer,
                          const SceneContext& ctx, RngStream& rng);

// Point-conditioned inference for scenes without trained tables: seed a box
// at each annotated point and run `infer_rounds` DMIL refinements. With the
// refinement bypassed the seed box is kept. Scores come from the scorer's
// class probability of the final box.
std::vector<Detection> infer_points(const Dataset& data,
                                    const std::map<std::string, std::vector<PointAnnotation>>& points,
                                    const RunConfig& cfg, const BagRegressor& regressor,
                                    ProposalScorer& scorer, RngStream& rng);

struct RunArtifacts {
  std::string out_dir;
  std::string checkpoint_path;
  std::string evolution_path;
  std::string metrics_path;
  std::string config_path;
  std::map<std::string, double> metrics;
};

// Full experiment: load/simulate data, train (HBB) or evolve labels (OBB),
// evaluate, and persist the four artifacts under out_dir.
RunArtifacts run_experiment(const RunConfig& cfg, const std::string& out_dir);

}  // namespace pointteacher
