#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointteacher/dmil.hpp"
#include "pointteacher/geometry.hpp"

namespace pointteacher {

// Thrown for user-facing configuration problems; the CLI maps it to exit 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  // Data.
  std::string task = "hbb";
  std::uint64_t seed = 0;
  std::string dataset;        // training scenes (required by `run`)
  std::string eval_dataset;   // held-out scenes, optional
  std::string points;         // annotation file; empty = simulate with m
  std::string eval_points;    // same for the eval scenes
  double m = 0.0;             // point noise level in [0, 1]

  // Schedule.
  int iterations = 8000;
  double phase1_fraction = 0.05;

  // Optimization. The grid head is tabular, so each cell parameter sees only
  // a handful of gradient steps; the step size is calibrated for that regime
  // rather than for a deep backbone.
  double lr = 0.3;
  double sgd_momentum = 0.9;
  std::vector<double> lr_decay_milestones = {2.0 / 3.0, 11.0 / 12.0};
  double lr_decay_factor = 0.1;
  double lr_cls_scale = 1.0;
  double lr_box_scale = 1.0;
  double lr_dmil_reg_scale = 1.0;
  double lr_scorer_scale = 1.0;
  double ema_momentum = 0.999;

  // Pseudo-box generation.
  double beta = 0.25;
  double jitter_r = 0.2;
  int k1 = 5;
  int k2 = 3;
  int k3 = 1;
  double alpha1 = 0.01;
  double alpha2 = 0.25;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  JitterGrid construct_grid = default_construct_grid();
  JitterGrid extend_grid = default_extend_grid();
  int u_neg = 200;

  // Phase-1 masking.
  int mask_count = 8;
  double mask_min_side = 8.0;
  double mask_max_side = 64.0;

  // Scorer.
  std::string scorer = "oracle";  // "oracle" | "linear"
  double oracle_noise_sigma = 0.5;

  // Detector.
  double pred_threshold = 0.05;
  double stride = 8.0;

  // Point-seeded boxes (phase-1 classifier bags, held-out inference).
  double seed_box_size = 16.0;
  int infer_rounds = 2;
  bool dmil_refine = true;  // false bypasses the DMIL fusion path everywhere

  // Evaluation.
  double eval_iou_thr = 0.25;
  std::array<double, 3> size_bucket_edges = {64.0, 256.0, 1024.0};

  Task task_enum() const;
  FocalParams focal() const { return {focal_alpha, focal_gamma}; }
  int phase1_iterations() const;

  // Throws ConfigError naming the offending field and its valid range.
  void validate() const;
};

RunConfig config_from_json_text(const std::string& text);
RunConfig load_config(const std::string& path,
                      const std::vector<std::string>& overrides = {});
std::string config_to_json_text(const RunConfig& cfg);

// Applies one `key=value` override with dotted paths into the JSON form.
void apply_override(std::string& json_text, const std::string& assignment);

}  // namespace pointteacher
