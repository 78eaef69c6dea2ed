#include "pointteacher/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pointteacher {

using nlohmann::json;

Task RunConfig::task_enum() const {
  return task == "obb" ? Task::kObb : Task::kHbb;
}

int RunConfig::phase1_iterations() const {
  return static_cast<int>(std::lround(iterations * phase1_fraction));
}

namespace {

void require(bool ok, const std::string& field, const std::string& range) {
  if (!ok) {
    throw ConfigError("config field `" + field + "` out of range: expected " + range);
  }
}

json grid_to_json(const JitterGrid& g) {
  json j;
  j["scales"] = g.scales;
  j["offsets"] = g.offsets;
  j["theta_offsets"] = g.theta_offsets;
  return j;
}

JitterGrid grid_from_json(const json& j, const JitterGrid& defaults) {
  JitterGrid g = defaults;
  if (j.contains("scales")) g.scales = j.at("scales").get<std::vector<double>>();
  if (j.contains("offsets")) g.offsets = j.at("offsets").get<std::vector<double>>();
  if (j.contains("theta_offsets")) {
    g.theta_offsets = j.at("theta_offsets").get<std::vector<double>>();
  }
  return g;
}

}  // namespace

void RunConfig::validate() const {
  require(task == "hbb" || task == "obb", "task", "\"hbb\" or \"obb\"");
  require(m >= 0.0 && m <= 1.0, "m", "[0, 1]");
  require(iterations >= 1, "iterations", ">= 1");
  require(phase1_fraction >= 0.0 && phase1_fraction <= 1.0, "phase1_fraction", "[0, 1]");
  require(lr > 0.0, "lr", "> 0");
  require(sgd_momentum >= 0.0 && sgd_momentum < 1.0, "sgd_momentum", "[0, 1)");
  require(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0, "lr_decay_factor", "(0, 1]");
  for (double ms : lr_decay_milestones) {
    require(ms > 0.0 && ms < 1.0, "lr_decay_milestones", "fractions in (0, 1)");
  }
  require(lr_cls_scale > 0.0, "lr_cls_scale", "> 0");
  require(lr_box_scale > 0.0, "lr_box_scale", "> 0");
  require(lr_dmil_reg_scale > 0.0, "lr_dmil_reg_scale", "> 0");
  require(lr_scorer_scale > 0.0, "lr_scorer_scale", "> 0");
  require(ema_momentum > 0.0 && ema_momentum < 1.0, "ema_momentum", "(0, 1)");
  require(beta >= 0.0 && beta <= 1.0, "beta", "[0, 1]");
  require(jitter_r >= 0.0 && jitter_r < 1.0, "jitter_r", "[0, 1)");
  require(k1 >= 1, "k1", ">= 1");
  require(k2 >= 1 && k2 <= k1, "k2", "[1, k1]");
  require(k3 >= 1 && k3 <= construct_grid.size() * extend_grid.size(), "k3",
          "[1, construct*extend grid size]");
  require(alpha1 >= 0.0, "alpha1", ">= 0");
  require(alpha2 >= 0.0, "alpha2", ">= 0");
  require(focal_alpha > 0.0 && focal_alpha < 1.0, "focal_alpha", "(0, 1)");
  require(focal_gamma >= 0.0, "focal_gamma", ">= 0");
  require(!construct_grid.scales.empty() && !construct_grid.offsets.empty() &&
              !construct_grid.theta_offsets.empty(),
          "construct_grid", "non-empty scale/offset sets");
  require(!extend_grid.scales.empty() && !extend_grid.offsets.empty() &&
              !extend_grid.theta_offsets.empty(),
          "extend_grid", "non-empty scale/offset sets");
  for (double s : construct_grid.scales) {
    require(s > 0.0, "construct_grid.scales", "> 0");
  }
  for (double s : extend_grid.scales) {
    require(s > 0.0, "extend_grid.scales", "> 0");
  }
  require(u_neg >= 0, "u_neg", ">= 0");
  require(mask_count >= 1, "mask_count", ">= 1");
  require(mask_min_side > 0.0 && mask_max_side >= mask_min_side, "mask_min_side",
          "0 < min <= max");
  require(scorer == "oracle" || scorer == "linear", "scorer", "\"oracle\" or \"linear\"");
  require(oracle_noise_sigma >= 0.0, "oracle_noise_sigma", ">= 0");
  require(pred_threshold >= 0.0 && pred_threshold <= 1.0, "pred_threshold", "[0, 1]");
  require(stride > 0.0, "stride", "> 0");
  require(seed_box_size > 0.0, "seed_box_size", "> 0");
  require(infer_rounds >= 0, "infer_rounds", ">= 0");
  require(eval_iou_thr > 0.0 && eval_iou_thr < 1.0, "eval_iou_thr", "(0, 1)");
  require(size_bucket_edges[0] > 0.0 && size_bucket_edges[0] < size_bucket_edges[1] &&
              size_bucket_edges[1] < size_bucket_edges[2],
          "size_bucket_edges", "ascending positive areas");
}

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  try {
    cfg.task = j.value("task", cfg.task);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.dataset = j.value("dataset", cfg.dataset);
    cfg.eval_dataset = j.value("eval_dataset", cfg.eval_dataset);
    cfg.points = j.value("points", cfg.points);
    cfg.eval_points = j.value("eval_points", cfg.eval_points);
    cfg.m = j.value("m", cfg.m);
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.phase1_fraction = j.value("phase1_fraction", cfg.phase1_fraction);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.sgd_momentum = j.value("sgd_momentum", cfg.sgd_momentum);
    if (j.contains("lr_decay_milestones")) {
      cfg.lr_decay_milestones = j.at("lr_decay_milestones").get<std::vector<double>>();
    }
    cfg.lr_decay_factor = j.value("lr_decay_factor", cfg.lr_decay_factor);
    cfg.lr_cls_scale = j.value("lr_cls_scale", cfg.lr_cls_scale);
    cfg.lr_box_scale = j.value("lr_box_scale", cfg.lr_box_scale);
    cfg.lr_dmil_reg_scale = j.value("lr_dmil_reg_scale", cfg.lr_dmil_reg_scale);
    cfg.lr_scorer_scale = j.value("lr_scorer_scale", cfg.lr_scorer_scale);
    cfg.ema_momentum = j.value("ema_momentum", cfg.ema_momentum);
    cfg.beta = j.value("beta", cfg.beta);
    cfg.jitter_r = j.value("jitter_r", cfg.jitter_r);
    cfg.k1 = j.value("k1", cfg.k1);
    cfg.k2 = j.value("k2", cfg.k2);
    cfg.k3 = j.value("k3", cfg.k3);
    cfg.alpha1 = j.value("alpha1", cfg.alpha1);
    cfg.alpha2 = j.value("alpha2", cfg.alpha2);
    cfg.focal_alpha = j.value("focal_alpha", cfg.focal_alpha);
    cfg.focal_gamma = j.value("focal_gamma", cfg.focal_gamma);
    if (j.contains("construct_grid")) {
      cfg.construct_grid = grid_from_json(j.at("construct_grid"), cfg.construct_grid);
    }
    if (j.contains("extend_grid")) {
      cfg.extend_grid = grid_from_json(j.at("extend_grid"), cfg.extend_grid);
    }
    cfg.u_neg = j.value("u_neg", cfg.u_neg);
    cfg.mask_count = j.value("mask_count", cfg.mask_count);
    cfg.mask_min_side = j.value("mask_min_side", cfg.mask_min_side);
    cfg.mask_max_side = j.value("mask_max_side", cfg.mask_max_side);
    cfg.scorer = j.value("scorer", cfg.scorer);
    cfg.oracle_noise_sigma = j.value("oracle_noise_sigma", cfg.oracle_noise_sigma);
    cfg.pred_threshold = j.value("pred_threshold", cfg.pred_threshold);
    cfg.stride = j.value("stride", cfg.stride);
    cfg.seed_box_size = j.value("seed_box_size", cfg.seed_box_size);
    cfg.infer_rounds = j.value("infer_rounds", cfg.infer_rounds);
    cfg.dmil_refine = j.value("dmil_refine", cfg.dmil_refine);
    cfg.eval_iou_thr = j.value("eval_iou_thr", cfg.eval_iou_thr);
    if (j.contains("size_bucket_edges")) {
      const auto edges = j.at("size_bucket_edges").get<std::vector<double>>();
      if (edges.size() != 3) throw ConfigError("size_bucket_edges must have 3 entries");
      cfg.size_bucket_edges = {edges[0], edges[1], edges[2]};
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::string text = "{}";
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config `" + path + "`");
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  for (const std::string& ov : overrides) apply_override(text, ov);
  return config_from_json_text(text);
}

std::string config_to_json_text(const RunConfig& cfg) {
  json j;
  j["task"] = cfg.task;
  j["seed"] = cfg.seed;
  j["dataset"] = cfg.dataset;
  j["eval_dataset"] = cfg.eval_dataset;
  j["points"] = cfg.points;
  j["eval_points"] = cfg.eval_points;
  j["m"] = cfg.m;
  j["iterations"] = cfg.iterations;
  j["phase1_fraction"] = cfg.phase1_fraction;
  j["lr"] = cfg.lr;
  j["sgd_momentum"] = cfg.sgd_momentum;
  j["lr_decay_milestones"] = cfg.lr_decay_milestones;
  j["lr_decay_factor"] = cfg.lr_decay_factor;
  j["lr_cls_scale"] = cfg.lr_cls_scale;
  j["lr_box_scale"] = cfg.lr_box_scale;
  j["lr_dmil_reg_scale"] = cfg.lr_dmil_reg_scale;
  j["lr_scorer_scale"] = cfg.lr_scorer_scale;
  j["ema_momentum"] = cfg.ema_momentum;
  j["beta"] = cfg.beta;
  j["jitter_r"] = cfg.jitter_r;
  j["k1"] = cfg.k1;
  j["k2"] = cfg.k2;
  j["k3"] = cfg.k3;
  j["alpha1"] = cfg.alpha1;
  j["alpha2"] = cfg.alpha2;
  j["focal_alpha"] = cfg.focal_alpha;
  j["focal_gamma"] = cfg.focal_gamma;
  j["construct_grid"] = grid_to_json(cfg.construct_grid);
  j["extend_grid"] = grid_to_json(cfg.extend_grid);
  j["u_neg"] = cfg.u_neg;
  j["mask_count"] = cfg.mask_count;
  j["mask_min_side"] = cfg.mask_min_side;
  j["mask_max_side"] = cfg.mask_max_side;
  j["scorer"] = cfg.scorer;
  j["oracle_noise_sigma"] = cfg.oracle_noise_sigma;
  j["pred_threshold"] = cfg.pred_threshold;
  j["stride"] = cfg.stride;
  j["seed_box_size"] = cfg.seed_box_size;
  j["infer_rounds"] = cfg.infer_rounds;
  j["dmil_refine"] = cfg.dmil_refine;
  j["eval_iou_thr"] = cfg.eval_iou_thr;
  j["size_bucket_edges"] = std::vector<double>(cfg.size_bucket_edges.begin(),
                                               cfg.size_bucket_edges.end());
  return j.dump(2);
}

void apply_override(std::string& json_text, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value: `" + assignment + "`");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  json parsed_value;
  try {
    parsed_value = json::parse(value);
  } catch (const json::exception&) {
    parsed_value = value;  // plain string
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos
                                                   ? std::string::npos
                                                   : dot - start);
    if (part.empty()) throw ConfigError("override key has an empty segment: `" + key + "`");
    if (dot == std::string::npos) {
      (*node)[part] = parsed_value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
  json_text = root.dump();
}

}  // namespace pointteacher
