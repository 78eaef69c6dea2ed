// Command-line front end: dataset/point generation, training runs, AP
// evaluation, gradient checking, and multi-run robustness reports.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pointteacher/config.hpp"
#include "pointteacher/eval.hpp"
#include "pointteacher/json_io.hpp"
#include "pointteacher/pipeline.hpp"
#include "pointteacher/rng.hpp"
#include "pointteacher/scenes.hpp"
#include "pointteacher/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pointteacher;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitInternal = 2;

struct CommonOpts {
  std::string config_path;
  std::string out = "out";
  std::vector<std::string> overrides;
  bool seed_set = false;
  std::uint64_t seed = 0;
};

RunConfig resolve_config(const CommonOpts& opts) {
  std::vector<std::string> overrides = opts.overrides;
  if (opts.seed_set) overrides.push_back("seed=" + std::to_string(opts.seed));
  return load_config(opts.config_path, overrides);
}

int cmd_gen_scenes(const CommonOpts& opts, const std::string& out_file,
                   int count, double width, double height, int classes,
                   int min_objects, int max_objects, double min_size,
                   double max_size, const std::string& task, const std::string& prefix) {
  SynthConfig synth;
  synth.scene_count = count;
  synth.width = width;
  synth.height = height;
  synth.class_count = classes;
  synth.min_objects = min_objects;
  synth.max_objects = max_objects;
  synth.min_size = min_size;
  synth.max_size = max_size;
  const Task t = task == "obb" ? Task::kObb : Task::kHbb;
  Dataset data = synthesize_dataset(synth, t, opts.seed);
  if (!prefix.empty()) {
    for (Scene& scene : data.scenes) scene.id = prefix + scene.id;
  }
  save_dataset(data, out_file);
  std::cout << "wrote " << data.scenes.size() << " scenes to " << out_file << "\n";
  return kExitOk;
}

int cmd_gen_points(const CommonOpts& opts, const std::string& dataset_path,
                   double m, const std::string& out_file) {
  if (m < 0.0 || m > 1.0) throw ConfigError("--m must be in [0, 1]");
  const Dataset data = load_dataset(dataset_path);
  RngStream rng(opts.seed, "annotation");
  std::map<std::string, std::vector<PointAnnotation>> points;
  for (const Scene& scene : data.scenes) {
    points[scene.id] = simulate_points_for_scene(scene, m, data.task, rng);
  }
  save_points(points, data, out_file);
  std::size_t n = 0;
  for (const auto& [id, anns] : points) n += anns.size();
  std::cout << "wrote " << n << " points to " << out_file << "\n";
  return kExitOk;
}

int cmd_run(const CommonOpts& opts) {
  const RunConfig cfg = resolve_config(opts);
  const RunArtifacts artifacts = run_experiment(cfg, opts.out);
  std::cout << "run complete; artifacts in " << artifacts.out_dir << "\n";
  for (const char* key : {"map_train", "map_eval", "refined_iou_median_final_round"}) {
    const auto it = artifacts.metrics.find(key);
    if (it != artifacts.metrics.end()) {
      std::printf("  %s = %.4f\n", key, it->second);
    }
  }
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& detections_path,
             const std::string& dataset_path, double thr) {
  const Dataset data = load_dataset(dataset_path);
  const std::vector<Detection> dets = load_detections(detections_path, data);
  const EvalReport report = evaluate(dets, data, thr);
  fs::create_directories(opts.out);

  json j;
  j["version"] = kVersion;
  j["iou_threshold"] = report.iou_threshold;
  j["map"] = report.map;
  json per_class = json::array();
  for (const ClassEval& ce : report.per_class) {
    json jc;
    jc["class"] = data.classes[static_cast<std::size_t>(ce.class_id)];
    jc["gt_count"] = ce.gt_count;
    jc["ap"] = ce.ap;
    json pr = json::array();
    for (const PrPoint& p : ce.pr) pr.push_back({p.recall, p.precision});
    jc["pr"] = std::move(pr);
    per_class.push_back(std::move(jc));
  }
  j["per_class"] = std::move(per_class);
  json excluded = json::array();
  for (int c : report.excluded_classes) {
    excluded.push_back(data.classes[static_cast<std::size_t>(c)]);
  }
  j["excluded_classes"] = std::move(excluded);
  for (int b = 0; b < 4; ++b) {
    j[std::string("ap_") + kSizeBucketNames[static_cast<std::size_t>(b)]] =
        report.size_ap[static_cast<std::size_t>(b)];
  }
  const std::string json_path = (fs::path(opts.out) / "report.json").string();
  std::ofstream(json_path, std::ios::binary) << j.dump(2) << "\n";

  const std::string csv_path = (fs::path(opts.out) / "report.csv").string();
  std::ofstream csv(csv_path, std::ios::binary);
  csv << "# pointteacher " << kVersion << "\n";
  csv << "metric,value\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", report.map);
  csv << "map," << buf << "\n";
  for (const ClassEval& ce : report.per_class) {
    std::snprintf(buf, sizeof(buf), "%.12g", ce.ap);
    csv << "ap_" << data.classes[static_cast<std::size_t>(ce.class_id)] << "," << buf << "\n";
  }
  for (int b = 0; b < 4; ++b) {
    std::snprintf(buf, sizeof(buf), "%.12g", report.size_ap[static_cast<std::size_t>(b)]);
    csv << "ap_" << kSizeBucketNames[static_cast<std::size_t>(b)] << "," << buf << "\n";
  }
  std::printf("mAP@%.2f = %.4f (%zu classes, %zu excluded)\n", thr, report.map,
              report.per_class.size(), report.excluded_classes.size());
  std::cout << "wrote " << json_path << " and " << csv_path << "\n";
  return kExitOk;
}

// Central-difference gradient checks for every loss, mirroring the unit-test
// oracles; exits nonzero if any loss misses the tolerance.
int cmd_gradcheck(const CommonOpts& opts, int cases) {
  RngStream rng(opts.seed, "gradcheck");
  struct Row {
    std::string name;
    double max_rel_err = 0.0;
    int checked = 0;
    bool pass = true;
  };
  std::vector<Row> rows;
  const double tol = 1e-4;

  // Central differences carry ~1e-10 roundoff at these step sizes, so
  // near-zero gradients are compared against a 1e-6 floor.
  auto rel_err = [](double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
  };

  {  // focal loss wrt p
    Row row{"focal", 0.0, 0, true};
    for (int i = 0; i < cases; ++i) {
      const double p = rng.uniform(0.05, 0.95);
      const bool positive = rng.uniform(0.0, 1.0) < 0.5;
      const ScalarLoss l = focal_loss(p, positive);
      const double h = 1e-6;
      const double num =
          (focal_loss(p + h, positive).value - focal_loss(p - h, positive).value) / (2 * h);
      row.max_rel_err = std::max(row.max_rel_err, rel_err(l.dp, num));
      ++row.checked;
    }
    row.pass = row.max_rel_err <= tol;
    rows.push_back(row);
  }

  auto random_overlapping_pair = [&rng]() {
    while (true) {
      const OBox target(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(6, 20),
                        rng.uniform(6, 20), 0.0);
      const OBox pred(target.cx + rng.uniform(-4, 4), target.cy + rng.uniform(-4, 4),
                      target.w * rng.uniform(0.6, 1.5), target.h * rng.uniform(0.6, 1.5), 0.0);
      if (iou_h(to_hbox(pred), to_hbox(target)) < 0.05) continue;
      // Stay away from selection kinks so central differences are valid.
      const double margin = 1e-3;
      const HBox a = to_hbox(pred);
      const HBox b = to_hbox(target);
      if (std::abs(a.x0() - b.x0()) < margin || std::abs(a.x1() - b.x1()) < margin ||
          std::abs(a.y0() - b.y0()) < margin || std::abs(a.y1() - b.y1()) < margin) {
        continue;
      }
      return std::pair<OBox, OBox>(pred, target);
    }
  };

  auto check_box_loss = [&](const std::string& name, auto&& fn) {
    Row row{name, 0.0, 0, true};
    for (int i = 0; i < cases; ++i) {
      const auto [pred, target] = random_overlapping_pair();
      const BoxLoss l = fn(pred, target);
      const double h = 1e-6 * std::sqrt(pred.w * pred.h);
      std::array<double, 4> params = {pred.cx, pred.cy, pred.w, pred.h};
      bool skip = false;
      std::array<double, 4> numeric{};
      for (int d = 0; d < 4 && !skip; ++d) {
        auto lo = params;
        auto hi = params;
        lo[d] -= h;
        hi[d] += h;
        const OBox plo(lo[0], lo[1], lo[2], lo[3], 0.0);
        const OBox phi(hi[0], hi[1], hi[2], hi[3], 0.0);
        numeric[d] = (fn(phi, target).value - fn(plo, target).value) / (2 * h);
      }
      if (skip) continue;
      for (int d = 0; d < 4; ++d) {
        row.max_rel_err = std::max(row.max_rel_err, rel_err(l.dpred[d], numeric[d]));
      }
      ++row.checked;
    }
    row.pass = row.max_rel_err <= tol;
    rows.push_back(row);
  };

  check_box_loss("iou_hbb", [](const OBox& p, const OBox& t) {
    return iou_loss(p, t, Task::kHbb);
  });
  check_box_loss("jittering_iou", [](const OBox& p, const OBox& t) {
    return jittering_iou_loss(p, t, 0.2, Task::kHbb);
  });

  {  // dmil regression loss wrt deltas
    Row row{"dmil_reg", 0.0, 0, true};
    for (int i = 0; i < cases; ++i) {
      const OBox seed(rng.uniform(20, 40), rng.uniform(20, 40), rng.uniform(8, 16),
                      rng.uniform(8, 16), 0.0);
      JitterGrid small;
      small.scales = {0.9, 1.1};
      small.offsets = {-0.1, 0.1};
      const Bag bag = construct_bag(seed, small);
      const ExtendedBag ext = extend_bag(bag, small);
      std::vector<double> deltas(ext.boxes.size() * kDeltaDim);
      for (double& d : deltas) d = rng.uniform(-0.05, 0.05);
      const OBox target(seed.cx + 2, seed.cy - 1, seed.w * 1.2, seed.h * 0.9, 0.0);
      const DmilRegLoss res = dmil_reg_loss(ext, deltas, target, 0.2, Task::kHbb);
      // Spot-check a handful of coordinates per case.
      for (int probe = 0; probe < 4; ++probe) {
        const std::size_t at = rng.uniform_index(deltas.size());
        if (at % kDeltaDim == 4) continue;  // theta unused by hbb
        const double h = 1e-6;
        auto perturbed = deltas;
        perturbed[at] += h;
        const double up = dmil_reg_loss(ext, perturbed, target, 0.2, Task::kHbb).value;
        perturbed[at] -= 2 * h;
        const double dn = dmil_reg_loss(ext, perturbed, target, 0.2, Task::kHbb).value;
        const double num = (up - dn) / (2 * h);
        if (std::abs(num) < 1e-7 && std::abs(res.d_deltas[at]) < 1e-7) continue;
        row.max_rel_err = std::max(row.max_rel_err, rel_err(res.d_deltas[at], num));
      }
      ++row.checked;
    }
    row.pass = row.max_rel_err <= tol;
    rows.push_back(row);
  }

  (void)opts;
  bool all_pass = true;
  std::printf("%-16s %-8s %-12s %s\n", "loss", "cases", "max_rel_err", "status");
  for (const Row& row : rows) {
    std::printf("%-16s %-8d %-12.3e %s\n", row.name.c_str(), row.checked,
                row.max_rel_err, row.pass ? "PASS" : "FAIL");
    all_pass = all_pass && row.pass;
  }
  return all_pass ? kExitOk : kExitInternal;
}

int cmd_report(const CommonOpts& opts, const std::vector<std::string>& run_dirs) {
  struct Entry {
    std::string dir;
    double m = 0.0;
    std::map<std::string, double> metrics;
  };
  std::vector<Entry> entries;
  for (const std::string& dir : run_dirs) {
    const fs::path metrics_path = fs::path(dir) / "metrics.csv";
    const fs::path config_path = fs::path(dir) / "config.resolved.json";
    if (!fs::exists(metrics_path)) {
      throw ConfigError("run directory `" + dir + "` has no metrics.csv");
    }
    if (!fs::exists(config_path)) {
      throw ConfigError("run directory `" + dir + "` has no config.resolved.json");
    }
    Entry e;
    e.dir = dir;
    std::ifstream cfg_in(config_path);
    json cfg_json;
    cfg_in >> cfg_json;
    e.m = cfg_json.at("config").value("m", 0.0);
    std::ifstream in(metrics_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("metric,", 0) == 0) continue;
      const std::size_t comma = line.find(',');
      if (comma == std::string::npos) continue;
      e.metrics[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
    }
    entries.push_back(std::move(e));
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.m < b.m; });

  fs::create_directories(opts.out);
  const std::string csv_path = (fs::path(opts.out) / "robustness.csv").string();
  const std::string txt_path = (fs::path(opts.out) / "robustness.txt").string();
  const std::string svg_path = (fs::path(opts.out) / "robustness.svg").string();

  auto metric_or = [](const Entry& e, const std::string& key, double fallback) {
    const auto it = e.metrics.find(key);
    return it == e.metrics.end() ? fallback : it->second;
  };
  const char* ap_key = entries.empty() || entries.front().metrics.count("map_eval")
                           ? "map_eval"
                           : "map_train";

  {
    std::ofstream csv(csv_path, std::ios::binary);
    csv << "# pointteacher " << kVersion << "\n";
    csv << "m,map,ap_vt,ap_t,ap_s,ap_m,run_dir\n";
    char buf[64];
    for (const Entry& e : entries) {
      const std::string suffix = std::string(ap_key).substr(4);
      csv << e.m;
      for (const std::string key :
           {std::string(ap_key), "ap_vt_" + suffix, "ap_t_" + suffix,
            "ap_s_" + suffix, "ap_m_" + suffix}) {
        std::snprintf(buf, sizeof(buf), "%.12g", metric_or(e, key, 0.0));
        csv << "," << buf;
      }
      csv << "," << e.dir << "\n";
    }
  }
  {
    std::ofstream txt(txt_path, std::ios::binary);
    txt << "point noise sweep (" << ap_key << ")\n";
    txt << "  m      mAP\n";
    char buf[96];
    for (const Entry& e : entries) {
      std::snprintf(buf, sizeof(buf), "  %-5.2f  %.4f\n", e.m, metric_or(e, ap_key, 0.0));
      txt << buf;
    }
    std::ifstream echo(txt_path);
  }
  {
    // Minimal static line chart of mAP vs m.
    std::ofstream svg(svg_path, std::ios::binary);
    const int w = 480, h = 320, pad = 48;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
        << h << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad
        << "\" y2=\"" << h - pad << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\""
        << h - pad << "\" stroke=\"black\"/>\n";
    std::string path;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const double x = pad + (w - 2 * pad) * (entries[i].m / 1.0);
      const double y = h - pad - (h - 2 * pad) * metric_or(entries[i], ap_key, 0.0);
      path += (i == 0 ? "M" : "L") + std::to_string(x) + " " + std::to_string(y) + " ";
      svg << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"crimson\"/>\n";
    }
    if (!entries.empty()) {
      svg << "<path d=\"" << path << "\" stroke=\"crimson\" fill=\"none\"/>\n";
    }
    svg << "<text x=\"" << w / 2 << "\" y=\"" << h - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">point noise m</text>\n";
    svg << "<text x=\"14\" y=\"" << h / 2
        << "\" font-size=\"12\" transform=\"rotate(-90 14 " << h / 2 << ")\">mAP</text>\n";
    svg << "</svg>\n";
  }
  std::ifstream echo(txt_path);
  std::cout << echo.rdbuf();
  std::cout << "wrote " << csv_path << ", " << txt_path << ", " << svg_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point-supervised tiny object detection pipeline"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonOpts opts;
  app.add_option("--config", opts.config_path, "JSON config path")->expected(1);
  auto* seed_opt = app.add_option("--seed", opts.seed, "root seed");
  app.add_option("--out", opts.out, "output directory or file");
  app.add_option("--set", opts.overrides, "config override key=value (repeatable)");

  // gen-scenes
  auto* gen_scenes = app.add_subcommand("gen-scenes", "synthesize a scene dataset");
  int gs_count = 200, gs_classes = 4, gs_min_obj = 3, gs_max_obj = 10;
  double gs_w = 192, gs_h = 192, gs_min_size = 8, gs_max_size = 24;
  std::string gs_task = "hbb", gs_out = "scenes.json", gs_prefix;
  gen_scenes->add_option("--count", gs_count, "number of scenes");
  gen_scenes->add_option("--width", gs_w, "scene width (px)");
  gen_scenes->add_option("--height", gs_h, "scene height (px)");
  gen_scenes->add_option("--classes", gs_classes, "number of classes");
  gen_scenes->add_option("--min-objects", gs_min_obj, "objects per scene, lower bound");
  gen_scenes->add_option("--max-objects", gs_max_obj, "objects per scene, upper bound");
  gen_scenes->add_option("--min-size", gs_min_size, "object side, lower bound (px)");
  gen_scenes->add_option("--max-size", gs_max_size, "object side, upper bound (px)");
  gen_scenes->add_option("--task", gs_task, "hbb or obb");
  gen_scenes->add_option("--file", gs_out, "output dataset file");
  gen_scenes->add_option("--id-prefix", gs_prefix, "prefix for scene ids");

  // gen-points
  auto* gen_points = app.add_subcommand("gen-points", "simulate point annotations");
  std::string gp_dataset, gp_out = "points.json";
  double gp_m = 0.0;
  gen_points->add_option("--dataset", gp_dataset, "scene dataset file")->required();
  gen_points->add_option("--m", gp_m, "point noise level in [0, 1]");
  gen_points->add_option("--file", gp_out, "output points file");

  // run
  auto* run = app.add_subcommand("run", "train the pipeline end to end");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a detections file");
  std::string ev_dets, ev_dataset;
  double ev_thr = 0.25;
  eval_cmd->add_option("--detections", ev_dets, "detections JSON file")->required();
  eval_cmd->add_option("--dataset", ev_dataset, "scene dataset file")->required();
  eval_cmd->add_option("--thr", ev_thr, "IoU threshold");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference loss checks");
  int gc_cases = 100;
  gradcheck->add_option("--cases", gc_cases, "random cases per loss");

  // report
  auto* report = app.add_subcommand("report", "aggregate runs into a robustness table");
  std::vector<std::string> rp_runs;
  report->add_option("runs", rp_runs, "run output directories")->required();

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);
  opts.seed_set = seed_opt->count() > 0;

  try {
    if (*gen_scenes) {
      return cmd_gen_scenes(opts, gs_out, gs_count, gs_w, gs_h, gs_classes, gs_min_obj,
                            gs_max_obj, gs_min_size, gs_max_size, gs_task, gs_prefix);
    }
    if (*gen_points) return cmd_gen_points(opts, gp_dataset, gp_m, gp_out);
    if (*run) return cmd_run(opts);
    if (*eval_cmd) return cmd_eval(opts, ev_dets, ev_dataset, ev_thr);
    if (*gradcheck) return cmd_gradcheck(opts, gc_cases);
    if (*report) return cmd_report(opts, rp_runs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::logic_error& e) {
    std::cerr << "internal invariant violated: " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}
