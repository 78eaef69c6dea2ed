#include "pointteacher/json_io.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace pointteacher {

using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open `" + path + "`");
  json j;
  in >> j;
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write `" + path + "`");
  out << text;
}

int class_index(const Dataset& data, const json& cls) {
  if (cls.is_number_integer()) {
    const int c = cls.get<int>();
    if (c < 0 || c >= static_cast<int>(data.classes.size())) {
      throw std::runtime_error("class index out of range: " + std::to_string(c));
    }
    return c;
  }
  const std::string name = cls.get<std::string>();
  for (std::size_t i = 0; i < data.classes.size(); ++i) {
    if (data.classes[i] == name) return static_cast<int>(i);
  }
  throw std::runtime_error("unknown class name `" + name + "`");
}

OBox box_from_json(const json& arr, Task task) {
  if (!arr.is_array() || arr.size() < 4 || arr.size() > 5) {
    throw std::runtime_error("box must be [cx,cy,w,h] or [cx,cy,w,h,theta]");
  }
  const double theta = arr.size() == 5 ? arr[4].get<double>() : 0.0;
  if (task == Task::kHbb && arr.size() == 5 && theta != 0.0) {
    throw std::runtime_error("hbb dataset contains a rotated box");
  }
  return OBox(arr[0].get<double>(), arr[1].get<double>(), arr[2].get<double>(),
              arr[3].get<double>(), theta);
}

json box_to_json(const OBox& box, Task task) {
  json arr = json::array({box.cx, box.cy, box.w, box.h});
  if (task == Task::kObb) arr.push_back(box.theta);
  return arr;
}

}  // namespace

std::string box_to_json_array(const OBox& box, Task task) {
  return box_to_json(box, task).dump();
}

Dataset load_dataset(const std::string& path) {
  const json j = read_json_file(path);
  Dataset data;
  const std::string task = j.at("task").get<std::string>();
  if (task == "hbb") {
    data.task = Task::kHbb;
  } else if (task == "obb") {
    data.task = Task::kObb;
  } else {
    throw std::runtime_error("task must be \"hbb\" or \"obb\"");
  }
  data.classes = j.at("classes").get<std::vector<std::string>>();
  for (const json& js : j.at("scenes")) {
    Scene scene;
    scene.id = js.at("id").get<std::string>();
    scene.width = js.at("width").get<double>();
    scene.height = js.at("height").get<double>();
    if (scene.width <= 0.0 || scene.height <= 0.0) {
      throw std::runtime_error("scene extent must be positive");
    }
    for (const json& jo : js.at("objects")) {
      SceneObject obj;
      obj.class_id = class_index(data, jo.at("class"));
      obj.gt = box_from_json(jo.at("box"), data.task);
      scene.objects.push_back(obj);
    }
    data.scenes.push_back(std::move(scene));
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  json j;
  j["task"] = data.task == Task::kHbb ? "hbb" : "obb";
  j["classes"] = data.classes;
  json scenes = json::array();
  for (const Scene& scene : data.scenes) {
    json js;
    js["id"] = scene.id;
    js["width"] = scene.width;
    js["height"] = scene.height;
    json objects = json::array();
    for (const SceneObject& obj : scene.objects) {
      json jo;
      jo["class"] = data.classes[static_cast<std::size_t>(obj.class_id)];
      jo["box"] = box_to_json(obj.gt, data.task);
      objects.push_back(std::move(jo));
    }
    js["objects"] = std::move(objects);
    scenes.push_back(std::move(js));
  }
  j["scenes"] = std::move(scenes);
  write_text_file(path, j.dump(2) + "\n");
}

std::map<std::string, std::vector<PointAnnotation>> load_points(
    const std::string& path, const Dataset& data) {
  const json j = read_json_file(path);
  if (!j.is_array()) throw std::runtime_error("points file must be a JSON list");
  std::map<std::string, std::vector<PointAnnotation>> out;
  for (const json& jp : j) {
    PointAnnotation ann;
    ann.p = {jp.at("x").get<double>(), jp.at("y").get<double>()};
    ann.class_id = class_index(data, jp.at("class"));
    ann.object_id = jp.value("object_id", -1);
    out[jp.at("scene_id").get<std::string>()].push_back(ann);
  }
  return out;
}

void save_points(const std::map<std::string, std::vector<PointAnnotation>>& points,
                 const Dataset& data, const std::string& path) {
  json j = json::array();
  for (const auto& [scene_id, anns] : points) {
    for (const PointAnnotation& ann : anns) {
      json jp;
      jp["scene_id"] = scene_id;
      jp["x"] = ann.p.x;
      jp["y"] = ann.p.y;
      jp["class"] = data.classes[static_cast<std::size_t>(ann.class_id)];
      if (ann.object_id >= 0) jp["object_id"] = ann.object_id;
      j.push_back(std::move(jp));
    }
  }
  write_text_file(path, j.dump(2) + "\n");
}

std::vector<Detection> load_detections(const std::string& path, const Dataset& data) {
  const json j = read_json_file(path);
  if (!j.is_array()) throw std::runtime_error("detections file must be a JSON list");
  std::vector<Detection> out;
  for (const json& jd : j) {
    Detection det;
    det.scene_id = jd.at("scene_id").get<std::string>();
    det.class_id = class_index(data, jd.at("class"));
    det.box = box_from_json(jd.at("box"), data.task);
    det.score = jd.at("score").get<double>();
    if (det.score < 0.0 || det.score > 1.0) {
      throw std::runtime_error("detection score must be in [0, 1]");
    }
    out.push_back(std::move(det));
  }
  return out;
}

void save_detections(const std::vector<Detection>& dets, const Dataset& data,
                     const std::string& path) {
  json j = json::array();
  for (const Detection& det : dets) {
    json jd;
    jd["scene_id"] = det.scene_id;
    jd["class"] = data.classes[static_cast<std::size_t>(det.class_id)];
    jd["box"] = box_to_json(det.box, data.task);
    jd["score"] = det.score;
    j.push_back(std::move(jd));
  }
  write_text_file(path, j.dump(2) + "\n");
}

std::vector<EvolutionEntry> load_evolution_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open `" + path + "`");
  std::vector<EvolutionEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.contains("type")) continue;  // metadata line
    EvolutionEntry e;
    e.iter = j.at("iter").get<long long>();
    e.scene_id = j.at("scene_id").get<std::string>();
    e.point_idx = j.at("point_idx").get<int>();
    auto parse_box = [](const json& arr) {
      return OBox(arr[0].get<double>(), arr[1].get<double>(), arr[2].get<double>(),
                  arr[3].get<double>(), arr.size() > 4 ? arr[4].get<double>() : 0.0);
    };
    e.theta_coarse = parse_box(j.at("theta_coarse"));
    e.theta_refined = parse_box(j.at("theta_refined"));
    e.iou_gt = j.at("iou_gt").get<double>();
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace pointteacher
