#pragma once

#include <map>
#include <string>
#include <vector>

#include "pointteacher/eval.hpp"
#include "pointteacher/scenes.hpp"

namespace pointteacher {

// Scene dataset file:
//   {"task": "hbb"|"obb", "classes": [names...],
//    "scenes": [{"id", "width", "height",
//                "objects": [{"class": name, "box": [cx,cy,w,h(,theta)]}]}]}
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& data, const std::string& path);

// Point annotation file: JSON list of
//   {"scene_id", "x", "y", "class": name, "object_id"?}.
// object_id is provenance for quality reporting; loaders tolerate its absence.
std::map<std::string, std::vector<PointAnnotation>> load_points(
    const std::string& path, const Dataset& data);
void save_points(const std::map<std::string, std::vector<PointAnnotation>>& points,
                 const Dataset& data, const std::string& path);

// Detections file: JSON list of {"scene_id", "class": name, "box": [...], "score"}.
std::vector<Detection> load_detections(const std::string& path, const Dataset& data);
void save_detections(const std::vector<Detection>& dets, const Dataset& data,
                     const std::string& path);

// Evolution log lines (JSONL). Lines carrying a "type" field are metadata and
// are skipped by the reader.
std::vector<EvolutionEntry> load_evolution_log(const std::string& path);

std::string box_to_json_array(const OBox& box, Task task);

}  // namespace pointteacher
