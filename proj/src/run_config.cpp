#include "melnet/run_config.hpp"

#include <algorithm>
#include <json.hpp>
#include <set>

#include "melnet/kitti.hpp"

namespace melnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kTopKeys = {
    "arch",         "num_classes",    "anchors_per_scale", "class_names", "anchors",       "anchors_file",
    "train_manifest", "val_manifest", "output_dir",        "learning_rate", "weight_decay", "batch_size",
    "epochs",       "input_size",     "seed",              "loss",        "augment",       "augment_plan",
    "ignore_iou",   "conf_threshold", "nms_iou",           "precision"};
const std::set<std::string> kLossKeys = {"box", "obj", "noobj", "cls"};
const std::set<std::string> kPlanKeys = {"flip_prob",   "crop_prob",  "min_crop", "rotate_prob",
                                         "max_rotation_deg", "jitter_prob", "brightness", "contrast",
                                         "saturation",  "min_area_kept"};

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
T get(const json& obj, const std::string& key, const std::string& where = "") {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

template <typename T>
void read_opt(const json& obj, const std::string& key, T& out, const std::string& where = "") {
  if (obj.contains(key)) out = get<T>(obj, key, where);
}

json expect_object(const json& obj, const std::string& key) {
  const json& v = obj.at(key);
  if (!v.is_object()) throw ConfigError("config key '" + key + "' must be an object");
  return v;
}

fs::path existing_file(const json& obj, const std::string& key, const fs::path& base) {
  fs::path p = get<std::string>(obj, key);
  if (p.is_relative()) p = base / p;
  p = p.lexically_normal();
  if (!fs::is_regular_file(p)) throw ConfigError("config key '" + key + "': no such file " + p.string());
  return p;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(doc, kTopKeys, "");
  if (doc.contains("loss")) reject_unknown(expect_object(doc, "loss"), kLossKeys, "loss.");
  if (doc.contains("augment_plan")) reject_unknown(expect_object(doc, "augment_plan"), kPlanKeys, "augment_plan.");

  RunConfig rc;
  rc.class_names = ClassMap::kitti().names();
  read_opt(doc, "class_names", rc.class_names);
  int num_classes = static_cast<int>(rc.class_names.size());
  read_opt(doc, "num_classes", num_classes);
  if (num_classes != static_cast<int>(rc.class_names.size())) {
    throw ConfigError("config key 'num_classes' is " + std::to_string(num_classes) + " but class_names lists " +
                      std::to_string(rc.class_names.size()) + " names");
  }
  int per_scale = 3;
  read_opt(doc, "anchors_per_scale", per_scale);
  if (per_scale < 1) throw ConfigError("config key 'anchors_per_scale' must be positive");

  // Input files first, so a bad path fails before anything else is built.
  if (!doc.contains("train_manifest")) throw ConfigError("config key 'train_manifest' is required");
  rc.train_manifest = existing_file(doc, "train_manifest", base_dir);
  if (doc.contains("val_manifest")) rc.val_manifest = existing_file(doc, "val_manifest", base_dir);
  std::optional<fs::path> anchors_file, arch_file;
  if (doc.contains("anchors_file")) anchors_file = existing_file(doc, "anchors_file", base_dir);
  const std::string arch = doc.contains("arch") ? get<std::string>(doc, "arch") : "reference";
  if (arch != "reference" && arch != "tiny") arch_file = existing_file(doc, "arch", base_dir);
  if (doc.contains("output_dir")) {
    rc.output_dir = get<std::string>(doc, "output_dir");
    if (rc.output_dir.is_relative()) rc.output_dir = (base_dir / rc.output_dir).lexically_normal();
  }

  try {
    if (arch == "reference") {
      rc.spec = reference_spec(num_classes, per_scale);
    } else if (arch == "tiny") {
      rc.spec = tiny_spec(num_classes, per_scale);
    } else {
      rc.spec = arch_from_text(read_text_file(*arch_file));
      if (doc.contains("num_classes") && rc.spec.num_classes != num_classes) {
        throw ConfigError("config key 'num_classes' disagrees with the architecture file");
      }
      if (doc.contains("anchors_per_scale") && rc.spec.anchors_per_scale != per_scale) {
        throw ConfigError("config key 'anchors_per_scale' disagrees with the architecture file");
      }
      if (static_cast<int>(rc.class_names.size()) != rc.spec.num_classes) {
        throw ConfigError("config key 'class_names' disagrees with the architecture file's num_classes");
      }
    }
  } catch (const ArchError& e) {
    throw ConfigError(std::string("config key 'arch': ") + e.what());
  }

  TrainingConfig& t = rc.training;
  t.input_size = rc.spec.input_size;
  read_opt(doc, "input_size", t.input_size);
  rc.spec.input_size = t.input_size;
  read_opt(doc, "learning_rate", t.learning_rate);
  read_opt(doc, "weight_decay", t.weight_decay);
  read_opt(doc, "batch_size", t.batch_size);
  read_opt(doc, "epochs", t.epochs);
  read_opt(doc, "seed", t.seed);
  if (doc.contains("loss")) {
    const json& l = doc.at("loss");
    read_opt(l, "box", t.loss.box, "loss.");
    read_opt(l, "obj", t.loss.obj, "loss.");
    read_opt(l, "noobj", t.loss.noobj, "loss.");
    read_opt(l, "cls", t.loss.cls, "loss.");
  }
  read_opt(doc, "augment", t.augment);
  if (doc.contains("augment_plan")) {
    const json& p = doc.at("augment_plan");
    auto& a = t.augment_plan;
    const std::string w = "augment_plan.";
    read_opt(p, "flip_prob", a.flip_prob, w);
    read_opt(p, "crop_prob", a.crop_prob, w);
    read_opt(p, "min_crop", a.min_crop, w);
    read_opt(p, "rotate_prob", a.rotate_prob, w);
    read_opt(p, "max_rotation_deg", a.max_rotation_deg, w);
    read_opt(p, "jitter_prob", a.jitter_prob, w);
    read_opt(p, "brightness", a.brightness, w);
    read_opt(p, "contrast", a.contrast, w);
    read_opt(p, "saturation", a.saturation, w);
    read_opt(p, "min_area_kept", a.min_area_kept, w);
  }
  read_opt(doc, "ignore_iou", t.ignore_iou);
  read_opt(doc, "conf_threshold", t.conf_threshold);
  read_opt(doc, "nms_iou", t.nms_iou);
  if (doc.contains("precision")) {
    const auto p = get<std::string>(doc, "precision");
    if (p != "single" && p != "double") throw ConfigError("config key 'precision' must be \"single\" or \"double\"");
    t.single_precision = p == "single";
  }

  const int want = 2 * rc.spec.anchors_per_scale;
  if (doc.contains("anchors") && anchors_file) {
    throw ConfigError("config keys 'anchors' and 'anchors_file' are mutually exclusive");
  }
  if (doc.contains("anchors")) {
    t.anchors.clear();
    for (const auto& pair : get<std::vector<std::vector<double>>>(doc, "anchors")) {
      if (pair.size() != 2) throw ConfigError("config key 'anchors' must hold [w, h] pairs");
      t.anchors.push_back({pair[0], pair[1]});
    }
  } else if (anchors_file) {
    try {
      t.anchors = anchors_from_text(read_text_file(*anchors_file));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config key 'anchors_file': ") + e.what());
    }
  } else {
    try {
      t.anchors = default_anchors(want);
    } catch (const std::invalid_argument&) {
      throw ConfigError("anchors_per_scale " + std::to_string(rc.spec.anchors_per_scale) +
                        " has no default anchors; set 'anchors' or 'anchors_file'");
    }
    const double s = t.input_size / 640.0;
    for (auto& a : t.anchors) a = {a.pw * s, a.ph * s};
  }
  std::stable_sort(t.anchors.begin(), t.anchors.end(),
                   [](const Anchor& a, const Anchor& b) { return a.area() < b.area(); });

  try {
    t.validate(rc.spec.anchors_per_scale);
    validate(rc.spec);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  return parse_run_config(text, path.parent_path());
}

}  // namespace melnet
