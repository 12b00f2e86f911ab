#include "melnet/kitti.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "melnet/image.hpp"
#include "melnet/rng.hpp"

namespace fs = std::filesystem;

namespace melnet {

ClassMap::ClassMap(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw std::invalid_argument("class map is empty");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw std::invalid_argument("class map has an empty name");
    for (std::size_t j = 0; j < i; ++j) {
      if (names_[i] == names_[j]) throw std::invalid_argument("class map repeats " + names_[i]);
    }
  }
}

ClassMap ClassMap::kitti() {
  return ClassMap({"Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc", "DontCare"});
}

std::optional<int> ClassMap::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

int ClassMap::id(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw LabelError("unknown class " + std::string(name));
}

const std::string& ClassMap::name(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("class id " + std::to_string(id) + " out of range");
  return names_[id];
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::istringstream ls(line);
  std::vector<std::string> f;
  std::string tok;
  while (ls >> tok) f.push_back(tok);
  return f;
}

double to_real(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !std::isfinite(v)) throw LabelError(where + ": cannot parse number '" + s + "'");
  return v;
}

int to_int(const std::string& s, const std::string& where) {
  const double v = to_real(s, where);
  if (v != std::floor(v)) throw LabelError(where + ": expected an integer, got '" + s + "'");
  return static_cast<int>(v);
}

template <typename F>
void for_each_line(const std::string& text, F&& f) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    f(line, lineno);
  }
}

}  // namespace

std::vector<KittiLabel> parse_kitti_labels(const std::string& text, const ClassMap& classes, const std::string& source) {
  std::vector<KittiLabel> out;
  for_each_line(text, [&](const std::string& line, int lineno) {
    const std::string where = source + ":" + std::to_string(lineno);
    const auto f = split_fields(line);
    if (f.size() != 15 && f.size() != 16) {
      throw LabelError(where + ": expected 15 or 16 fields, found " + std::to_string(f.size()));
    }
    if (!classes.find(f[0])) throw LabelError(where + ": unknown class " + f[0]);
    KittiLabel l;
    l.type = f[0];
    l.truncated = to_real(f[1], where);
    l.occluded = to_int(f[2], where);
    l.alpha = to_real(f[3], where);
    l.bbox = {to_real(f[4], where), to_real(f[5], where), to_real(f[6], where), to_real(f[7], where)};
    if (!l.bbox.valid()) throw LabelError(where + ": bounding box has min > max");
    l.height_m = to_real(f[8], where);
    l.width_m = to_real(f[9], where);
    l.length_m = to_real(f[10], where);
    l.x_m = to_real(f[11], where);
    l.y_m = to_real(f[12], where);
    l.z_m = to_real(f[13], where);
    l.rotation_y = to_real(f[14], where);
    if (f.size() == 16) l.score = to_real(f[15], where);
    out.push_back(std::move(l));
  });
  return out;
}

std::vector<KittiLabel> parse_label_file(const fs::path& path, const ClassMap& classes) {
  return parse_kitti_labels(read_text_file(path), classes, path.string());
}

std::string format_yolo_line(int class_id, const BoxYolo& b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f\n", class_id, b.x_center, b.y_center, b.width, b.height);
  return buf;
}

std::vector<LabeledBox> parse_yolo_labels(const std::string& text, int num_classes, const std::string& source) {
  std::vector<LabeledBox> out;
  for_each_line(text, [&](const std::string& line, int lineno) {
    const std::string where = source + ":" + std::to_string(lineno);
    const auto f = split_fields(line);
    if (f.size() != 5) throw LabelError(where + ": expected 5 fields, found " + std::to_string(f.size()));
    LabeledBox b;
    b.class_id = to_int(f[0], where);
    if (b.class_id < 0 || b.class_id >= num_classes) throw LabelError(where + ": class id out of range");
    b.box = {to_real(f[1], where), to_real(f[2], where), to_real(f[3], where), to_real(f[4], where)};
    for (double v : {b.box.x_center, b.box.y_center, b.box.width, b.box.height}) {
      if (v < 0 || v > 1) throw LabelError(where + ": coordinate outside [0, 1]");
    }
    out.push_back(b);
  });
  return out;
}

std::vector<LabeledBox> read_yolo_labels(const fs::path& path, int num_classes) {
  return parse_yolo_labels(read_text_file(path), num_classes, path.string());
}

ConversionReport convert_dataset(const fs::path& kitti_root, const fs::path& out_root, const ClassMap& classes) {
  fs::path base = kitti_root;
  if (!fs::is_directory(base / "label_2") && fs::is_directory(base / "training" / "label_2")) base /= "training";
  const fs::path label_dir = base / "label_2", image_dir = base / "image_2";
  if (!fs::is_directory(label_dir)) throw std::runtime_error("no label_2 directory under " + kitti_root.string());

  std::vector<fs::path> labels;
  for (const auto& e : fs::directory_iterator(label_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") labels.push_back(e.path());
  }
  std::sort(labels.begin(), labels.end());

  std::string missing;
  for (const auto& lp : labels) {
    const fs::path image = image_dir / (lp.stem().string() + ".png");
    if (!fs::exists(image)) missing += "\n  " + image.string() + " (for " + lp.filename().string() + ")";
  }
  if (!missing.empty()) throw std::runtime_error("missing images:" + missing);

  ConversionReport report;
  report.per_class.assign(classes.size(), 0);
  fs::create_directories(out_root / "labels");
  for (const auto& lp : labels) {
    const fs::path image = image_dir / (lp.stem().string() + ".png");
    const auto [w, h] = png_dimensions(image);
    std::string text;
    for (const auto& l : parse_label_file(lp, classes)) {
      const BoxYolo y = xyxy_to_yolo(l.bbox, w, h);
      if (!(y.width > 0) || !(y.height > 0)) {
        ++report.skipped;
        continue;
      }
      const int id = classes.id(l.type);
      text += format_yolo_line(id, y);
      ++report.per_class[id];
      ++report.objects;
    }
    const fs::path out_label = out_root / "labels" / (lp.stem().string() + ".txt");
    write_text_file(out_label, text);
    report.entries.push_back({fs::absolute(image).lexically_normal(), fs::absolute(out_label).lexically_normal()});
    ++report.images;
  }
  return report;
}

DatasetIndex split(std::vector<DatasetEntry> entries, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0 && fraction <= 1)) throw std::invalid_argument("split fraction must lie in [0, 1]");
  std::sort(entries.begin(), entries.end());
  Rng rng(seed);
  rng.shuffle(entries);
  // The small slack keeps products like 0.8 * 10 from rounding below 8.
  const auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(entries.size()) + 1e-9));
  DatasetIndex idx;
  idx.seed = seed;
  idx.train.assign(entries.begin(), entries.begin() + n_train);
  idx.val.assign(entries.begin() + n_train, entries.end());
  return idx;
}

void write_manifest(const fs::path& path, std::span<const DatasetEntry> entries) {
  const fs::path dir = fs::absolute(path).parent_path().lexically_normal();
  // Files below the manifest's directory are written relative to it.
  auto form = [&](const fs::path& p) {
    if (p.is_relative()) return p.string();
    const fs::path rel = p.lexically_normal().lexically_relative(dir);
    return rel.empty() || *rel.begin() == ".." ? p.string() : rel.string();
  };
  std::string text;
  for (const auto& e : entries) text += form(e.image) + "\t" + form(e.label) + "\n";
  write_text_file(path, text);
}

std::vector<DatasetEntry> read_manifest(const fs::path& path) {
  const fs::path dir = path.parent_path();
  std::vector<DatasetEntry> out;
  for_each_line(read_text_file(path), [&](const std::string& line, int lineno) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw LabelError(path.string() + ":" + std::to_string(lineno) + ": expected `image<TAB>label`");
    }
    fs::path image = line.substr(0, tab), label = line.substr(tab + 1);
    if (image.is_relative()) image = dir / image;
    if (label.is_relative()) label = dir / label;
    out.push_back({image, label});
  });
  return out;
}

std::vector<WHSample> letterboxed_sizes(std::span<const DatasetEntry> entries, int input_size, int num_classes) {
  std::vector<WHSample> out;
  for (const auto& e : entries) {
    const auto [w, h] = png_dimensions(e.image);
    const LetterboxInfo info = letterbox_info(w, h, input_size);
    for (const auto& b : read_yolo_labels(e.label, num_classes)) {
      const BoxYolo lb = to_letterbox(b.box, info);
      if (lb.width > 0 && lb.height > 0) out.push_back({lb.width * input_size, lb.height * input_size});
    }
  }
  return out;
}

}  // namespace melnet
