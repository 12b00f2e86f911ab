#include "melnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "melnet/rng.hpp"

namespace melnet {

Sample ManifestSource::load(std::size_t index) const {
  const auto& e = entries_.at(index);
  return {e.image.stem().string(), read_png(e.image), read_yolo_labels(e.label, num_classes_)};
}

std::vector<Sample> synthetic_samples(int count, int size, int num_classes, std::uint64_t seed, int max_objects) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (int n = 0; n < count; ++n) {
    Sample s;
    char name[32];
    std::snprintf(name, sizeof name, "synthetic_%04d", n);
    s.name = name;
    s.image = Image(size, size);
    const double base = rng.uniform(0.3, 0.6);
    for (auto& v : s.image.data) v = static_cast<float>(base + rng.uniform(-0.05, 0.05));
    const int objects = 1 + static_cast<int>(rng.below(max_objects));
    for (int k = 0; k < objects; ++k) {
      const int cls = static_cast<int>(rng.below(num_classes));
      const int w = static_cast<int>(rng.uniform(0.2, 0.6) * size), h = static_cast<int>(rng.uniform(0.2, 0.6) * size);
      const int x0 = static_cast<int>(rng.below(size - w + 1)), y0 = static_cast<int>(rng.below(size - h + 1));
      // Distinct colour per class from the corners of the RGB cube.
      const float rgb[3] = {static_cast<float>((cls + 1) & 1), static_cast<float>(((cls + 1) >> 1) & 1),
                            static_cast<float>(((cls + 1) >> 2) & 1)};
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + h; ++y)
          for (int x = x0; x < x0 + w; ++x) s.image.at(c, y, x) = 0.1f + 0.8f * rgb[c] * (1.0f - 0.1f * (cls / 7));
      s.boxes.push_back({xyxy_to_yolo({static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + w),
                                       static_cast<double>(y0 + h)},
                                      size, size),
                         cls});
    }
    // Later rectangles paint over earlier ones; drop boxes hidden by more
    // than half so labels describe what is visible.
    std::vector<LabeledBox> visible;
    for (std::size_t k = 0; k < s.boxes.size(); ++k) {
      const BoxXYXY a = yolo_to_xyxy(s.boxes[k].box, size, size);
      double covered = 0;
      for (std::size_t j = k + 1; j < s.boxes.size(); ++j) {
        const BoxXYXY b = yolo_to_xyxy(s.boxes[j].box, size, size);
        const double iw = std::max(0.0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
        const double ih = std::max(0.0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
        covered = std::max(covered, iw * ih / a.area());
      }
      if (covered <= 0.5) visible.push_back(s.boxes[k]);
    }
    s.boxes = std::move(visible);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<DatasetEntry> write_samples(const std::filesystem::path& dir, std::span<const Sample> samples) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  std::vector<DatasetEntry> entries;
  for (const auto& s : samples) {
    DatasetEntry e{dir / "images" / (s.name + ".png"), dir / "labels" / (s.name + ".txt")};
    write_png(e.image, s.image);
    std::string text;
    for (const auto& b : s.boxes) text += format_yolo_line(b.class_id, b.box);
    write_text_file(e.label, text);
    entries.push_back(e);
  }
  return entries;
}

}  // namespace melnet
