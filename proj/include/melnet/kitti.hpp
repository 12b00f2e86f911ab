#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "melnet/anchors.hpp"
#include "melnet/box.hpp"

namespace melnet {

class LabelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One object line of a KITTI 2D object label file.
struct KittiLabel {
  std::string type;
  double truncated = 0;
  int occluded = 0;
  double alpha = 0;
  BoxXYXY bbox;
  double height_m = 0, width_m = 0, length_m = 0;
  double x_m = 0, y_m = 0, z_m = 0;
  double rotation_y = 0;
  std::optional<double> score;
};

/// Ordered class names; the position is the class id.
class ClassMap {
 public:
  explicit ClassMap(std::vector<std::string> names);
  /// Car, Van, Truck, Pedestrian, Person_sitting, Cyclist, Tram, Misc, DontCare.
  static ClassMap kitti();

  std::optional<int> find(std::string_view name) const;
  int id(std::string_view name) const;
  const std::string& name(int id) const;
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

/// `source` names the input in error messages, which also carry the line.
std::vector<KittiLabel> parse_kitti_labels(const std::string& text, const ClassMap& classes,
                                           const std::string& source = "<labels>");
std::vector<KittiLabel> parse_label_file(const std::filesystem::path& path, const ClassMap& classes);

/// `class_id x_center y_center width height` with six decimals.
std::string format_yolo_line(int class_id, const BoxYolo& box);
std::vector<LabeledBox> parse_yolo_labels(const std::string& text, int num_classes,
                                          const std::string& source = "<labels>");
std::vector<LabeledBox> read_yolo_labels(const std::filesystem::path& path, int num_classes);

struct DatasetEntry {
  std::filesystem::path image;
  std::filesystem::path label;

  auto operator<=>(const DatasetEntry&) const = default;
};

struct ConversionReport {
  std::size_t images = 0;
  std::size_t objects = 0;
  /// Objects whose box has no area left after clamping to the image.
  std::size_t skipped = 0;
  std::vector<std::size_t> per_class;
  std::vector<DatasetEntry> entries;
};

/// Converts `<root>/label_2/*.txt` (or `<root>/training/label_2`) against the
/// PNGs in the sibling `image_2` into `<out>/labels/<stem>.txt`. Entries are
/// in file-name order and reference the original images.
ConversionReport convert_dataset(const std::filesystem::path& kitti_root, const std::filesystem::path& out_root,
                                 const ClassMap& classes);

struct DatasetIndex {
  std::vector<DatasetEntry> train;
  std::vector<DatasetEntry> val;
  std::uint64_t seed = 0;
};

/// Sorts, shuffles with `seed`, and puts the first floor(fraction * n)
/// entries in the training split.
DatasetIndex split(std::vector<DatasetEntry> entries, double fraction, std::uint64_t seed);

/// Tab-separated `image<TAB>label` lines. Absolute paths below the
/// manifest's directory are written relative to it; relative paths in a
/// manifest are resolved against the manifest's directory.
void write_manifest(const std::filesystem::path& path, std::span<const DatasetEntry> entries);
std::vector<DatasetEntry> read_manifest(const std::filesystem::path& path);

/// Box sizes in pixels after letterboxing every image to `input_size`.
std::vector<WHSample> letterboxed_sizes(std::span<const DatasetEntry> entries, int input_size, int num_classes);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace melnet
