#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "melnet/box.hpp"
#include "melnet/image.hpp"
#include "melnet/kitti.hpp"

namespace melnet {

/// An image with boxes normalized to it.
struct Sample {
  std::string name;
  Image image;
  std::vector<LabeledBox> boxes;
};

/// Random access to training or evaluation samples.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Sample load(std::size_t index) const = 0;
};

class MemorySource : public SampleSource {
 public:
  explicit MemorySource(std::vector<Sample> samples) : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  Sample load(std::size_t index) const override { return samples_.at(index); }

 private:
  std::vector<Sample> samples_;
};

/// PNG images with YOLO label files, as listed in a manifest.
class ManifestSource : public SampleSource {
 public:
  ManifestSource(std::vector<DatasetEntry> entries, int num_classes)
      : entries_(std::move(entries)), num_classes_(num_classes) {}
  std::size_t size() const override { return entries_.size(); }
  Sample load(std::size_t index) const override;
  const std::vector<DatasetEntry>& entries() const { return entries_; }

 private:
  std::vector<DatasetEntry> entries_;
  int num_classes_;
};

/// Flat-coloured rectangles on a textured background; class c is drawn in
/// a fixed colour. Every image holds between 1 and `max_objects` boxes.
std::vector<Sample> synthetic_samples(int count, int size, int num_classes, std::uint64_t seed, int max_objects = 3);

/// Writes samples as PNG + YOLO label pairs under `dir` and returns the entries.
std::vector<DatasetEntry> write_samples(const std::filesystem::path& dir, std::span<const Sample> samples);

}  // namespace melnet
