#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "melnet/box.hpp"
#include "melnet/tensor.hpp"

namespace melnet {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planar RGB image with values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // [3, height, width]

  Image() = default;
  Image(int width, int height, float fill = 0.0f);

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  /// Bilinear sample at continuous pixel coordinates, pixel centres at
  /// integer + 0.5. Points outside the image return `fill`.
  float sample(int c, double x, double y, float fill) const;

  bool operator==(const Image&) const = default;
};

/// PNG decoding and encoding through libpng; any PNG colour type is
/// converted to 8-bit RGB.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
/// Width and height from the PNG header without decoding pixels.
std::pair<int, int> png_dimensions(const std::filesystem::path& path);

Image resize_bilinear(const Image& image, int width, int height);

/// Geometry of an aspect-preserving resize onto a square canvas.
struct LetterboxInfo {
  int size = 0;
  double scale = 1;
  double pad_x = 0, pad_y = 0;
  int src_width = 0, src_height = 0;
};

LetterboxInfo letterbox_info(int src_width, int src_height, int size);
/// Resizes into a `size` x `size` canvas filled with gray 0.5, centred.
Image letterbox(const Image& image, int size, LetterboxInfo* info = nullptr);
/// Maps a box normalized to the source image into canvas-normalized form.
BoxYolo to_letterbox(const BoxYolo& box, const LetterboxInfo& info);
/// Maps canvas pixels back to source-image pixels, clamped to the source.
BoxXYXY from_letterbox(const BoxXYXY& canvas_box, const LetterboxInfo& info);

/// Stacks equally sized images into [n, 3, h, w].
Tensor to_tensor(std::span<const Image> images);

}  // namespace melnet
