#include "melnet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace melnet {

Image::Image(int w, int h, float fill) : width(w), height(h), data(static_cast<std::size_t>(3) * w * h, fill) {
  if (w <= 0 || h <= 0) throw ImageError("image dimensions must be positive");
}

float Image::sample(int c, double x, double y, float fill) const {
  if (!(x >= 0 && x <= width && y >= 0 && y <= height)) return fill;
  const double fx = x - 0.5, fy = y - 0.5;
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  auto px = [&](int xx, int yy) -> double {
    return at(c, std::clamp(yy, 0, height - 1), std::clamp(xx, 0, width - 1));
  };
  return static_cast<float>((1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x0 + 1, y0)) +
                            ay * ((1 - ax) * px(x0, y0 + 1) + ax * px(x0 + 1, y0 + 1)));
}

namespace {

struct PngReader {
  png_image img;
  explicit PngReader(const std::filesystem::path& path) {
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
      throw ImageError("cannot read PNG " + path.string() + ": " + img.message);
    }
  }
  ~PngReader() { png_image_free(&img); }
};

}  // namespace

Image read_png(const std::filesystem::path& path) {
  PngReader r(path);
  r.img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(r.img));
  if (!png_image_finish_read(&r.img, nullptr, buf.data(), 0, nullptr)) {
    throw ImageError("cannot decode PNG " + path.string() + ": " + r.img.message);
  }
  Image out(static_cast<int>(r.img.width), static_cast<int>(r.img.height));
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = buf[(static_cast<std::size_t>(y) * out.width + x) * 3 + c] / 255.0f;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(static_cast<std::size_t>(3) * image.width * image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        buf[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageError("cannot write PNG " + path.string() + ": " + msg);
  }
}

std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
  PngReader r(path);
  return {static_cast<int>(r.img.width), static_cast<int>(r.img.height)};
}

Image resize_bilinear(const Image& image, int width, int height) {
  Image out(width, height);
  const double sx = static_cast<double>(image.width) / width, sy = static_cast<double>(image.height) / height;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.at(c, y, x) = image.sample(c, (x + 0.5) * sx, (y + 0.5) * sy, 0.0f);
  return out;
}

LetterboxInfo letterbox_info(int src_width, int src_height, int size) {
  if (src_width <= 0 || src_height <= 0 || size <= 0) throw ImageError("letterbox: dimensions must be positive");
  LetterboxInfo info;
  info.size = size;
  info.src_width = src_width;
  info.src_height = src_height;
  info.scale = static_cast<double>(size) / std::max(src_width, src_height);
  const int w = std::max(1, static_cast<int>(std::lround(src_width * info.scale)));
  const int h = std::max(1, static_cast<int>(std::lround(src_height * info.scale)));
  info.pad_x = (size - w) / 2;
  info.pad_y = (size - h) / 2;
  return info;
}

Image letterbox(const Image& image, int size, LetterboxInfo* info_out) {
  const LetterboxInfo info = letterbox_info(image.width, image.height, size);
  const int w = std::max(1, static_cast<int>(std::lround(image.width * info.scale)));
  const int h = std::max(1, static_cast<int>(std::lround(image.height * info.scale)));
  const Image resized = (w == image.width && h == image.height) ? image : resize_bilinear(image, w, h);
  Image out(size, size, 0.5f);
  const int px = static_cast<int>(info.pad_x), py = static_cast<int>(info.pad_y);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y + py, x + px) = resized.at(c, y, x);
  if (info_out) *info_out = info;
  return out;
}

BoxYolo to_letterbox(const BoxYolo& b, const LetterboxInfo& info) {
  const double s = info.size;
  return {(b.x_center * info.src_width * info.scale + info.pad_x) / s,
          (b.y_center * info.src_height * info.scale + info.pad_y) / s, b.width * info.src_width * info.scale / s,
          b.height * info.src_height * info.scale / s};
}

BoxXYXY from_letterbox(const BoxXYXY& b, const LetterboxInfo& info) {
  BoxXYXY out{(b.xmin - info.pad_x) / info.scale, (b.ymin - info.pad_y) / info.scale,
              (b.xmax - info.pad_x) / info.scale, (b.ymax - info.pad_y) / info.scale};
  return clamp_box(out, info.src_width, info.src_height);
}

Tensor to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("to_tensor: no images");
  const int w = images[0].width, h = images[0].height;
  std::vector<double> data;
  data.reserve(images.size() * 3 * static_cast<std::size_t>(w) * h);
  for (const auto& im : images) {
    if (im.width != w || im.height != h) throw ShapeError("to_tensor: images differ in size");
    data.insert(data.end(), im.data.begin(), im.data.end());
  }
  return Tensor::from_data({images.size(), 3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
                           std::move(data));
}

}  // namespace melnet
