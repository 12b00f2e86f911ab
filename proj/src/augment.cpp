#include "melnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "melnet/rng.hpp"

namespace melnet {

AugmentPlan AugmentPlan::none() {
  AugmentPlan p;
  p.flip_prob = p.crop_prob = p.rotate_prob = p.jitter_prob = 0;
  return p;
}

void horizontal_flip(Image& image, std::vector<LabeledBox>& boxes) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y) {
      float* row = &image.at(c, y, 0);
      std::reverse(row, row + image.width);
    }
  for (auto& b : boxes) b.box.x_center = 1.0 - b.box.x_center;
}

namespace {

// Clips pixel boxes to the window and keeps those retaining enough area,
// renormalized to the window size.
std::vector<LabeledBox> clip_boxes(const std::vector<std::pair<BoxXYXY, int>>& px, const std::vector<double>& areas,
                                   double w, double h, double min_area_kept) {
  std::vector<LabeledBox> out;
  for (std::size_t i = 0; i < px.size(); ++i) {
    const BoxXYXY c = clamp_box(px[i].first, w, h);
    if (c.width() <= 0 || c.height() <= 0 || c.area() < min_area_kept * areas[i]) continue;
    out.push_back({xyxy_to_yolo(c, w, h), px[i].second});
  }
  return out;
}

}  // namespace

void crop(Image& image, std::vector<LabeledBox>& boxes, int x0, int y0, int w, int h, double min_area_kept) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > image.width || y0 + h > image.height) {
    throw ImageError("crop window outside the image");
  }
  Image out(w, h);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y) std::copy_n(&image.at(c, y0 + y, x0), w, &out.at(c, y, 0));

  std::vector<std::pair<BoxXYXY, int>> px;
  std::vector<double> areas;
  for (const auto& b : boxes) {
    BoxXYXY p = yolo_to_xyxy(b.box, image.width, image.height);
    areas.push_back(p.area());
    px.push_back({{p.xmin - x0, p.ymin - y0, p.xmax - x0, p.ymax - y0}, b.class_id});
  }
  boxes = clip_boxes(px, areas, w, h, min_area_kept);
  image = std::move(out);
}

void rotate(Image& image, std::vector<LabeledBox>& boxes, double degrees, double min_area_kept) {
  const double t = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(t), sn = std::sin(t);
  const double cx = image.width / 2.0, cy = image.height / 2.0;

  Image out(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      // Inverse rotation of the output pixel centre.
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double sx = cs * dx + sn * dy + cx, sy = -sn * dx + cs * dy + cy;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = image.sample(c, sx, sy, 0.5f);
    }

  std::vector<std::pair<BoxXYXY, int>> px;
  std::vector<double> areas;
  for (const auto& b : boxes) {
    const BoxXYXY p = yolo_to_xyxy(b.box, image.width, image.height);
    BoxXYXY hull{1e300, 1e300, -1e300, -1e300};
    for (double X : {p.xmin, p.xmax})
      for (double Y : {p.ymin, p.ymax}) {
        const double rx = cs * (X - cx) - sn * (Y - cy) + cx, ry = sn * (X - cx) + cs * (Y - cy) + cy;
        hull = {std::min(hull.xmin, rx), std::min(hull.ymin, ry), std::max(hull.xmax, rx), std::max(hull.ymax, ry)};
      }
    areas.push_back(hull.area());
    px.push_back({hull, b.class_id});
  }
  boxes = clip_boxes(px, areas, image.width, image.height, min_area_kept);
  image = std::move(out);
}

void color_jitter(Image& image, double brightness, double contrast, double saturation) {
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  float* r = image.data.data();
  float* g = r + plane;
  float* b = g + plane;
  auto luma = [&](std::size_t i) { return 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]; };
  double mean = 0;
  for (std::size_t i = 0; i < plane; ++i) mean += luma(i) * brightness;
  mean /= static_cast<double>(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    double rgb[3] = {r[i] * brightness, g[i] * brightness, b[i] * brightness};
    for (double& v : rgb) v = (v - mean) * contrast + mean;
    const double l = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
    for (double& v : rgb) v = std::clamp(l + (v - l) * saturation, 0.0, 1.0);
    r[i] = static_cast<float>(rgb[0]);
    g[i] = static_cast<float>(rgb[1]);
    b[i] = static_cast<float>(rgb[2]);
  }
}

Augmented augment(const Image& image, const std::vector<LabeledBox>& boxes, const AugmentPlan& plan,
                  std::uint64_t seed) {
  Rng rng(seed);
  Augmented a{image, boxes, false};
  // Every draw happens regardless of the outcome so the stream stays aligned.
  const bool flip = rng.bernoulli(plan.flip_prob);
  const bool do_crop = rng.bernoulli(plan.crop_prob);
  const double cw = rng.uniform(plan.min_crop, 1.0), ch = rng.uniform(plan.min_crop, 1.0);
  const double ox = rng.uniform(), oy = rng.uniform();
  const bool do_rotate = rng.bernoulli(plan.rotate_prob);
  const double angle = rng.uniform(-plan.max_rotation_deg, plan.max_rotation_deg);
  const bool jitter = rng.bernoulli(plan.jitter_prob);
  const double fb = 1 + rng.uniform(-plan.brightness, plan.brightness);
  const double fc = 1 + rng.uniform(-plan.contrast, plan.contrast);
  const double fs = 1 + rng.uniform(-plan.saturation, plan.saturation);

  if (flip) horizontal_flip(a.image, a.boxes);
  if (do_crop) {
    const int w = std::max(1, static_cast<int>(std::lround(cw * a.image.width)));
    const int h = std::max(1, static_cast<int>(std::lround(ch * a.image.height)));
    const int x0 = static_cast<int>(std::floor(ox * (a.image.width - w + 1)));
    const int y0 = static_cast<int>(std::floor(oy * (a.image.height - h + 1)));
    crop(a.image, a.boxes, std::min(x0, a.image.width - w), std::min(y0, a.image.height - h), w, h,
         plan.min_area_kept);
  }
  if (do_rotate && angle != 0.0) rotate(a.image, a.boxes, angle, plan.min_area_kept);
  if (jitter) color_jitter(a.image, fb, fc, fs);
  a.lost_all_boxes = !boxes.empty() && a.boxes.empty();
  return a;
}

}  // namespace melnet
