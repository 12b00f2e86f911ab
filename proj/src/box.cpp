#include "melnet/box.hpp"

#include <algorithm>
#include <stdexcept>

namespace melnet {

double iou(const BoxXYXY& a, const BoxXYXY& b) {
  const double iw = std::max(0.0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
  const double ih = std::max(0.0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double wh_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  const double uni = w1 * h1 + w2 * h2 - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace {
void check_dims(double img_w, double img_h) {
  if (!(img_w > 0.0) || !(img_h > 0.0)) throw std::invalid_argument("image dimensions must be positive");
}
}  // namespace

BoxXYXY clamp_box(const BoxXYXY& b, double img_w, double img_h) {
  BoxXYXY out{std::clamp(b.xmin, 0.0, img_w), std::clamp(b.ymin, 0.0, img_h), std::clamp(b.xmax, 0.0, img_w),
              std::clamp(b.ymax, 0.0, img_h)};
  return out;
}

BoxYolo xyxy_to_yolo(const BoxXYXY& box, double img_w, double img_h) {
  check_dims(img_w, img_h);
  if (!box.valid()) throw std::invalid_argument("box has xmin > xmax or ymin > ymax");
  const BoxXYXY b = clamp_box(box, img_w, img_h);
  return {(b.xmin + b.xmax) / (2.0 * img_w), (b.ymin + b.ymax) / (2.0 * img_h), (b.xmax - b.xmin) / img_w,
          (b.ymax - b.ymin) / img_h};
}

BoxXYXY yolo_to_xyxy(const BoxYolo& box, double img_w, double img_h) {
  check_dims(img_w, img_h);
  const double cx = box.x_center * img_w, cy = box.y_center * img_h;
  const double hw = box.width * img_w / 2.0, hh = box.height * img_h / 2.0;
  return {cx - hw, cy - hh, cx + hw, cy + hh};
}

}  // namespace melnet
