#pragma once

#include <vector>

namespace melnet {

/// Corner-form box in pixels.
struct BoxXYXY {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
  bool valid() const { return xmin <= xmax && ymin <= ymax; }
  bool operator==(const BoxXYXY&) const = default;
};

/// Center form normalized by image width and height.
struct BoxYolo {
  double x_center = 0, y_center = 0, width = 0, height = 0;

  bool operator==(const BoxYolo&) const = default;
};

/// Dimension prior in input pixels.
struct Anchor {
  double pw = 0, ph = 0;

  double area() const { return pw * ph; }
  bool operator==(const Anchor&) const = default;
};

struct Detection {
  BoxXYXY box;
  double objectness = 0;
  int class_id = 0;
  double class_score = 0;

  double score() const { return objectness * class_score; }
};

/// A ground-truth box with its class.
struct LabeledBox {
  BoxYolo box;
  int class_id = 0;
};

double iou(const BoxXYXY& a, const BoxXYXY& b);

/// IoU of two boxes sharing one center (only widths and heights matter).
double wh_iou(double w1, double h1, double w2, double h2);

BoxYolo xyxy_to_yolo(const BoxXYXY& box, double img_w, double img_h);
BoxXYXY yolo_to_xyxy(const BoxYolo& box, double img_w, double img_h);

BoxXYXY clamp_box(const BoxXYXY& box, double img_w, double img_h);

}  // namespace melnet
