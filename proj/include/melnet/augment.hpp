#pragma once

#include <cstdint>
#include <vector>

#include "melnet/box.hpp"
#include "melnet/image.hpp"

namespace melnet {

/// Probabilities and ranges of the random augmentations. Geometry
/// operations run in the order flip, crop, rotate; colour jitter last.
struct AugmentPlan {
  double flip_prob = 0.5;
  double crop_prob = 0.5;
  /// Crop side lengths are drawn from [min_crop, 1] of the image sides.
  double min_crop = 0.6;
  double rotate_prob = 0.5;
  double max_rotation_deg = 10.0;
  double jitter_prob = 0.5;
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  /// Boxes keeping less than this fraction of their area are dropped.
  double min_area_kept = 0.25;

  static AugmentPlan none();
};

struct Augmented {
  Image image;
  std::vector<LabeledBox> boxes;
  /// Every input box was lost; callers may draw again.
  bool lost_all_boxes = false;
};

/// Deterministic in (image, boxes, plan, seed).
Augmented augment(const Image& image, const std::vector<LabeledBox>& boxes, const AugmentPlan& plan,
                  std::uint64_t seed);

void horizontal_flip(Image& image, std::vector<LabeledBox>& boxes);

/// Keeps the pixel window [x0, x0 + w) x [y0, y0 + h) and renormalizes the
/// surviving boxes to it.
void crop(Image& image, std::vector<LabeledBox>& boxes, int x0, int y0, int w, int h, double min_area_kept = 0.25);

/// Rotates about the image centre by `degrees` (image coordinates, y down):
/// x' = x cos t - y sin t, y' = x sin t + y cos t. Boxes become the
/// axis-aligned hull of their rotated corners, clipped to the image. The
/// uncovered corners are filled with gray 0.5.
void rotate(Image& image, std::vector<LabeledBox>& boxes, double degrees, double min_area_kept = 0.25);

/// Scales brightness, contrast about the mean luma, and saturation about
/// the per-pixel luma; values are clamped to [0, 1].
void color_jitter(Image& image, double brightness, double contrast, double saturation);

}  // namespace melnet
