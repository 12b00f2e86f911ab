#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "melnet/box.hpp"
#include "melnet/tensor.hpp"

namespace melnet {

enum class CellMask : std::uint8_t { Negative = 0, Ignore = 1, Positive = 2 };

/// Channel offsets within one anchor's 5 + C block of a head.
inline constexpr int kTx = 0, kTy = 1, kTw = 2, kTh = 3, kObj = 4, kCls = 5;

/// Training targets of one image at one head.
struct ScaleTargets {
  int grid = 0;
  int anchors = 0;
  int num_classes = 0;
  std::vector<double> values;  // [B, 5 + C, S, S]; only positive cells are meaningful
  std::vector<CellMask> mask;  // [B, S, S]

  ScaleTargets() = default;
  ScaleTargets(int grid, int anchors, int num_classes);

  int entries() const { return 5 + num_classes; }
  double& value(int b, int e, int y, int x) { return values[((b * entries() + e) * grid + y) * grid + x]; }
  double value(int b, int e, int y, int x) const { return values[((b * entries() + e) * grid + y) * grid + x]; }
  CellMask& cell(int b, int y, int x) { return mask[(b * grid + y) * grid + x]; }
  CellMask cell(int b, int y, int x) const { return mask[(b * grid + y) * grid + x]; }
};

/// Per-scale targets of one image; scale 0 is the stride-32 head.
struct TargetTensor {
  std::vector<ScaleTargets> scales;
  /// Boxes left unassigned because every anchor slot at their cell was taken.
  int dropped = 0;
};

/// Anchor assignment and target encoding.
///
/// The responsible anchor is the one, over all scales, whose width/height
/// best overlaps the box at a shared center. Its cell is floor(center * S)
/// and the targets invert the decode equations: t_x = logit(fractional
/// center), t_w = ln(w / p_w). If that slot already holds a box the next
/// best anchor is used. Other anchors whose wh-IoU exceeds `ignore_iou`
/// are masked ignore at their own cell; everything else is negative.
TargetTensor encode_targets(std::span<const LabeledBox> gt, const std::vector<std::vector<Anchor>>& anchors_by_scale,
                            std::span<const int> grid_sizes, int input_size, int num_classes,
                            double ignore_iou = 0.5);

/// Decodes a head [n, B * (5 + C), S, S] into detections per image:
/// center = (sigmoid(t) + cell) * stride, size = prior * exp(t), objectness
/// and class probabilities by sigmoid, score = objectness * best class
/// probability. Boxes are clamped to the S * stride canvas; detections with
/// score below `conf_threshold` are dropped.
std::vector<std::vector<Detection>> decode(const Tensor& head, std::span<const Anchor> anchors, double stride,
                                           double conf_threshold, int num_classes);

/// Unclamped box of one anchor-cell from its four regression logits.
BoxXYXY decode_box(double tx, double ty, double tw, double th, int cell_x, int cell_y, const Anchor& anchor,
                   double stride);

double sigmoid_scalar(double x);
/// Inverse sigmoid; the argument is clamped into [1e-6, 1 - 1e-6].
double logit(double p);

}  // namespace melnet
