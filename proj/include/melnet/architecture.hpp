#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace melnet {

enum class LayerKind { Conv, Residual, Upsample, Concat, Detect };

/// One line of an architecture description.
///
///   conv <out_ch> <k> <stride>   conv + batch norm + leaky ReLU
///   res <repeats>                repeats x (1x1 half-width, 3x3 full-width) with skip add
///   up                           nearest-neighbour x2 upsample
///   cat <layer>                  concatenate running features with an earlier layer's output
///   detect <scale>               linear 1x1 conv with bias emitting a head; the running
///                                features pass through unchanged for later layers
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int repeats = 0;
  int source = -1;
  int scale_id = 0;

  static LayerSpec conv(int out_channels, int kernel, int stride = 1) {
    return {LayerKind::Conv, out_channels, kernel, stride, 0, -1, 0};
  }
  static LayerSpec residual(int repeats) { return {LayerKind::Residual, 0, 0, 1, repeats, -1, 0}; }
  static LayerSpec upsample() { return {LayerKind::Upsample, 0, 0, 1, 0, -1, 0}; }
  static LayerSpec concat(int source) { return {LayerKind::Concat, 0, 0, 1, 0, source, 0}; }
  static LayerSpec detect(int scale_id) { return {LayerKind::Detect, 0, 1, 1, 0, -1, scale_id}; }

  bool operator==(const LayerSpec&) const = default;
};

struct ArchSpec {
  std::vector<LayerSpec> layers;
  int input_size = 640;
  int num_classes = 9;
  int anchors_per_scale = 3;
  /// Channel scaling applied to every non-detect conv: out * num / den, at least 1.
  int width_num = 1;
  int width_den = 1;

  int head_channels() const { return anchors_per_scale * (5 + num_classes); }
  int scaled(int channels) const;

  bool operator==(const ArchSpec&) const = default;
};

class ArchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The committed 70-conv reference layout: a residual backbone down to
/// stride 32, a three-conv neck, a coarse head at stride 32, and a fine head
/// at stride 16 fed by a 1x1 route, x2 upsample and a concat with the last
/// stride-16 backbone stage.
ArchSpec reference_spec(int num_classes = 9, int anchors_per_scale = 3);

/// Same topology at 1/16 width with every residual stage capped at one
/// repeat and 64x64 input; small enough for gradient checks and overfitting.
ArchSpec tiny_spec(int num_classes = 9, int anchors_per_scale = 3);

/// Conv layers after residual expansion, including both detect convs.
int count_conv_layers(const ArchSpec& spec);

/// Convs plus upsample and concat layers.
int count_layers_with_routing(const ArchSpec& spec);

struct LayerShape {
  int channels = 0;
  int stride = 1;
};

/// Output channels and cumulative stride of every layer; throws ArchError
/// when the layout is malformed (bad concat index, stride mismatch, wrong
/// detect layers, input size not divisible by 32).
std::vector<LayerShape> infer_layer_shapes(const ArchSpec& spec);

/// Throws ArchError when infer_layer_shapes would.
void validate(const ArchSpec& spec);

/// Line-oriented text form; see LayerSpec for the layer grammar. Header
/// lines `input_size`, `num_classes`, `anchors_per_scale` and `width n/d`
/// precede the layers; `#` starts a comment.
std::string to_text(const ArchSpec& spec);
ArchSpec arch_from_text(const std::string& text);

}  // namespace melnet
