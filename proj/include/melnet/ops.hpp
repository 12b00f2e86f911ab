#pragma once

#include <optional>
#include <vector>

#include "melnet/tensor.hpp"

namespace melnet {

struct ConvParams {
  Tensor weight;                // [out_ch, in_ch, k, k]
  std::optional<Tensor> bias;   // [out_ch]
  int stride = 1;
  int padding = 0;
};

enum class Mode { Training, Inference };

struct BatchNormParams {
  Tensor gamma;  // [ch]
  Tensor beta;   // [ch]
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  Mode mode = Mode::Training;

  static BatchNormParams identity(std::size_t channels);
};

/// floor((extent + 2 * padding - kernel) / stride) + 1, or 0 when the kernel
/// does not fit.
std::size_t conv_output_extent(std::size_t extent, int kernel, int stride, int padding);

/// 2-D cross-correlation over NCHW input.
Tensor conv2d(const Tensor& input, const ConvParams& params);

/// Per-channel normalization. Training mode uses batch statistics and
/// updates the running statistics in `params`; inference mode reads them.
Tensor batch_norm(const Tensor& input, BatchNormParams& params);

Tensor leaky_relu(const Tensor& x, double alpha = 0.1);
Tensor upsample_nearest_x2(const Tensor& input);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor residual_add(const Tensor& a, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
/// Throws std::domain_error on non-positive input.
Tensor log(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace melnet
