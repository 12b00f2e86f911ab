#include "melnet/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

extern "C" void openblas_set_num_threads(int num_threads);

namespace melnet {

namespace {

void require_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(op) + " expects an NCHW tensor, got " + to_string(t.shape()));
  }
}

// Single-threaded BLAS keeps every reduction in a fixed order, which the
// bit-identical training runs depend on.
void pin_blas_threads() {
  static const bool pinned = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)pinned;
}

void im2col(const double* image, std::size_t channels, std::size_t height, std::size_t width,
            int kernel, int stride, int padding, std::size_t out_h, std::size_t out_w, double* col) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        double* row = col + ((c * kernel + ky) * kernel + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy) * stride - padding + ky;
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<long>(height)) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = image + (c * height + iy) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox) * stride - padding + kx;
            dst[ox] = (ix < 0 || ix >= static_cast<long>(width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t channels, std::size_t height, std::size_t width,
                int kernel, int stride, int padding, std::size_t out_h, std::size_t out_w,
                double* image) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const double* row = col + ((c * kernel + ky) * kernel + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy) * stride - padding + ky;
          if (iy < 0 || iy >= static_cast<long>(height)) continue;
          double* dst = image + (c * height + iy) * width;
          const double* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox) * stride - padding + kx;
            if (ix >= 0 && ix < static_cast<long>(width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  std::vector<double> saved;
  if (x.requires_grad()) saved = out;
  Tensor src = x;
  return make_result(x.shape(), std::move(out), {x},
                     [src, saved = std::move(saved), deriv](std::span<const double> g,
                                                            std::span<double* const> gin) {
                       if (!gin[0]) return;
                       const auto xv = src.data();
                       for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * deriv(xv[i], saved[i]);
                     });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

}  // namespace

BatchNormParams BatchNormParams::identity(std::size_t channels) {
  BatchNormParams p;
  p.gamma = Tensor::full({channels}, 1.0, true);
  p.beta = Tensor::zeros({channels}, true);
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  return p;
}

std::size_t conv_output_extent(std::size_t extent, int kernel, int stride, int padding) {
  const long span = static_cast<long>(extent) + 2L * padding - kernel;
  if (span < 0) return 0;
  return static_cast<std::size_t>(span / stride) + 1;
}

Tensor conv2d(const Tensor& input, const ConvParams& params) {
  require_rank4(input, "conv2d");
  const Tensor& weight = params.weight;
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d weight must be [out, in, k, k], got " + to_string(weight.shape()));
  }
  if (params.stride < 1 || params.padding < 0) throw std::invalid_argument("conv2d: invalid stride/padding");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oc = weight.dim(0);
  const int k = static_cast<int>(weight.dim(2));
  if (weight.dim(1) != c) {
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (params.bias && params.bias->shape() != Shape{oc}) {
    throw ShapeError("conv2d: bias shape " + to_string(params.bias->shape()));
  }
  const std::size_t oh = conv_output_extent(h, k, params.stride, params.padding);
  const std::size_t ow = conv_output_extent(w, k, params.stride, params.padding);
  if (oh == 0 || ow == 0) throw ShapeError("conv2d: non-positive output extent for input " + to_string(input.shape()));
  pin_blas_threads();

  const std::size_t ckk = c * k * k;
  const std::size_t plane = oh * ow;
  const bool direct = (k == 1 && params.stride == 1 && params.padding == 0);
  std::vector<double> out(n * oc * plane, 0.0);
  std::vector<double> col(direct ? 0 : ckk * plane);
  const double* wdata = weight.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    const double* img = input.data().data() + b * c * h * w;
    const double* cols = img;
    if (!direct) {
      im2col(img, c, h, w, k, params.stride, params.padding, oh, ow, col.data());
      cols = col.data();
    }
    double* dst = out.data() + b * oc * plane;
    if (params.bias) {
      const auto bias = params.bias->data();
      for (std::size_t o = 0; o < oc; ++o) std::fill(dst + o * plane, dst + (o + 1) * plane, bias[o]);
    }
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(oc), static_cast<int>(plane),
                static_cast<int>(ckk), 1.0, wdata, static_cast<int>(ckk), cols, static_cast<int>(plane),
                params.bias ? 1.0 : 0.0, dst, static_cast<int>(plane));
  }

  std::vector<Tensor> inputs{input, weight};
  if (params.bias) inputs.push_back(*params.bias);
  const int stride = params.stride, padding = params.padding;
  const bool has_bias = params.bias.has_value();
  Tensor in = input, wt = weight;
  return make_result(
      {n, oc, oh, ow}, std::move(out), std::move(inputs),
      [=](std::span<const double> g, std::span<double* const> gin) {
        double* gx = gin[0];
        double* gw = gin[1];
        double* gb = has_bias ? gin[2] : nullptr;
        std::vector<double> colbuf(direct ? 0 : ckk * plane);
        std::vector<double> dcol((gx && !direct) ? ckk * plane : 0);
        const double* wd = wt.data().data();
        for (std::size_t b = 0; b < n; ++b) {
          const double* gy = g.data() + b * oc * plane;
          if (gb) {
            for (std::size_t o = 0; o < oc; ++o) {
              double s = 0.0;
              for (std::size_t i = 0; i < plane; ++i) s += gy[o * plane + i];
              gb[o] += s;
            }
          }
          const double* img = in.data().data() + b * c * h * w;
          if (gw) {
            const double* cols = img;
            if (!direct) {
              im2col(img, c, h, w, k, stride, padding, oh, ow, colbuf.data());
              cols = colbuf.data();
            }
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(oc), static_cast<int>(ckk),
                        static_cast<int>(plane), 1.0, gy, static_cast<int>(plane), cols,
                        static_cast<int>(plane), 1.0, gw, static_cast<int>(ckk));
          }
          if (gx) {
            double* gimg = gx + b * c * h * w;
            if (direct) {
              cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(ckk),
                          static_cast<int>(plane), static_cast<int>(oc), 1.0, wd, static_cast<int>(ckk), gy,
                          static_cast<int>(plane), 1.0, gimg, static_cast<int>(plane));
            } else {
              cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(ckk),
                          static_cast<int>(plane), static_cast<int>(oc), 1.0, wd, static_cast<int>(ckk), gy,
                          static_cast<int>(plane), 0.0, dcol.data(), static_cast<int>(plane));
              col2im_add(dcol.data(), c, h, w, k, stride, padding, oh, ow, gimg);
            }
          }
        }
      });
}

Tensor batch_norm(const Tensor& input, BatchNormParams& p) {
  require_rank4(input, "batch_norm");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (p.gamma.numel() != c || p.beta.numel() != c || p.running_mean.size() != c || p.running_var.size() != c) {
    throw ShapeError("batch_norm: channel mismatch, input has " + std::to_string(c) + " channels");
  }
  if (!(p.epsilon > 0.0)) throw std::invalid_argument("batch_norm: epsilon must be positive");
  const std::size_t count = n * hw;
  const auto x = input.data();
  const auto gamma = p.gamma.data();
  const auto beta = p.beta.data();

  std::vector<double> mean(c), inv_std(c);
  const bool training = p.mode == Mode::Training;
  if (training) {
    if (count < 2) throw std::invalid_argument("batch_norm: training mode needs at least 2 values per channel");
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* src = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += src[i];
      }
      const double mu = s / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* src = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (src[i] - mu) * (src[i] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + p.epsilon);
      const double unbiased = sq / static_cast<double>(count - 1);
      p.running_mean[ch] = (1.0 - p.momentum) * p.running_mean[ch] + p.momentum * mu;
      p.running_var[ch] = (1.0 - p.momentum) * p.running_var[ch] + p.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = p.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(std::max(p.running_var[ch], 0.0) + p.epsilon);
    }
  }

  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double v = (x[base + i] - mean[ch]) * inv_std[ch];
        xhat[base + i] = v;
        out[base + i] = gamma[ch] * v + beta[ch];
      }
    }
  }
  if (!input.requires_grad() && !p.gamma.requires_grad() && !p.beta.requires_grad()) {
    return Tensor::from_data(input.shape(), std::move(out));
  }
  Tensor g_t = p.gamma;
  return make_result(
      input.shape(), std::move(out), {input, p.gamma, p.beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const double> g,
                                                                 std::span<double* const> gin) {
        const auto gm = g_t.data();
        const double m = static_cast<double>(count);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g += g[base + i];
              sum_gx += g[base + i] * xhat[base + i];
            }
          }
          if (gin[1]) gin[1][ch] += sum_gx;
          if (gin[2]) gin[2][ch] += sum_g;
          if (!gin[0]) continue;
          const double k = gm[ch] * inv_std[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (training) {
                gin[0][base + i] += k * (g[base + i] - sum_g / m - xhat[base + i] * sum_gx / m);
              } else {
                gin[0][base + i] += k * g[base + i];
              }
            }
          }
        }
      });
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("leaky_relu: alpha must be in (0, 1)");
  return unary(
      x, [alpha](double v) { return v > 0.0 ? v : alpha * v; },
      [alpha](double v, double) { return v > 0.0 ? 1.0 : alpha; });
}

Tensor upsample_nearest_x2(const Tensor& input) {
  require_rank4(input, "upsample_nearest_x2");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = 2 * h, ow = 2 * w;
  const auto x = input.data();
  std::vector<double> out(n * c * oh * ow);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return make_result({n, c, oh, ow}, std::move(out), {input},
                     [=](std::span<const double> g, std::span<double* const> gin) {
                       if (!gin[0]) return;
                       for (std::size_t p = 0; p < n * c; ++p) {
                         const double* src = g.data() + p * oh * ow;
                         double* dst = gin[0] + p * h * w;
                         for (std::size_t y = 0; y < oh; ++y) {
                           for (std::size_t xx = 0; xx < ow; ++xx) dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
                         }
                       }
                     });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<double> out(n * (ca + cb) * hw);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b.data().data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
  }
  return make_result({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                     [=](std::span<const double> g, std::span<double* const> gin) {
                       for (std::size_t i = 0; i < n; ++i) {
                         const double* src = g.data() + i * (ca + cb) * hw;
                         if (gin[0]) {
                           for (std::size_t j = 0; j < ca * hw; ++j) gin[0][i * ca * hw + j] += src[j];
                         }
                         if (gin[1]) {
                           for (std::size_t j = 0; j < cb * hw; ++j) gin[1][i * cb * hw + j] += src[ca * hw + j];
                         }
                       }
                     });
}

Tensor residual_add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "residual_add");
  return add(a, b);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<double* const> gin) {
                       for (double* dst : gin) {
                         if (!dst) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor ta = a, tb = b;
  return make_result(a.shape(), std::move(out), {a, b},
                     [ta, tb](std::span<const double> g, std::span<double* const> gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (gin[0]) gin[0][i] += g[i] * tb.data()[i];
                         if (gin[1]) gin[1][i] += g[i] * ta.data()[i];
                       }
                     });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t count = x.numel();
  return make_result({}, {s}, {x}, [count](std::span<const double> g, std::span<double* const> gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < count; ++i) gin[0][i] += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const double count = static_cast<double>(x.numel());
  return scale(sum(x), count > 0 ? 1.0 / count : 0.0);
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw std::domain_error("log: input must be strictly positive");
  }
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

}  // namespace melnet
