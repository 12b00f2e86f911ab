#include "melnet/network.hpp"

#include <cmath>
#include <type_traits>

#include "melnet/rng.hpp"

namespace melnet {

namespace {

ConvUnit make_unit(int in_ch, int out_ch, int kernel, int stride, bool detect, Rng& rng) {
  const std::size_t fan_in = static_cast<std::size_t>(in_ch) * kernel * kernel;
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> w(static_cast<std::size_t>(out_ch) * fan_in);
  for (auto& v : w) v = static_cast<float>(rng.normal() * std_dev);
  ConvUnit unit;
  unit.conv.weight = Tensor::from_data({static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch),
                                        static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)},
                                       std::move(w), true);
  unit.conv.stride = stride;
  unit.conv.padding = kernel / 2;
  if (detect) {
    unit.conv.bias = Tensor::zeros({static_cast<std::size_t>(out_ch)}, true);
  } else {
    unit.bn = BatchNormParams::identity(static_cast<std::size_t>(out_ch));
  }
  return unit;
}

Tensor apply_inference(const ConvUnit& unit, const Tensor& x) {
  ConvParams conv = unit.conv;
  conv.weight = conv.weight.alias_without_grad();
  if (conv.bias) conv.bias = conv.bias->alias_without_grad();
  Tensor y = conv2d(x, conv);
  if (!unit.bn) return y;
  BatchNormParams bn = *unit.bn;
  bn.gamma = bn.gamma.alias_without_grad();
  bn.beta = bn.beta.alias_without_grad();
  bn.mode = Mode::Inference;
  return leaky_relu(batch_norm(y, bn), Network::kLeakySlope);
}

Tensor apply_training(ConvUnit& unit, const Tensor& x) {
  Tensor y = conv2d(x, unit.conv);
  if (!unit.bn) return y;
  unit.bn->mode = Mode::Training;
  return leaky_relu(batch_norm(y, *unit.bn), Network::kLeakySlope);
}

}  // namespace

Network Network::build(const ArchSpec& spec, std::uint64_t seed) {
  const auto shapes = infer_layer_shapes(spec);
  Network net;
  net.spec_ = spec;
  net.keep_output_.assign(spec.layers.size(), false);
  Rng rng(seed);
  int in_ch = 3;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& ls = spec.layers[i];
    Layer layer;
    layer.kind = ls.kind;
    layer.source = ls.source;
    layer.scale_id = ls.scale_id;
    switch (ls.kind) {
      case LayerKind::Conv:
        layer.units.push_back(make_unit(in_ch, shapes[i].channels, ls.kernel, ls.stride, false, rng));
        break;
      case LayerKind::Residual: {
        const int half = std::max(1, in_ch / 2);
        for (int r = 0; r < ls.repeats; ++r) {
          layer.units.push_back(make_unit(in_ch, half, 1, 1, false, rng));
          layer.units.push_back(make_unit(half, in_ch, 3, 1, false, rng));
        }
        break;
      }
      case LayerKind::Detect:
        layer.units.push_back(make_unit(in_ch, spec.head_channels(), 1, 1, true, rng));
        break;
      case LayerKind::Concat:
        net.keep_output_[ls.source] = true;
        break;
      case LayerKind::Upsample:
        break;
    }
    in_ch = shapes[i].channels;
    net.layers_.push_back(std::move(layer));
  }
  return net;
}

template <typename Self>
Heads Network::run(Self& self, const Tensor& images, Mode mode) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != images.dim(3)) {
    throw ShapeError("network input must be [n, 3, s, s], got " + to_string(images.shape()));
  }
  if (images.dim(2) % 32 != 0) {
    throw ShapeError("network input size " + std::to_string(images.dim(2)) + " is not divisible by 32");
  }
  auto apply = [&](auto& unit, const Tensor& x) {
    if constexpr (std::is_const_v<Self>) {
      return apply_inference(unit, x);
    } else {
      return mode == Mode::Training ? apply_training(unit, x) : apply_inference(unit, x);
    }
  };

  std::vector<Tensor> saved(self.layers_.size());
  Heads heads;
  Tensor x = images;
  for (std::size_t i = 0; i < self.layers_.size(); ++i) {
    auto& layer = self.layers_[i];
    switch (layer.kind) {
      case LayerKind::Conv:
        x = apply(layer.units[0], x);
        break;
      case LayerKind::Residual:
        for (std::size_t u = 0; u + 1 < layer.units.size(); u += 2) {
          Tensor branch = apply(layer.units[u + 1], apply(layer.units[u], x));
          x = residual_add(x, branch);
        }
        break;
      case LayerKind::Upsample:
        x = upsample_nearest_x2(x);
        break;
      case LayerKind::Concat:
        x = concat_channels(x, saved[layer.source]);
        break;
      case LayerKind::Detect: {
        Tensor head = apply(layer.units[0], x);
        (layer.scale_id == 1 ? heads.coarse : heads.fine) = head;
        break;
      }
    }
    if (self.keep_output_[i]) saved[i] = x;
  }
  return heads;
}

Heads Network::forward(const Tensor& images, Mode mode) { return run(*this, images, mode); }

Heads Network::infer(const Tensor& images) const { return run(*this, images, Mode::Inference); }

std::vector<Parameter> Network::parameters() const {
  std::vector<Parameter> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    const std::string prefix = "L" + std::to_string(i);
    for (std::size_t u = 0; u < layer.units.size(); ++u) {
      std::string name = prefix;
      if (layer.kind == LayerKind::Residual) {
        name += ".r" + std::to_string(u / 2) + (u % 2 == 0 ? ".reduce" : ".expand");
      } else if (layer.kind == LayerKind::Detect) {
        name += ".detect";
      } else {
        name += ".conv";
      }
      const auto& unit = layer.units[u];
      out.push_back({name + ".weight", unit.conv.weight, true});
      if (unit.conv.bias) out.push_back({name + ".bias", *unit.conv.bias, false});
      if (unit.bn) {
        out.push_back({name + ".bn.gamma", unit.bn->gamma, false});
        out.push_back({name + ".bn.beta", unit.bn->beta, false});
      }
    }
  }
  return out;
}

std::vector<Buffer> Network::buffers() {
  std::vector<Buffer> out;
  const auto params = parameters();
  std::size_t p = 0;
  for (auto& layer : layers_) {
    for (auto& unit : layer.units) {
      // Parameter order mirrors unit order; reuse the unit's weight name.
      std::string base = params[p].name.substr(0, params[p].name.size() - std::string(".weight").size());
      p += 1 + (unit.conv.bias ? 1 : 0) + (unit.bn ? 2 : 0);
      if (unit.bn) {
        out.push_back({base + ".bn.running_mean", &unit.bn->running_mean});
        out.push_back({base + ".bn.running_var", &unit.bn->running_var});
      }
    }
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.value.numel();
  return total;
}

void Network::zero_grad() {
  for (auto& p : parameters()) p.value.zero_grad();
}

void Network::round_to_float() {
  for (auto& p : parameters()) {
    for (auto& v : p.value.mutable_data()) v = static_cast<float>(v);
  }
  for (auto& b : buffers()) {
    for (auto& v : *b.values) v = static_cast<float>(v);
  }
}

}  // namespace melnet
