#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "melnet/architecture.hpp"
#include "melnet/ops.hpp"

namespace melnet {

/// A trainable tensor with a stable name. `decay` marks tensors that take
/// the L2 weight-decay term (conv weights).
struct Parameter {
  std::string name;
  Tensor value;
  bool decay = false;
};

/// Non-trainable state persisted alongside parameters (running statistics).
struct Buffer {
  std::string name;
  std::vector<double>* values = nullptr;
};

/// Raw head outputs: `coarse` at stride 32, `fine` at stride 16, each
/// [n, B * (5 + C), S, S].
struct Heads {
  Tensor coarse;
  Tensor fine;
};

/// Conv followed, unless it is a detect conv, by batch norm and leaky ReLU.
struct ConvUnit {
  ConvParams conv;
  std::optional<BatchNormParams> bn;
};

class Network {
 public:
  static constexpr double kLeakySlope = 0.1;

  /// Deterministic in `seed`. Conv weights ~ N(0, 2 / fan_in), batch norm
  /// gamma = 1 and beta = 0, detect biases 0.
  static Network build(const ArchSpec& spec, std::uint64_t seed);

  const ArchSpec& spec() const { return spec_; }

  /// Training mode records the graph for every parameter and updates batch
  /// norm running statistics.
  Heads forward(const Tensor& images, Mode mode);
  /// Inference-mode pass: reads running statistics, records no parameter
  /// graph and leaves the network untouched.
  Heads infer(const Tensor& images) const;

  std::vector<Parameter> parameters() const;
  std::vector<Buffer> buffers();
  std::size_t parameter_count() const;

  void zero_grad();
  /// Rounds every parameter and buffer to the nearest float.
  void round_to_float();

 private:
  struct Layer {
    LayerKind kind = LayerKind::Conv;
    std::vector<ConvUnit> units;
    int source = -1;
    int scale_id = 0;
  };

  template <typename Self>
  static Heads run(Self& self, const Tensor& images, Mode mode);

  ArchSpec spec_;
  std::vector<Layer> layers_;
  std::vector<bool> keep_output_;
};

/// Output grid sizes of the two heads for a square input.
inline int coarse_grid(int input_size) { return input_size / 32; }
inline int fine_grid(int input_size) { return input_size / 16; }

}  // namespace melnet
