#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "melnet/network.hpp"

namespace melnet {

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// L2 coefficient added to the gradient of parameters marked `decay`.
  double weight_decay = 1e-4;
};

struct AdamState {
  std::vector<std::string> names;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update in place. The state is created on first
/// use and must afterwards match the parameter list by name and size.
/// Parameters without a gradient are treated as having a zero gradient.
void adam_step(std::span<const Parameter> params, AdamState& state, const AdamConfig& cfg);

/// "MELA1" | u64 step | u32 count | count x (u32 name_len | name | u64 n | n f64 m | n f64 v), little-endian.
std::vector<unsigned char> encode_adam_state(const AdamState& state);
AdamState decode_adam_state(const std::vector<unsigned char>& bytes);

}  // namespace melnet
