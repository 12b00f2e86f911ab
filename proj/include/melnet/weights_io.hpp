#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "melnet/network.hpp"

namespace melnet {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One named tensor of a weights file.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Binary layout, all integers little-endian uint32:
///   "MELW1" | count | count x (name_len | name | rank | extents... | float32 payload)
std::vector<unsigned char> encode_weights(const std::vector<NamedArray>& arrays);
std::vector<NamedArray> decode_weights(const std::vector<unsigned char>& bytes);

/// Parameters and running statistics of `net`, in parameter order.
std::vector<NamedArray> collect_arrays(Network& net);

void save_weights(Network& net, const std::filesystem::path& path);

/// Builds a network for `spec` and fills it from `path`. The file is read
/// and validated completely before any network is returned.
Network load_weights(const std::filesystem::path& path, const ArchSpec& spec);

/// Overwrites the values of `net`; throws FormatError on any name or shape
/// mismatch without modifying `net`.
void assign_arrays(Network& net, const std::vector<NamedArray>& arrays);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

}  // namespace melnet
