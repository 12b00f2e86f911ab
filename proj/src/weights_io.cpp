#include "melnet/weights_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

namespace melnet {

namespace {

constexpr char kMagic[] = "MELW1";
constexpr std::size_t kMagicLen = 5;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("weights file truncated at byte " + std::to_string(pos_));
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_weights(const std::vector<NamedArray>& arrays) {
  std::vector<unsigned char> out(kMagic, kMagic + kMagicLen);
  put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  std::set<std::string> names;
  for (const auto& a : arrays) {
    if (!names.insert(a.name).second) throw FormatError("duplicate tensor name " + a.name);
    if (numel(a.shape) != a.values.size()) throw FormatError("tensor " + a.name + " size does not match shape");
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto e : a.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : a.values) {
      if (!std::isfinite(v)) throw FormatError("tensor " + a.name + " has non-finite values");
      put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  return out;
}

std::vector<NamedArray> decode_weights(const std::vector<unsigned char>& bytes) {
  Reader in(bytes);
  if (in.str(kMagicLen) != kMagic) throw FormatError("unknown weights magic (expected MELW1)");
  const std::uint32_t count = in.u32();
  std::vector<NamedArray> arrays;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = in.str(in.u32());
    if (!names.insert(a.name).second) throw FormatError("duplicate tensor name " + a.name);
    const std::uint32_t rank = in.u32();
    if (rank > 8) throw FormatError("tensor " + a.name + " has implausible rank " + std::to_string(rank));
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(in.u32());
    const std::size_t n = numel(a.shape);
    if (n > bytes.size()) throw FormatError("weights file truncated in tensor " + a.name);
    a.values.resize(n);
    for (auto& v : a.values) v = in.f32();
    arrays.push_back(std::move(a));
  }
  if (!in.done()) throw FormatError("trailing bytes after last tensor");
  return arrays;
}

std::vector<NamedArray> collect_arrays(Network& net) {
  std::vector<NamedArray> arrays;
  for (const auto& p : net.parameters()) {
    NamedArray a{p.name, p.value.shape(), {}};
    for (double v : p.value.data()) a.values.push_back(static_cast<float>(v));
    arrays.push_back(std::move(a));
  }
  for (const auto& b : net.buffers()) {
    NamedArray a{b.name, {b.values->size()}, {}};
    for (double v : *b.values) a.values.push_back(static_cast<float>(v));
    arrays.push_back(std::move(a));
  }
  return arrays;
}

void assign_arrays(Network& net, const std::vector<NamedArray>& arrays) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto params = net.parameters();
  auto buffers = net.buffers();
  if (arrays.size() != params.size() + buffers.size()) {
    throw FormatError("weights file has " + std::to_string(arrays.size()) + " tensors, network expects " +
                      std::to_string(params.size() + buffers.size()));
  }
  auto lookup = [&](const std::string& name, const Shape& shape) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("weights file is missing tensor " + name);
    if (it->second->shape != shape) {
      throw FormatError("shape mismatch for " + name + ": file " + to_string(it->second->shape) + ", network " +
                        to_string(shape));
    }
    return *it->second;
  };
  for (const auto& p : params) (void)lookup(p.name, p.value.shape());
  for (const auto& b : buffers) (void)lookup(b.name, {b.values->size()});
  for (auto& p : params) {
    const auto& a = lookup(p.name, p.value.shape());
    auto dst = p.value.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a.values[i];
  }
  for (auto& b : buffers) {
    const auto& a = lookup(b.name, {b.values->size()});
    for (std::size_t i = 0; i < b.values->size(); ++i) (*b.values)[i] = a.values[i];
  }
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void save_weights(Network& net, const std::filesystem::path& path) {
  write_file_bytes(path, encode_weights(collect_arrays(net)));
}

Network load_weights(const std::filesystem::path& path, const ArchSpec& spec) {
  const auto arrays = decode_weights(read_file_bytes(path));
  Network net = Network::build(spec, 0);
  assign_arrays(net, arrays);
  return net;
}

}  // namespace melnet
