#include "melnet/adam.hpp"

#include <bit>
#include <cmath>

#include "melnet/weights_io.hpp"

namespace melnet {

void adam_step(std::span<const Parameter> params, AdamState& state, const AdamConfig& cfg) {
  if (state.step == 0 && state.m.empty()) {
    for (const auto& p : params) {
      state.names.push_back(p.name);
      state.m.emplace_back(p.value.numel(), 0.0);
      state.v.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw FormatError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.names[i] != params[i].name || state.m[i].size() != params[i].value.numel()) {
      throw FormatError("optimizer state does not match parameter " + params[i].name);
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor value = params[i].value;
    auto theta = value.mutable_data();
    const bool has_grad = value.has_grad();
    const std::span<const double> grad = has_grad ? value.grad() : std::span<const double>{};
    const double wd = params[i].decay ? cfg.weight_decay : 0.0;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = (has_grad ? grad[j] : 0.0) + wd * theta[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      theta[j] -= cfg.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.epsilon);
    }
  }
}

namespace {

constexpr char kMagic[] = "MELA1";

template <typename T>
void put(std::vector<unsigned char>& out, T v) {
  const auto bits = std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}
  std::uint64_t uint(std::size_t width) {
    if (b_.size() - pos_ < width) throw FormatError("optimizer state truncated");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
  }
  double f64() { return std::bit_cast<double>(uint(8)); }
  std::string str(std::size_t n) {
    if (b_.size() - pos_ < n) throw FormatError("optimizer state truncated");
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_adam_state(const AdamState& s) {
  std::vector<unsigned char> out(kMagic, kMagic + 5);
  put<std::uint64_t>(out, s.step);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.names[i].size()));
    out.insert(out.end(), s.names[i].begin(), s.names[i].end());
    put<std::uint64_t>(out, s.m[i].size());
    for (double x : s.m[i]) put<double>(out, x);
    for (double x : s.v[i]) put<double>(out, x);
  }
  return out;
}

AdamState decode_adam_state(const std::vector<unsigned char>& bytes) {
  Reader in(bytes);
  if (in.str(5) != kMagic) throw FormatError("unknown optimizer state magic (expected MELA1)");
  AdamState s;
  s.step = in.uint(8);
  const auto count = in.uint(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    s.names.push_back(in.str(in.uint(4)));
    const auto n = in.uint(8);
    if (n > bytes.size()) throw FormatError("optimizer state truncated");
    std::vector<double> m(n), v(n);
    for (auto& x : m) x = in.f64();
    for (auto& x : v) x = in.f64();
    s.m.push_back(std::move(m));
    s.v.push_back(std::move(v));
  }
  if (!in.done()) throw FormatError("trailing bytes after optimizer state");
  return s;
}

}  // namespace melnet
