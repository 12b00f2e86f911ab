#include <filesystem>
#include <fstream>
#include <tuple>

#include "doctest.h"
#include "melnet/architecture.hpp"
#include "melnet/network.hpp"
#include "melnet/weights_io.hpp"
#include "oracles.hpp"

using namespace melnet;

namespace {

// Expected (in, out, k) of every conv in the reference layout, written out
// from the stage description rather than derived from the layer list.
std::vector<std::tuple<int, int, int>> expected_reference_convs(int head, int div = 1, int cap = 100) {
  std::vector<std::tuple<int, int, int>> convs;
  int ch = 3;
  auto conv = [&](int out, int k) {
    out /= div;
    convs.emplace_back(ch, out, k);
    ch = out;
  };
  auto res = [&](int n) {
    for (int i = 0; i < std::min(n, cap); ++i) {
      convs.emplace_back(ch, ch / 2, 1);
      convs.emplace_back(ch / 2, ch, 3);
    }
  };
  conv(32, 3);
  const int stages[5][2] = {{64, 1}, {128, 2}, {256, 8}, {512, 8}, {1024, 4}};
  for (auto [width, reps] : stages) {
    conv(width, 3);
    res(reps);
  }
  conv(512, 1);
  conv(1024, 3);
  conv(512, 1);
  for (int i = 0; i < 3; ++i) {
    conv(512, 1);
    conv(1024, 3);
  }
  convs.emplace_back(ch, head, 1);
  conv(256, 1);
  ch += 512 / div;  // concat with the stride-16 stage
  for (int i = 0; i < 3; ++i) {
    conv(256, 1);
    conv(512, 3);
  }
  convs.emplace_back(ch, head, 1);
  return convs;
}

}  // namespace

TEST_CASE("reference layout accounting") {
  CHECK(count_conv_layers(reference_spec(9, 3)) == 70);
  CHECK(count_conv_layers(reference_spec(1, 2)) == 70);
  CHECK(count_conv_layers(reference_spec(80, 5)) == 70);
  CHECK(reference_spec(9, 3).head_channels() == 42);
  CHECK(reference_spec(9, 2).head_channels() == 28);
  CHECK(count_layers_with_routing(reference_spec(9, 3)) == 72);
  CHECK_THROWS_AS(reference_spec(0, 3), ArchError);

  ArchSpec single;
  single.layers = {LayerSpec::conv(8, 3)};
  CHECK(count_conv_layers(single) == 1);
}

TEST_CASE("layer shapes of the reference layout") {
  const auto spec = reference_spec(9, 3);
  const auto shapes = infer_layer_shapes(spec);
  CHECK(shapes[8].stride == 16);
  CHECK(shapes[8].channels == 512);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind == LayerKind::Detect) {
      CHECK(shapes[i].stride == (spec.layers[i].scale_id == 1 ? 32 : 16));
    }
  }
}

TEST_CASE("tiny layout") {
  const auto spec = tiny_spec(9);
  CHECK(spec.input_size == 64);
  CHECK(count_conv_layers(spec) < 70);
  Network net = Network::build(spec, 1);
  // Conv weights, batch norm gamma/beta on every non-detect conv, detect biases.
  std::size_t expected = 0;
  for (auto [in, out, k] : expected_reference_convs(42, 16, 1)) {
    expected += static_cast<std::size_t>(in) * out * k * k + (out == 42 ? 42 : 2 * out);
  }
  CHECK(net.parameter_count() == expected);
  CHECK(net.parameter_count() == 157362);
  Rng rng(2);
  Tensor x = oracle::random_tensor({2, 3, 64, 64}, rng, 0, 1);
  Heads h = net.forward(x, Mode::Training);
  CHECK(h.coarse.shape() == Shape{2, 42, 2, 2});
  CHECK(h.fine.shape() == Shape{2, 42, 4, 4});
}

TEST_CASE("build is deterministic and audited against the stage description") {
  const auto spec = reference_spec(9, 3);
  Network a = Network::build(spec, 7);
  std::vector<std::tuple<int, int, int>> convs;
  for (const auto& p : a.parameters()) {
    if (p.name.ends_with(".weight")) {
      convs.emplace_back(static_cast<int>(p.value.dim(1)), static_cast<int>(p.value.dim(0)),
                         static_cast<int>(p.value.dim(2)));
    }
  }
  CHECK(convs == expected_reference_convs(42));

  Network b = Network::build(tiny_spec(), 7);
  Network c = Network::build(tiny_spec(), 7);
  Network d = Network::build(tiny_spec(), 8);
  const auto pb = b.parameters(), pc = c.parameters(), pd = d.parameters();
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    all_equal = all_equal && std::equal(pb[i].value.data().begin(), pb[i].value.data().end(), pc[i].value.data().begin());
    any_diff = any_diff || !std::equal(pb[i].value.data().begin(), pb[i].value.data().end(), pd[i].value.data().begin());
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("malformed specs are rejected") {
  auto spec = tiny_spec();
  SUBCASE("bad concat index") {
    for (auto& l : spec.layers) {
      if (l.kind == LayerKind::Concat) l.source = 999;
    }
    CHECK_THROWS_AS(Network::build(spec, 0), ArchError);
  }
  SUBCASE("missing detect layer") {
    spec.layers.pop_back();
    CHECK_THROWS_AS(Network::build(spec, 0), ArchError);
  }
  SUBCASE("input not divisible by 32") {
    spec.input_size = 70;
    CHECK_THROWS_AS(validate(spec), ArchError);
  }
  SUBCASE("concat of mismatched strides") {
    for (auto& l : spec.layers) {
      if (l.kind == LayerKind::Concat) l.source = 3;
    }
    CHECK_THROWS_AS(validate(spec), ArchError);
  }
}

TEST_CASE("head grids for every valid input size") {
  Network net = Network::build(tiny_spec(9, 2), 3);
  for (std::size_t s : {32, 64, 96, 128}) {
    Heads h = net.infer(Tensor::full({1, 3, s, s}, 0.5));
    CHECK(h.coarse.shape() == Shape{1, 28, s / 32, s / 32});
    CHECK(h.fine.shape() == Shape{1, 28, s / 16, s / 16});
    CHECK(h.fine.dim(2) == 2 * h.coarse.dim(2));
  }
  CHECK_THROWS_AS(net.infer(Tensor::zeros({1, 3, 40, 40})), ShapeError);
  CHECK_THROWS_AS(net.infer(Tensor::zeros({1, 4, 64, 64})), ShapeError);
}

TEST_CASE("reference forward at reduced resolution") {
  Network net = Network::build(reference_spec(9, 3), 5);
  Heads h = net.infer(Tensor::full({1, 3, 64, 64}, 0.25));
  CHECK(h.coarse.shape() == Shape{1, 42, 2, 2});
  CHECK(h.fine.shape() == Shape{1, 42, 4, 4});
  CHECK(h.coarse.all_finite());
}

TEST_CASE("inference is pure and every parameter matters") {
  Network net = Network::build(tiny_spec(), 11);
  Rng rng(12);
  Tensor x = oracle::random_tensor({2, 3, 64, 64}, rng, 0, 1);
  // Populate running statistics away from their defaults.
  for (int i = 0; i < 3; ++i) net.forward(x, Mode::Training);
  Heads a = net.infer(x);
  Heads b = net.infer(x);
  CHECK(std::equal(a.coarse.data().begin(), a.coarse.data().end(), b.coarse.data().begin()));
  CHECK(std::equal(a.fine.data().begin(), a.fine.data().end(), b.fine.data().begin()));

  auto params = net.parameters();
  for (auto& p : params) {
    auto values = p.value.mutable_data();
    const std::size_t idx = rng.below(values.size());
    const double saved = values[idx];
    values[idx] = saved + 0.5;
    Heads c = net.infer(x);
    values[idx] = saved;
    bool changed = false;
    for (std::size_t i = 0; i < c.coarse.numel(); ++i) changed = changed || c.coarse.data()[i] != a.coarse.data()[i];
    for (std::size_t i = 0; i < c.fine.numel(); ++i) changed = changed || c.fine.data()[i] != a.fine.data()[i];
    CHECK_MESSAGE(changed, p.name);
  }
}

TEST_CASE("arch text round trip") {
  const auto spec = tiny_spec(4, 2);
  const std::string text = to_text(spec);
  CHECK(text.find("cat 8\n") != std::string::npos);
  CHECK(arch_from_text(text) == spec);
  CHECK(arch_from_text(to_text(reference_spec())) == reference_spec());
  CHECK_THROWS_AS(arch_from_text("conv 3 3\n"), ArchError);
  CHECK_THROWS_AS(arch_from_text("pool 2\n"), ArchError);
}

TEST_CASE("weights file round trip and errors") {
  const auto dir = std::filesystem::temp_directory_path() / "melnet_weights_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "net.melw";
  Network net = Network::build(tiny_spec(), 21);
  Rng rng(22);
  net.forward(oracle::random_tensor({2, 3, 64, 64}, rng, 0, 1), Mode::Training);
  net.round_to_float();
  save_weights(net, path);

  SUBCASE("bit-exact") {
    Network loaded = load_weights(path, tiny_spec());
    const auto a = net.parameters(), b = loaded.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == b[i].name);
      CHECK(std::equal(a[i].value.data().begin(), a[i].value.data().end(), b[i].value.data().begin()));
    }
    save_weights(loaded, dir / "again.melw");
    CHECK(read_file_bytes(path) == read_file_bytes(dir / "again.melw"));
  }
  SUBCASE("header layout") {
    const auto bytes = read_file_bytes(path);
    CHECK(std::string(bytes.begin(), bytes.begin() + 5) == "MELW1");
    const std::uint32_t count = bytes[5] | bytes[6] << 8 | bytes[7] << 16 | bytes[8] << 24;
    CHECK(count == net.parameters().size() + net.buffers().size());
  }
  SUBCASE("truncated") {
    auto bytes = read_file_bytes(path);
    bytes.resize(bytes.size() - 3);
    write_file_bytes(dir / "trunc.melw", bytes);
    CHECK_THROWS_AS(load_weights(dir / "trunc.melw", tiny_spec()), FormatError);
  }
  SUBCASE("unknown magic") {
    auto bytes = read_file_bytes(path);
    bytes[4] = '2';
    write_file_bytes(dir / "magic.melw", bytes);
    CHECK_THROWS_AS(load_weights(dir / "magic.melw", tiny_spec()), FormatError);
  }
  SUBCASE("wrong class count") {
    CHECK_THROWS_AS(load_weights(path, tiny_spec(4)), FormatError);
  }
  SUBCASE("failed load leaves the target untouched") {
    Network other = Network::build(tiny_spec(4), 1);
    const double before = other.parameters()[0].value.data()[0];
    CHECK_THROWS_AS(assign_arrays(other, decode_weights(read_file_bytes(path))), FormatError);
    CHECK(other.parameters()[0].value.data()[0] == before);
  }
}
