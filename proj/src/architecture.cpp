#include "melnet/architecture.hpp"

#include <algorithm>
#include <sstream>

namespace melnet {

int ArchSpec::scaled(int channels) const { return std::max(1, channels * width_num / width_den); }

namespace {

void append_head(std::vector<LayerSpec>& layers, int narrow, int wide, int scale_id) {
  for (int i = 0; i < 2; ++i) {
    layers.push_back(LayerSpec::conv(narrow, 1));
    layers.push_back(LayerSpec::conv(wide, 3));
  }
  layers.push_back(LayerSpec::conv(narrow, 1));
  layers.push_back(LayerSpec::conv(wide, 3));
  layers.push_back(LayerSpec::detect(scale_id));
}

std::vector<LayerSpec> reference_layers(int residual_cap) {
  auto res = [&](int n) { return LayerSpec::residual(std::min(n, residual_cap)); };
  std::vector<LayerSpec> l;
  l.push_back(LayerSpec::conv(32, 3));
  l.push_back(LayerSpec::conv(64, 3, 2));
  l.push_back(res(1));
  l.push_back(LayerSpec::conv(128, 3, 2));
  l.push_back(res(2));
  l.push_back(LayerSpec::conv(256, 3, 2));
  l.push_back(res(8));
  l.push_back(LayerSpec::conv(512, 3, 2));
  l.push_back(res(8));  // layer 8: stride-16 tap
  const int tap16 = static_cast<int>(l.size()) - 1;
  l.push_back(LayerSpec::conv(1024, 3, 2));
  l.push_back(res(4));
  l.push_back(LayerSpec::conv(512, 1));
  l.push_back(LayerSpec::conv(1024, 3));
  l.push_back(LayerSpec::conv(512, 1));
  append_head(l, 512, 1024, 1);
  l.push_back(LayerSpec::conv(256, 1));
  l.push_back(LayerSpec::upsample());
  l.push_back(LayerSpec::concat(tap16));
  append_head(l, 256, 512, 2);
  return l;
}

}  // namespace

ArchSpec reference_spec(int num_classes, int anchors_per_scale) {
  if (num_classes < 1) throw ArchError("num_classes must be at least 1");
  if (anchors_per_scale < 1) throw ArchError("anchors_per_scale must be at least 1");
  ArchSpec spec;
  spec.layers = reference_layers(1 << 30);
  spec.num_classes = num_classes;
  spec.anchors_per_scale = anchors_per_scale;
  spec.input_size = 640;
  return spec;
}

ArchSpec tiny_spec(int num_classes, int anchors_per_scale) {
  ArchSpec spec = reference_spec(num_classes, anchors_per_scale);
  spec.layers = reference_layers(1);
  spec.input_size = 64;
  spec.width_num = 1;
  spec.width_den = 16;
  return spec;
}

int count_conv_layers(const ArchSpec& spec) {
  int count = 0;
  for (const auto& layer : spec.layers) {
    switch (layer.kind) {
      case LayerKind::Conv:
      case LayerKind::Detect:
        count += 1;
        break;
      case LayerKind::Residual:
        count += 2 * layer.repeats;
        break;
      default:
        break;
    }
  }
  return count;
}

int count_layers_with_routing(const ArchSpec& spec) {
  int count = count_conv_layers(spec);
  for (const auto& layer : spec.layers) {
    if (layer.kind == LayerKind::Upsample || layer.kind == LayerKind::Concat) ++count;
  }
  return count;
}

std::vector<LayerShape> infer_layer_shapes(const ArchSpec& spec) {
  if (spec.input_size <= 0 || spec.input_size % 32 != 0) {
    throw ArchError("input_size " + std::to_string(spec.input_size) + " is not a positive multiple of 32");
  }
  if (spec.num_classes < 1 || spec.anchors_per_scale < 1) throw ArchError("num_classes and anchors_per_scale must be positive");
  if (spec.width_num < 1 || spec.width_den < 1) throw ArchError("width multiplier must be positive");
  std::vector<LayerShape> shapes;
  LayerShape cur{3, 1};
  bool seen_scale[3] = {false, false, false};
  int detect_count = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    switch (layer.kind) {
      case LayerKind::Conv:
        if (layer.kernel != 1 && layer.kernel != 3) throw ArchError(where + "kernel must be 1 or 3");
        if (layer.stride != 1 && layer.stride != 2) throw ArchError(where + "stride must be 1 or 2");
        if (layer.out_channels < 1) throw ArchError(where + "conv needs positive channels");
        cur = {spec.scaled(layer.out_channels), cur.stride * layer.stride};
        break;
      case LayerKind::Residual:
        if (layer.repeats < 1) throw ArchError(where + "residual repeats must be positive");
        break;
      case LayerKind::Upsample:
        if (cur.stride < 2) throw ArchError(where + "cannot upsample past stride 1");
        cur.stride /= 2;
        break;
      case LayerKind::Concat: {
        if (layer.source < 0 || layer.source >= static_cast<int>(i)) {
          throw ArchError(where + "concat source " + std::to_string(layer.source) + " is not an earlier layer");
        }
        const LayerShape& src = shapes[layer.source];
        if (src.stride != cur.stride) {
          throw ArchError(where + "concat source stride " + std::to_string(src.stride) + " differs from " +
                          std::to_string(cur.stride));
        }
        cur.channels += src.channels;
        break;
      }
      case LayerKind::Detect: {
        if (layer.scale_id != 1 && layer.scale_id != 2) throw ArchError(where + "detect scale must be 1 or 2");
        if (seen_scale[layer.scale_id]) throw ArchError(where + "duplicate detect scale");
        seen_scale[layer.scale_id] = true;
        const int expected = layer.scale_id == 1 ? 32 : 16;
        if (cur.stride != expected) {
          throw ArchError(where + "detect scale " + std::to_string(layer.scale_id) + " needs stride " +
                          std::to_string(expected) + ", features are at stride " + std::to_string(cur.stride));
        }
        ++detect_count;
        break;
      }
    }
    shapes.push_back(cur);
  }
  if (detect_count != 2) throw ArchError("expected exactly two detect layers, found " + std::to_string(detect_count));
  return shapes;
}

void validate(const ArchSpec& spec) { (void)infer_layer_shapes(spec); }

std::string to_text(const ArchSpec& spec) {
  std::ostringstream os;
  os << "input_size " << spec.input_size << '\n';
  os << "num_classes " << spec.num_classes << '\n';
  os << "anchors_per_scale " << spec.anchors_per_scale << '\n';
  os << "width " << spec.width_num << '/' << spec.width_den << '\n';
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        os << "conv " << l.out_channels << ' ' << l.kernel << ' ' << l.stride << '\n';
        break;
      case LayerKind::Residual:
        os << "res " << l.repeats << '\n';
        break;
      case LayerKind::Upsample:
        os << "up\n";
        break;
      case LayerKind::Concat:
        os << "cat " << l.source << '\n';
        break;
      case LayerKind::Detect:
        os << "detect " << l.scale_id << '\n';
        break;
    }
  }
  return os.str();
}

ArchSpec arch_from_text(const std::string& text) {
  ArchSpec spec;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    auto fail = [&](const std::string& why) {
      throw ArchError("architecture line " + std::to_string(line_no) + ": " + why);
    };
    auto read_int = [&]() {
      int v;
      if (!(fields >> v)) fail("expected an integer after '" + word + "'");
      return v;
    };
    if (word == "input_size") {
      spec.input_size = read_int();
    } else if (word == "num_classes") {
      spec.num_classes = read_int();
    } else if (word == "anchors_per_scale") {
      spec.anchors_per_scale = read_int();
    } else if (word == "width") {
      std::string ratio;
      fields >> ratio;
      const auto slash = ratio.find('/');
      try {
        spec.width_num = std::stoi(ratio.substr(0, slash));
        spec.width_den = slash == std::string::npos ? 1 : std::stoi(ratio.substr(slash + 1));
      } catch (const std::exception&) {
        fail("bad width ratio '" + ratio + "'");
      }
    } else if (word == "conv") {
      const int ch = read_int();
      const int k = read_int();
      const int s = read_int();
      spec.layers.push_back(LayerSpec::conv(ch, k, s));
    } else if (word == "res") {
      spec.layers.push_back(LayerSpec::residual(read_int()));
    } else if (word == "up") {
      spec.layers.push_back(LayerSpec::upsample());
    } else if (word == "cat") {
      spec.layers.push_back(LayerSpec::concat(read_int()));
    } else if (word == "detect") {
      spec.layers.push_back(LayerSpec::detect(read_int()));
    } else {
      fail("unknown directive '" + word + "'");
    }
    std::string extra;
    if (fields >> extra) fail("unexpected trailing field '" + extra + "'");
  }
  return spec;
}

}  // namespace melnet
