#include "melnet/codec.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace melnet {

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) {
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

BoxXYXY decode_box(double tx, double ty, double tw, double th, int cell_x, int cell_y, const Anchor& anchor,
                   double stride) {
  const double cx = (sigmoid_scalar(tx) + cell_x) * stride;
  const double cy = (sigmoid_scalar(ty) + cell_y) * stride;
  const double w = anchor.pw * std::exp(tw);
  const double h = anchor.ph * std::exp(th);
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

ScaleTargets::ScaleTargets(int grid, int anchors, int num_classes)
    : grid(grid),
      anchors(anchors),
      num_classes(num_classes),
      values(static_cast<std::size_t>(anchors) * (5 + num_classes) * grid * grid, 0.0),
      mask(static_cast<std::size_t>(anchors) * grid * grid, CellMask::Negative) {}

namespace {

struct Candidate {
  int scale = 0;
  int anchor = 0;
  double overlap = 0;
};

int cell_of(double frac, int grid) { return std::clamp(static_cast<int>(std::floor(frac * grid)), 0, grid - 1); }

}  // namespace

TargetTensor encode_targets(std::span<const LabeledBox> gt, const std::vector<std::vector<Anchor>>& anchors_by_scale,
                            std::span<const int> grid_sizes, int input_size, int num_classes, double ignore_iou) {
  if (anchors_by_scale.size() != grid_sizes.size()) {
    throw std::invalid_argument("encode_targets: one grid size per anchor scale required");
  }
  if (num_classes < 1 || input_size <= 0) throw std::invalid_argument("encode_targets: bad class count or input size");
  TargetTensor out;
  for (std::size_t s = 0; s < grid_sizes.size(); ++s) {
    if (grid_sizes[s] <= 0 || input_size % grid_sizes[s] != 0) {
      throw std::invalid_argument("encode_targets: grid " + std::to_string(grid_sizes[s]) +
                                  " does not divide input size " + std::to_string(input_size));
    }
    for (const auto& a : anchors_by_scale[s]) {
      if (!(a.pw > 0) || !(a.ph > 0)) throw std::invalid_argument("encode_targets: anchors must be positive");
    }
    out.scales.emplace_back(grid_sizes[s], static_cast<int>(anchors_by_scale[s].size()), num_classes);
  }

  const double px = input_size;
  for (const auto& g : gt) {
    const auto& b = g.box;
    if (!(b.width > 0) || !(b.height > 0)) throw std::invalid_argument("encode_targets: degenerate ground-truth box");
    if (g.class_id < 0 || g.class_id >= num_classes) {
      throw std::invalid_argument("encode_targets: class id " + std::to_string(g.class_id) + " out of range");
    }
    if (b.x_center < 0 || b.x_center > 1 || b.y_center < 0 || b.y_center > 1) {
      throw std::invalid_argument("encode_targets: box center outside the image");
    }

    std::vector<Candidate> ranked;
    for (std::size_t s = 0; s < anchors_by_scale.size(); ++s) {
      for (std::size_t a = 0; a < anchors_by_scale[s].size(); ++a) {
        const auto& an = anchors_by_scale[s][a];
        ranked.push_back({static_cast<int>(s), static_cast<int>(a), wh_iou(b.width * px, b.height * px, an.pw, an.ph)});
      }
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Candidate& l, const Candidate& r) { return l.overlap > r.overlap; });

    bool placed = false;
    for (const auto& c : ranked) {
      auto& st = out.scales[c.scale];
      const int cx = cell_of(b.x_center, st.grid), cy = cell_of(b.y_center, st.grid);
      if (st.cell(c.anchor, cy, cx) == CellMask::Positive) continue;
      const Anchor& an = anchors_by_scale[c.scale][c.anchor];
      st.cell(c.anchor, cy, cx) = CellMask::Positive;
      st.value(c.anchor, kTx, cy, cx) = logit(b.x_center * st.grid - cx);
      st.value(c.anchor, kTy, cy, cx) = logit(b.y_center * st.grid - cy);
      st.value(c.anchor, kTw, cy, cx) = std::log(b.width * px / an.pw);
      st.value(c.anchor, kTh, cy, cx) = std::log(b.height * px / an.ph);
      st.value(c.anchor, kObj, cy, cx) = 1.0;
      for (int k = 0; k < num_classes; ++k) st.value(c.anchor, kCls + k, cy, cx) = k == g.class_id ? 1.0 : 0.0;
      placed = true;
      break;
    }
    if (!placed) ++out.dropped;
  }

  // Anchors that overlap a box well but are not responsible for it get no
  // objectness penalty.
  for (const auto& g : gt) {
    for (std::size_t s = 0; s < anchors_by_scale.size(); ++s) {
      auto& st = out.scales[s];
      const int cx = cell_of(g.box.x_center, st.grid), cy = cell_of(g.box.y_center, st.grid);
      for (std::size_t a = 0; a < anchors_by_scale[s].size(); ++a) {
        const auto& an = anchors_by_scale[s][a];
        if (wh_iou(g.box.width * px, g.box.height * px, an.pw, an.ph) > ignore_iou &&
            st.cell(static_cast<int>(a), cy, cx) == CellMask::Negative) {
          st.cell(static_cast<int>(a), cy, cx) = CellMask::Ignore;
        }
      }
    }
  }
  return out;
}

std::vector<std::vector<Detection>> decode(const Tensor& head, std::span<const Anchor> anchors, double stride,
                                           double conf_threshold, int num_classes) {
  const std::size_t nb = anchors.size();
  const std::size_t entries = 5 + static_cast<std::size_t>(num_classes);
  if (head.rank() != 4 || head.dim(1) != nb * entries || head.dim(2) != head.dim(3)) {
    throw ShapeError("decode: head " + to_string(head.shape()) + " does not match " + std::to_string(nb) +
                     " anchors x " + std::to_string(entries) + " entries");
  }
  const std::size_t n = head.dim(0), grid = head.dim(2), plane = grid * grid;
  const double canvas = static_cast<double>(grid) * stride;
  const auto t = head.data();
  std::vector<std::vector<Detection>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t b = 0; b < nb; ++b) {
      const double* base = t.data() + (i * nb * entries + b * entries) * plane;
      for (std::size_t y = 0; y < grid; ++y) {
        for (std::size_t x = 0; x < grid; ++x) {
          const std::size_t cell = y * grid + x;
          const double obj = sigmoid_scalar(base[kObj * plane + cell]);
          int best = 0;
          double best_p = -1;
          for (int k = 0; k < num_classes; ++k) {
            const double p = sigmoid_scalar(base[(kCls + k) * plane + cell]);
            if (p > best_p) {
              best_p = p;
              best = k;
            }
          }
          if (obj * best_p < conf_threshold) continue;
          Detection d;
          d.box = clamp_box(decode_box(base[kTx * plane + cell], base[kTy * plane + cell], base[kTw * plane + cell],
                                       base[kTh * plane + cell], static_cast<int>(x), static_cast<int>(y), anchors[b],
                                       stride),
                            canvas, canvas);
          d.objectness = obj;
          d.class_id = best;
          d.class_score = best_p;
          out[i].push_back(d);
        }
      }
    }
  }
  return out;
}

}  // namespace melnet
