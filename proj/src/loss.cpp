#include "melnet/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace melnet {

double bce_with_logit(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

LossResult detection_loss(std::span<const Tensor> heads, std::span<const TargetTensor> targets,
                          const LossWeights& weights) {
  if (heads.empty()) throw ShapeError("detection_loss: no heads");
  const std::size_t n = heads[0].dim(0);
  if (targets.size() != n) {
    throw ShapeError("detection_loss: " + std::to_string(targets.size()) + " targets for a batch of " +
                     std::to_string(n));
  }
  for (const auto& t : targets) {
    if (t.scales.size() != heads.size()) throw ShapeError("detection_loss: target scale count differs from heads");
  }
  for (std::size_t s = 0; s < heads.size(); ++s) {
    const auto& ref = targets[0].scales[s];
    const Shape want = {n, static_cast<std::size_t>(ref.anchors * ref.entries()), static_cast<std::size_t>(ref.grid),
                        static_cast<std::size_t>(ref.grid)};
    if (heads[s].shape() != want) {
      throw ShapeError("detection_loss: head " + to_string(heads[s].shape()) + " does not match targets " +
                       to_string(want));
    }
    for (const auto& t : targets) {
      const auto& st = t.scales[s];
      if (st.grid != ref.grid || st.anchors != ref.anchors || st.num_classes != ref.num_classes ||
          st.mask.size() != static_cast<std::size_t>(st.anchors * st.grid * st.grid) ||
          st.values.size() != st.mask.size() * st.entries()) {
        throw ShapeError("detection_loss: inconsistent target tensors");
      }
    }
  }

  std::size_t positives = 0, negatives = 0;
  for (const auto& t : targets)
    for (const auto& st : t.scales)
      for (auto m : st.mask) {
        positives += m == CellMask::Positive;
        negatives += m == CellMask::Negative;
      }
  const double inv_pos = positives ? 1.0 / static_cast<double>(positives) : 0.0;
  const double inv_neg = negatives ? 1.0 / static_cast<double>(negatives) : 0.0;
  const double inv_box = inv_pos / 4.0;

  double box = 0, obj = 0, noobj = 0, cls = 0;
  std::vector<std::vector<double>> grads(heads.size());
  for (std::size_t s = 0; s < heads.size(); ++s) {
    const auto x = heads[s].data();
    auto& g = grads[s];
    g.assign(x.size(), 0.0);
    const auto& ref = targets[0].scales[s];
    const std::size_t nb = ref.anchors, e = ref.entries(), plane = static_cast<std::size_t>(ref.grid) * ref.grid;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& st = targets[i].scales[s];
      for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t base = (i * nb + b) * e * plane;
        for (std::size_t c = 0; c < plane; ++c) {
          const CellMask m = st.mask[b * plane + c];
          if (m == CellMask::Ignore) continue;
          const std::size_t oi = base + kObj * plane + c;
          const double zo = x[oi];
          if (m == CellMask::Negative) {
            noobj += bce_with_logit(zo, 0.0);
            g[oi] = weights.noobj * inv_neg * sigmoid_scalar(zo);
            continue;
          }
          const double* tv = st.values.data() + b * e * plane + c;
          for (int k : {kTx, kTy}) {
            const std::size_t xi = base + k * plane + c;
            const double p = sigmoid_scalar(x[xi]), want = sigmoid_scalar(tv[k * plane]);
            box += (p - want) * (p - want);
            g[xi] = weights.box * inv_box * 2.0 * (p - want) * p * (1.0 - p);
          }
          for (int k : {kTw, kTh}) {
            const std::size_t xi = base + k * plane + c;
            const double d = x[xi] - tv[k * plane];
            box += d * d;
            g[xi] = weights.box * inv_box * 2.0 * d;
          }
          obj += bce_with_logit(zo, 1.0);
          g[oi] = weights.obj * inv_pos * (sigmoid_scalar(zo) - 1.0);
          for (std::size_t k = kCls; k < e; ++k) {
            const std::size_t xi = base + k * plane + c;
            const double y = tv[k * plane];
            cls += bce_with_logit(x[xi], y);
            g[xi] = weights.cls * inv_pos * (sigmoid_scalar(x[xi]) - y);
          }
        }
      }
    }
  }

  LossParts parts;
  parts.box = box * inv_box;
  parts.obj = obj * inv_pos;
  parts.noobj = noobj * inv_neg;
  parts.cls = cls * inv_pos;
  parts.total = weights.box * parts.box + weights.obj * parts.obj + weights.noobj * parts.noobj + weights.cls * parts.cls;

  std::vector<Tensor> inputs(heads.begin(), heads.end());
  Tensor total = make_result({}, {parts.total}, inputs,
                             [grads = std::move(grads)](std::span<const double> go, std::span<double* const> gi) {
                               for (std::size_t s = 0; s < grads.size(); ++s) {
                                 if (!gi[s]) continue;
                                 for (std::size_t j = 0; j < grads[s].size(); ++j) gi[s][j] += go[0] * grads[s][j];
                               }
                             });
  return {total, parts};
}

}  // namespace melnet
