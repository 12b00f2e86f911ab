#include "melnet/metrics.hpp"

#include <algorithm>
#include <cstdio>

namespace melnet {

CellCounts& CellCounts::operator+=(const CellCounts& o) {
  positives += o.positives;
  class_correct += o.class_correct;
  obj_correct += o.obj_correct;
  negatives += o.negatives;
  noobj_correct += o.noobj_correct;
  return *this;
}

namespace {
double percent(std::size_t num, std::size_t den) {
  return den ? 100.0 * static_cast<double>(num) / static_cast<double>(den) : 100.0;
}
}  // namespace

double CellCounts::class_acc() const { return percent(class_correct, positives); }
double CellCounts::obj_acc() const { return percent(obj_correct, positives); }
double CellCounts::noobj_acc() const { return percent(noobj_correct, negatives); }

CellCounts batch_metrics(std::span<const Tensor> heads, std::span<const TargetTensor> targets) {
  CellCounts out;
  for (std::size_t s = 0; s < heads.size(); ++s) {
    const auto x = heads[s].data();
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto& st = targets[i].scales.at(s);
      const std::size_t e = st.entries(), plane = static_cast<std::size_t>(st.grid) * st.grid;
      if (heads[s].dim(0) != targets.size() || heads[s].dim(1) != st.anchors * e || heads[s].dim(2) != static_cast<std::size_t>(st.grid)) {
        throw ShapeError("batch_metrics: head " + to_string(heads[s].shape()) + " does not match targets");
      }
      for (std::size_t b = 0; b < static_cast<std::size_t>(st.anchors); ++b) {
        const double* h = x.data() + (i * st.anchors + b) * e * plane;
        for (std::size_t c = 0; c < plane; ++c) {
          const CellMask m = st.mask[b * plane + c];
          const double p = sigmoid_scalar(h[kObj * plane + c]);
          if (m == CellMask::Negative) {
            ++out.negatives;
            out.noobj_correct += p < 0.5;
          } else if (m == CellMask::Positive) {
            ++out.positives;
            out.obj_correct += p > 0.5;
            std::size_t best = kCls, want = kCls;
            for (std::size_t k = kCls; k < e; ++k) {
              if (h[k * plane + c] > h[best * plane + c]) best = k;
              if (st.values[(b * e + k) * plane + c] > 0.5) want = k;
            }
            out.class_correct += best == want;
          }
        }
      }
    }
  }
  return out;
}

double average_precision(const std::vector<std::vector<Detection>>& dets,
                         const std::vector<std::vector<GroundTruth>>& gts, int class_id, double iou_threshold) {
  if (dets.size() != gts.size()) throw std::invalid_argument("average_precision: image counts differ");
  std::size_t total_gt = 0;
  for (const auto& g : gts)
    for (const auto& t : g) total_gt += t.class_id == class_id;
  if (total_gt == 0) return 0.0;

  struct Ranked {
    double score;
    std::size_t image, index;
  };
  std::vector<Ranked> ranked;
  for (std::size_t i = 0; i < dets.size(); ++i)
    for (std::size_t j = 0; j < dets[i].size(); ++j)
      if (dets[i][j].class_id == class_id) ranked.push_back({dets[i][j].score(), i, j});
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> matched(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) matched[i].assign(gts[i].size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& d = dets[ranked[r].image][ranked[r].index];
    const auto& g = gts[ranked[r].image];
    long best = -1;
    double best_iou = iou_threshold;
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (g[k].class_id != class_id || matched[ranked[r].image][k]) continue;
      const double v = iou(d.box, g[k].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<long>(k);
        best_iou = v;
      }
    }
    if (best >= 0) {
      matched[ranked[r].image][best] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  // Precision envelope from the right, then area over recall steps.
  for (std::size_t r = precision.size(); r-- > 1;) precision[r - 1] = std::max(precision[r - 1], precision[r]);
  double ap = 0, prev_recall = 0;
  for (std::size_t r = 0; r < precision.size(); ++r) {
    ap += (recall[r] - prev_recall) * precision[r];
    prev_recall = recall[r];
  }
  return ap;
}

std::vector<ClassAP> per_class_ap(const std::vector<std::vector<Detection>>& dets,
                                  const std::vector<std::vector<GroundTruth>>& gts, int num_classes,
                                  double iou_threshold) {
  std::vector<ClassAP> out;
  for (int c = 0; c < num_classes; ++c) {
    ClassAP a;
    a.class_id = c;
    for (const auto& g : gts)
      for (const auto& t : g) a.gt_count += t.class_id == c;
    a.ap = average_precision(dets, gts, c, iou_threshold);
    out.push_back(a);
  }
  return out;
}

double mean_ap(std::span<const ClassAP> aps) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& a : aps) {
    if (a.gt_count == 0) continue;
    sum += a.ap;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

std::string format_ap_report(std::span<const ClassAP> aps, const std::vector<std::string>& class_names) {
  std::vector<ClassAP> rows;
  for (const auto& a : aps)
    if (a.gt_count > 0) rows.push_back(a);
  std::stable_sort(rows.begin(), rows.end(), [](const ClassAP& a, const ClassAP& b) { return a.ap > b.ap; });
  std::string out;
  char buf[160];
  for (const auto& a : rows) {
    const std::string name =
        a.class_id < static_cast<int>(class_names.size()) ? class_names[a.class_id] : std::to_string(a.class_id);
    std::snprintf(buf, sizeof buf, "%-16s AP %.4f  (%zu objects)\n", name.c_str(), a.ap, a.gt_count);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-16s    %.4f\n", "mAP", mean_ap(aps));
  out += buf;
  return out;
}

}  // namespace melnet
