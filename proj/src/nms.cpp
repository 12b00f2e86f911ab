#include "melnet/nms.hpp"

#include <algorithm>
#include <map>

namespace melnet {

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dets.size(); ++i) by_class[dets[i].class_id].push_back(i);

  std::vector<std::size_t> kept;
  for (auto& [cls, idx] : by_class) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score() > dets[b].score(); });
    std::vector<std::size_t> chosen;
    for (std::size_t i : idx) {
      const bool suppressed = std::any_of(chosen.begin(), chosen.end(), [&](std::size_t k) {
        return iou(dets[i].box, dets[k].box) > iou_threshold;
      });
      if (!suppressed) chosen.push_back(i);
    }
    kept.insert(kept.end(), chosen.begin(), chosen.end());
  }
  std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    const double sa = dets[a].score(), sb = dets[b].score();
    if (sa != sb) return sa > sb;
    if (dets[a].class_id != dets[b].class_id) return dets[a].class_id < dets[b].class_id;
    return a < b;
  });
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(dets[i]);
  return out;
}

}  // namespace melnet
