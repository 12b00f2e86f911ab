#pragma once

#include <span>
#include <vector>

#include "melnet/box.hpp"

namespace melnet {

/// Class-wise greedy suppression. Within a class, detections are visited by
/// descending score (ties keep input order) and a detection is dropped when
/// its IoU with an already kept one exceeds `iou_threshold`. The result is
/// ordered by descending score, then class id, then input position.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold = 0.5);

}  // namespace melnet
