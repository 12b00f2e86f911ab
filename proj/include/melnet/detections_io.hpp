#pragma once

#include <span>
#include <string>
#include <vector>

#include "melnet/box.hpp"

namespace melnet {

/// One `class score xmin ymin xmax ymax` line per detection, in pixels.
/// `class` is the class name; the score is objectness times class score.
std::string format_detections(std::span<const Detection> dets, const std::vector<std::string>& class_names);

/// Reads the same format. The class field may be a name from `class_names`
/// or an integer id; the score lands in `objectness` with class_score 1.
/// Errors name `source` and the line.
std::vector<Detection> parse_detections(const std::string& text, const std::vector<std::string>& class_names,
                                        const std::string& source);

}  // namespace melnet
