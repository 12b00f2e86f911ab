#include "melnet/detections_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace melnet {

std::string format_detections(std::span<const Detection> dets, const std::vector<std::string>& class_names) {
  std::string out;
  char buf[256];
  for (const auto& d : dets) {
    const std::string name = d.class_id >= 0 && static_cast<std::size_t>(d.class_id) < class_names.size()
                                 ? class_names[d.class_id]
                                 : std::to_string(d.class_id);
    std::snprintf(buf, sizeof buf, " %.9f %.4f %.4f %.4f %.4f\n", d.score(), d.box.xmin, d.box.ymin, d.box.xmax,
                  d.box.ymax);
    out += name + buf;
  }
  return out;
}

std::vector<Detection> parse_detections(const std::string& text, const std::vector<std::string>& class_names,
                                        const std::string& source) {
  std::vector<Detection> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      return std::invalid_argument(source + ":" + std::to_string(lineno) + ": " + why);
    };
    std::istringstream ls(line);
    std::string cls;
    Detection d;
    double score = 0;
    if (!(ls >> cls >> score >> d.box.xmin >> d.box.ymin >> d.box.xmax >> d.box.ymax)) {
      throw fail("expected `class score xmin ymin xmax ymax`");
    }
    std::string rest;
    if (ls >> rest) throw fail("trailing fields");
    const auto it = std::find(class_names.begin(), class_names.end(), cls);
    if (it != class_names.end()) {
      d.class_id = static_cast<int>(it - class_names.begin());
    } else {
      int id = -1;
      const auto [p, ec] = std::from_chars(cls.data(), cls.data() + cls.size(), id);
      if (ec != std::errc() || p != cls.data() + cls.size() || id < 0 ||
          id >= static_cast<int>(class_names.size())) {
        throw fail("unknown class '" + cls + "'");
      }
      d.class_id = id;
    }
    if (!std::isfinite(score) || d.box.xmax < d.box.xmin || d.box.ymax < d.box.ymin) throw fail("invalid detection");
    d.objectness = score;
    d.class_score = 1.0;
    out.push_back(d);
  }
  return out;
}

}  // namespace melnet
