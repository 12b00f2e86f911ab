#include "melnet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "melnet/kitti.hpp"

namespace melnet {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
const char* const kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void widen() {
    if (!(lo <= hi)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) {
      const double pad = std::max(std::abs(lo) * 0.1, 0.5);
      lo -= pad;
      hi += pad;
    }
  }
};

std::string header(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%g", kWidth) + "\" height=\"" +
         fmt("%g", kHeight) + "\" viewBox=\"0 0 " + fmt("%g", kWidth) + " " + fmt("%g", kHeight) + "\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" + "<text x=\"" + fmt("%g", kWidth / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" + escape(title) +
         "</text>\n";
}

std::string axes(const Range& xr, const Range& yr, const std::string& x_label, const std::string& y_label) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string s = "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<line x1=\"" + fmt("%g", x0) + "\" y1=\"" + fmt("%g", y0) + "\" x2=\"" + fmt("%g", x1) + "\" y2=\"" +
       fmt("%g", y0) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt("%g", x0) + "\" y1=\"" + fmt("%g", y0) + "\" x2=\"" + fmt("%g", x0) + "\" y2=\"" +
       fmt("%g", y1) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    const double yv = yr.lo + f * (yr.hi - yr.lo), yp = y0 - f * (y0 - y1);
    s += "<text x=\"" + fmt("%g", x0 - 6) + "\" y=\"" + fmt("%.1f", yp + 4) + "\" text-anchor=\"end\">" +
         fmt("%.4g", yv) + "</text>\n";
    if (!x_label.empty()) {
      const double xv = xr.lo + f * (xr.hi - xr.lo), xp = x0 + f * (x1 - x0);
      s += "<text x=\"" + fmt("%.1f", xp) + "\" y=\"" + fmt("%g", y0 + 16) + "\" text-anchor=\"middle\">" +
           fmt("%.4g", xv) + "</text>\n";
    }
  }
  if (!x_label.empty()) {
    s += "<text x=\"" + fmt("%g", (x0 + x1) / 2) + "\" y=\"" + fmt("%g", kHeight - 12) +
         "\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
  }
  s += "<text x=\"16\" y=\"" + fmt("%g", (y0 + y1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fmt("%g", (y0 + y1) / 2) + ")\">" + escape(y_label) + "</text>\n</g>\n";
  return s;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& y_label, std::span<const Series> series) {
  Range xr, yr;
  for (const auto& s : series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.widen();
  yr.widen();
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  auto px = [&](double v) { return x0 + (v - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
  auto py = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

  std::string svg = header(title) + axes(xr, yr, "epoch", y_label);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kColours[k % std::size(kColours)];
    std::string points;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!points.empty()) points += ' ';
      points += fmt("%.2f", px(s.x[i])) + "," + fmt("%.2f", py(s.y[i]));
      svg += "<circle cx=\"" + fmt("%.2f", px(s.x[i])) + "\" cy=\"" + fmt("%.2f", py(s.y[i])) + "\" r=\"2\" fill=\"" +
             colour + "\"/>\n";
    }
    svg += std::string("<polyline fill=\"none\" stroke=\"") + colour + "\" stroke-width=\"1.5\" points=\"" + points +
           "\"/>\n";
    if (!s.label.empty()) {
      svg += "<text x=\"" + fmt("%g", x1 - 4) + "\" y=\"" + fmt("%g", y1 + 14 + 14.0 * k) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" + colour + "\">" +
             escape(s.label) + "</text>\n";
    }
  }
  return svg + "</svg>\n";
}

std::string svg_bar_chart(const std::string& title, std::span<const std::string> labels,
                          std::span<const double> values) {
  Range yr;
  yr.add(0);
  for (double v : values) yr.add(v);
  yr.widen();
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  auto py = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };
  std::string svg = header(title) + axes(Range{}, yr, "", "AP");
  const std::size_t n = std::max<std::size_t>(1, values.size());
  const double slot = (x1 - x0) / static_cast<double>(n);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::isfinite(values[i]) ? values[i] : 0.0;
    const double top = std::min(py(v), py(0)), h = std::abs(py(v) - py(0));
    const double x = x0 + slot * (static_cast<double>(i) + 0.15);
    svg += "<rect x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", top) + "\" width=\"" + fmt("%.2f", slot * 0.7) +
           "\" height=\"" + fmt("%.2f", h) + "\" fill=\"" + kColours[0] + "\"/>\n";
    const double cx = x + slot * 0.35;
    svg += "<text x=\"" + fmt("%.2f", cx) + "\" y=\"" + fmt("%.2f", top - 4) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + fmt("%.3f", v) + "</text>\n";
    svg += "<text x=\"" + fmt("%.2f", cx) + "\" y=\"" + fmt("%g", y0 + 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           escape(i < labels.size() ? labels[i] : std::to_string(i)) + "</text>\n";
  }
  return svg + "</svg>\n";
}

std::string summary_table(std::span<const EpochRow> rows, std::span<const int> epochs) {
  std::vector<const EpochRow*> cols;
  for (int e : epochs) {
    const EpochRow* found = nullptr;
    for (const auto& r : rows) {
      if (r.epoch == e) found = &r;
    }
    cols.push_back(found);
  }
  char buf[64];
  std::string out = "Metric      ";
  for (int e : epochs) {
    std::snprintf(buf, sizeof buf, " %10s", (std::to_string(e) + " EPOCH").c_str());
    out += buf;
  }
  out += '\n';
  auto line = [&](const char* name, double EpochRow::*field, const char* f) {
    std::snprintf(buf, sizeof buf, "%-12s", name);
    out += buf;
    for (const EpochRow* r : cols) {
      if (r) {
        std::snprintf(buf, sizeof buf, f, r->*field);
      } else {
        std::snprintf(buf, sizeof buf, " %10s", "-");
      }
      out += buf;
    }
    out += '\n';
  };
  line("mAP", &EpochRow::map, " %10.2f");
  line("LOSS", &EpochRow::loss, " %10.2f");
  line("Class Acc.", &EpochRow::class_acc, " %10.2f");
  line("Obj. Acc.", &EpochRow::obj_acc, " %10.2f");
  line("No Obj. Acc.", &EpochRow::noobj_acc, " %10.2f");
  return out;
}

std::vector<int> default_summary_epochs(std::span<const EpochRow> rows) {
  if (rows.empty()) return {};
  int last = 0;
  for (const auto& r : rows) last = std::max(last, r.epoch);
  std::vector<int> out;
  for (int e = 50; e <= last; e += 50) out.push_back(e);
  if (out.empty()) out.push_back(last);
  return out;
}

std::vector<fs::path> write_report(std::span<const EpochRow> rows, std::span<const int> summary_epochs,
                                   std::span<const ClassAP> class_ap, std::span<const std::string> class_names,
                                   const fs::path& out) {
  fs::create_directories(out);
  std::vector<fs::path> written;
  auto chart = [&](const char* file, const char* title, const char* y_label, double EpochRow::*field) {
    Series s;
    for (const auto& r : rows) {
      s.x.push_back(r.epoch);
      s.y.push_back(r.*field);
    }
    const fs::path p = out / file;
    write_text_file(p, svg_line_chart(title, y_label, {&s, 1}));
    written.push_back(p);
  };
  chart("map.svg", "mAP@0.5", "mAP", &EpochRow::map);
  chart("loss.svg", "Training loss", "loss", &EpochRow::loss);
  chart("class_acc.svg", "Class accuracy", "%", &EpochRow::class_acc);
  chart("obj_acc.svg", "Object accuracy", "%", &EpochRow::obj_acc);
  chart("noobj_acc.svg", "No-object accuracy", "%", &EpochRow::noobj_acc);
  write_text_file(out / "summary.txt", summary_table(rows, summary_epochs));
  written.push_back(out / "summary.txt");
  if (!class_ap.empty()) {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& c : class_ap) {
      labels.push_back(c.class_id >= 0 && static_cast<std::size_t>(c.class_id) < class_names.size()
                           ? class_names[c.class_id]
                           : std::to_string(c.class_id));
      values.push_back(c.ap);
    }
    write_text_file(out / "class_ap.svg", svg_bar_chart("Per-class AP@0.5", labels, values));
    written.push_back(out / "class_ap.svg");
  }
  return written;
}

}  // namespace melnet
