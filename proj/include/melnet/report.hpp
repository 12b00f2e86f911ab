#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "melnet/metrics.hpp"
#include "melnet/train.hpp"

namespace melnet {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

/// Standalone SVG line chart. Ranges that collapse to a point are widened so
/// one-row logs still render.
std::string svg_line_chart(const std::string& title, const std::string& y_label, std::span<const Series> series);

/// Standalone SVG bar chart with one bar per label.
std::string svg_bar_chart(const std::string& title, std::span<const std::string> labels,
                          std::span<const double> values);

/// Metric-by-epoch table: one column per requested epoch, rows mAP, LOSS and
/// the three accuracies. Epochs missing from the log print "-".
std::string summary_table(std::span<const EpochRow> rows, std::span<const int> epochs);

/// Epochs 50, 100, ... up to the last logged epoch, or just the last epoch
/// when the log is shorter than 50.
std::vector<int> default_summary_epochs(std::span<const EpochRow> rows);

/// Writes map.svg, loss.svg, class_acc.svg, obj_acc.svg, noobj_acc.svg and
/// summary.txt under `out`, plus class_ap.svg when `class_ap` is non-empty.
/// Returns the written paths in that order.
std::vector<std::filesystem::path> write_report(std::span<const EpochRow> rows, std::span<const int> summary_epochs,
                                                std::span<const ClassAP> class_ap,
                                                std::span<const std::string> class_names,
                                                const std::filesystem::path& out);

}  // namespace melnet
