#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace melnet {

/// Operator commands behind the CLI. Each returns the process exit code and
/// writes only under its `out` directory. Progress goes to `log`,
/// diagnostics to `err`.

struct ConvertArgs {
  std::filesystem::path kitti_root;
  std::filesystem::path out;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};
int cmd_convert(const ConvertArgs& args, std::ostream& log, std::ostream& err);

struct AnchorsArgs {
  std::vector<std::filesystem::path> manifests;
  std::filesystem::path out;
  int k = 6;
  std::uint64_t seed = 0;
  int input_size = 640;
  int num_classes = 9;
  int restarts = 64;
};
int cmd_anchors(const AnchorsArgs& args, std::ostream& log, std::ostream& err);

struct TrainArgs {
  std::filesystem::path config;
  /// Overrides the config's output_dir.
  std::optional<std::filesystem::path> out;
  bool resume = false;
};
int cmd_train(const TrainArgs& args, std::ostream& log, std::ostream& err);

struct EvalArgs {
  std::filesystem::path data;
  std::optional<std::filesystem::path> weights;
  /// Directory of `<stem>.txt` detection dumps, evaluated instead of a model.
  std::optional<std::filesystem::path> detections;
  std::vector<std::string> class_names;  // dumps only; defaults to KITTI
  std::filesystem::path out;
  double conf = 0.001;
  double iou = 0.5;
};
int cmd_eval(const EvalArgs& args, std::ostream& log, std::ostream& err);

struct PredictArgs {
  std::filesystem::path weights;
  std::vector<std::filesystem::path> images;
  std::filesystem::path out;
  double conf = 0.25;
  std::optional<double> nms;
  bool annotate = false;
};
int cmd_predict(const PredictArgs& args, std::ostream& log, std::ostream& err);

struct ReportArgs {
  std::filesystem::path metrics_csv;
  std::filesystem::path out;
  std::vector<int> epochs;
  /// eval.json written by cmd_eval, for the per-class AP chart.
  std::optional<std::filesystem::path> ap_report;
};
int cmd_report(const ReportArgs& args, std::ostream& log, std::ostream& err);

}  // namespace melnet
