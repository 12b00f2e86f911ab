#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "melnet/adam.hpp"
#include "melnet/anchors.hpp"
#include "melnet/augment.hpp"
#include "melnet/dataset.hpp"
#include "melnet/loss.hpp"
#include "melnet/metrics.hpp"
#include "melnet/network.hpp"

namespace melnet {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingConfig {
  double learning_rate = 1e-5;
  double weight_decay = 1e-4;
  int batch_size = 4;
  int epochs = 1;
  int input_size = 640;
  std::uint64_t seed = 0;
  LossWeights loss;
  bool augment = true;
  AugmentPlan augment_plan;
  double ignore_iou = 0.5;
  /// Evaluation thresholds.
  double conf_threshold = 0.001;
  double nms_iou = 0.5;
  /// Parameters and statistics are kept at float precision after every
  /// update; arithmetic is always double.
  bool single_precision = true;
  /// Anchors sorted by area, 2 * anchors_per_scale of them.
  std::vector<Anchor> anchors = default_anchors(6);

  void validate(int anchors_per_scale) const;
};

struct EpochRow {
  int epoch = 0;
  double map = 0;
  double loss = 0;
  double class_acc = 0;
  double obj_acc = 0;
  double noobj_acc = 0;
};

/// A letterboxed batch ready for the network.
struct PreparedBatch {
  Tensor images;
  std::vector<TargetTensor> targets;
  std::vector<std::vector<GroundTruth>> truths;  // canvas pixels
};

struct EvalResult {
  double map = 0;
  std::vector<ClassAP> per_class;
  CellCounts counts;
  double loss = 0;
  std::vector<std::vector<Detection>> detections;  // canvas pixels, after NMS
};

/// Letterboxes, optionally augments, and encodes samples.
PreparedBatch prepare_batch(std::span<const Sample> samples, const ArchSpec& spec, const TrainingConfig& cfg);

/// Decodes both heads of one image, clamps, thresholds and applies NMS.
std::vector<std::vector<Detection>> postprocess(const Heads& heads, const std::vector<std::vector<Anchor>>& anchors,
                                                int num_classes, double conf_threshold, double nms_iou);

/// Inference-mode evaluation over a whole source.
EvalResult evaluate(const Network& net, const SampleSource& source, const TrainingConfig& cfg);

/// Detections in source-image pixels for one image. Boxes with no area
/// inside the source (entirely in the letterbox padding) are dropped.
std::vector<Detection> predict(const Network& net, const Image& image, const TrainingConfig& cfg,
                               double conf_threshold);

/// FNV-1a 64 hash of a canonical description of every setting that shapes
/// training except the epoch budget.
std::uint64_t config_hash(const ArchSpec& spec, const TrainingConfig& cfg);

class Trainer {
 public:
  Trainer(ArchSpec spec, TrainingConfig cfg, const SampleSource& train, const SampleSource* val);

  /// One optimizer step on the given training indices; returns the loss.
  double step(std::span<const std::size_t> indices, int epoch, std::size_t batch_no);
  /// Shuffled pass over the training set followed by evaluation.
  EpochRow run_epoch();
  /// Runs epochs until `cfg.epochs` are done. `on_epoch` sees every row.
  void run(const std::function<void(const EpochRow&)>& on_epoch = {});

  /// Writes `<prefix>.melw`, `<prefix>.mela` and `<prefix>.json`. The JSON
  /// also carries what inference needs: architecture, anchors, input size
  /// and class names.
  void save_checkpoint(const std::filesystem::path& prefix, std::span<const std::string> class_names = {});
  /// Restores weights, optimizer state, epoch counter and metric log.
  /// Throws TrainingError when the checkpoint was made with another config.
  void load_checkpoint(const std::filesystem::path& prefix);

  Network& network() { return net_; }
  const AdamState& optimizer() const { return adam_; }
  const std::vector<EpochRow>& log() const { return log_; }
  int epochs_done() const { return epoch_; }
  const TrainingConfig& config() const { return cfg_; }

 private:
  ArchSpec spec_;
  TrainingConfig cfg_;
  const SampleSource& train_;
  const SampleSource* val_;
  Network net_;
  AdamState adam_;
  int epoch_ = 0;
  std::vector<EpochRow> log_;
};

/// A network restored for inference together with the settings it was
/// trained with.
struct Model {
  Network net;
  TrainingConfig cfg;
  std::vector<std::string> class_names;
};

/// Accepts a checkpoint prefix or any of its three files.
Model load_model(const std::filesystem::path& checkpoint);

std::string metrics_csv(std::span<const EpochRow> rows);
std::vector<EpochRow> parse_metrics_csv(const std::string& text);

}  // namespace melnet
