#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "melnet/box.hpp"
#include "melnet/codec.hpp"
#include "melnet/tensor.hpp"

namespace melnet {

/// Cell counts behind the three accuracies; add across batches, then read
/// percentages. An empty denominator reads as 100%.
struct CellCounts {
  std::size_t positives = 0;
  std::size_t class_correct = 0;
  std::size_t obj_correct = 0;
  std::size_t negatives = 0;
  std::size_t noobj_correct = 0;

  CellCounts& operator+=(const CellCounts& o);
  double class_acc() const;
  double obj_acc() const;
  double noobj_acc() const;
};

/// At positive cells: argmax class equals the target class; objectness
/// probability > 0.5. At negative cells: objectness probability < 0.5.
CellCounts batch_metrics(std::span<const Tensor> heads, std::span<const TargetTensor> targets);

struct GroundTruth {
  BoxXYXY box;
  int class_id = 0;
};

/// All-point interpolated AP of one class. Detections of all images are
/// ranked together by score (ties keep image, then list order); each one is
/// a true positive when some not yet matched ground truth of its class in
/// the same image overlaps it by at least `iou_threshold`, taking the best
/// such overlap. Returns 0 when the class has no ground truth.
double average_precision(const std::vector<std::vector<Detection>>& dets,
                         const std::vector<std::vector<GroundTruth>>& gts, int class_id, double iou_threshold = 0.5);

struct ClassAP {
  int class_id = 0;
  double ap = 0;
  std::size_t gt_count = 0;
};

std::vector<ClassAP> per_class_ap(const std::vector<std::vector<Detection>>& dets,
                                  const std::vector<std::vector<GroundTruth>>& gts, int num_classes,
                                  double iou_threshold = 0.5);

/// Unweighted mean over classes with at least one ground truth (0 if none).
double mean_ap(std::span<const ClassAP> aps);

/// One line per class with ground truth, highest AP first.
std::string format_ap_report(std::span<const ClassAP> aps, const std::vector<std::string>& class_names);

}  // namespace melnet
