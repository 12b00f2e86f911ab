#pragma once

#include <span>
#include <vector>

#include "melnet/codec.hpp"
#include "melnet/tensor.hpp"

namespace melnet {

struct LossWeights {
  double box = 5.0;
  double obj = 1.0;
  double noobj = 0.5;
  double cls = 1.0;
};

struct LossParts {
  double box = 0, obj = 0, noobj = 0, cls = 0, total = 0;
};

struct LossResult {
  Tensor total;
  LossParts parts;
};

/// Composite detection loss over a batch.
///
/// heads[s] is the [n, B * (5 + C), S, S] output of scale s and targets[i]
/// the encoded targets of image i (scales in the same order). Per positive
/// anchor-cell: squared error of (sigmoid(t_x), sigmoid(t_y), t_w, t_h),
/// objectness BCE toward 1 and per-class BCE. Per negative cell: objectness
/// BCE toward 0. Ignore cells contribute nothing. The box term is the mean
/// over the 4 * positive coordinates, the obj and cls sums are divided by the
/// positive count and the noobj sum by the negative count, then weighted and
/// added.
LossResult detection_loss(std::span<const Tensor> heads, std::span<const TargetTensor> targets,
                          const LossWeights& weights = {});

/// Binary cross-entropy of sigmoid(z) against y, computed from the logit.
double bce_with_logit(double z, double y);

}  // namespace melnet
