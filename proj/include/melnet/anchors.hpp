#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "melnet/box.hpp"

namespace melnet {

/// Box width and height in input pixels.
struct WHSample {
  double w = 0, h = 0;

  auto operator<=>(const WHSample&) const = default;
};

struct KMeansResult {
  /// Sorted by area ascending.
  std::vector<Anchor> anchors;
  double mean_iou = 0;
  /// Mean best-anchor IoU after seeding and after every accepted update.
  std::vector<double> history;
  int iterations = 0;
};

/// k-means over box shapes with distance 1 - IoU of origin-centred boxes.
///
/// Samples are put in canonical order first, so the result only depends on
/// the multiset of samples and `seed`. Every restart draws a seeded first
/// centroid. The first restart then repeatedly adds the sample farthest
/// from all chosen centroids (ties to the lower sample index); later ones
/// draw it with probability proportional to the squared distance. Updates
/// take the per-cluster median of w and h and are only kept when the mean
/// best-anchor IoU does not drop. The best of `restarts` runs is returned.
KMeansResult kmeans_iou(std::span<const WHSample> samples, int k, std::uint64_t seed, int max_iter = 100,
                        int restarts = 64);

/// Mean over samples of the best IoU against any anchor.
double mean_best_iou(std::span<const WHSample> samples, std::span<const Anchor> anchors);

/// Pairs the (j + 0.5) / k quantiles of widths and heights taken separately.
std::vector<Anchor> quantile_anchors(std::span<const WHSample> samples, int k);

/// Splits area-sorted anchors into `scales` equal groups, largest group
/// first: group 0 feeds the stride-32 head. Order within a group follows
/// the input order.
std::vector<std::vector<Anchor>> assign_to_scales(std::span<const Anchor> sorted_anchors, int scales = 2);

/// One `pw ph` pair per line after a `#` header carrying k, seed and mean IoU.
std::string anchors_to_text(std::span<const Anchor> anchors, std::uint64_t seed, double mean_iou);
std::vector<Anchor> anchors_from_text(const std::string& text);

/// Conventional priors for 640 px input, used when no clustering has been run.
std::vector<Anchor> default_anchors(int count = 6);

}  // namespace melnet
