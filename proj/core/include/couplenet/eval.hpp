#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "couplenet/boxes.hpp"

namespace couplenet {

/// One scored, decoded box. label is a foreground class in [1, C].
struct Detection {
  std::size_t image = 0;
  std::size_t label = 0;
  double score = 0.0;
  Box box;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruth {
  std::size_t image = 0;
  std::size_t label = 0;
  Box box;
};

/// Greedy non-maximum suppression, independently per (image, label).
/// Repeatedly keeps the highest score and drops same-group boxes with
/// IoU > iou_thresh. Equal scores keep the lower input index first.
/// Output preserves input order of the kept detections.
std::vector<Detection> nms(std::span<const Detection> detections, double iou_thresh);

/// Average precision for one class. Detections are matched in descending
/// score order (stable) to the best still-unmatched ground truth of the same
/// image with IoU >= iou_thresh. Returns the area under the monotone precision
/// envelope over all recall points, or the VOC07 11-point mean when
/// eleven_point is set. Returns nullopt when the class has no ground truth.
std::optional<double> average_precision(std::span<const Detection> detections,
                                        std::span<const GroundTruth> ground_truths,
                                        std::size_t label, double iou_thresh,
                                        bool eleven_point = false);

struct MapResult {
  double map = 0.0;                               ///< mean over classes with ground truth
  std::vector<std::optional<double>> per_class;   ///< index label - 1
};

MapResult mean_ap(std::span<const Detection> detections, std::span<const GroundTruth> ground_truths,
                  std::size_t num_classes, double iou_thresh, bool eleven_point = false);

/// Mean of mean_ap over IoU thresholds 0.50, 0.55, ..., 0.95.
double coco_map(std::span<const Detection> detections, std::span<const GroundTruth> ground_truths,
                std::size_t num_classes);

}  // namespace couplenet
