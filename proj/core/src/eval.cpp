#include "couplenet/eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace couplenet {
namespace {

std::vector<std::size_t> by_descending_score(std::span<const Detection> d) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return d[a].score > d[b].score; });
  return order;
}

}  // namespace

std::vector<Detection> nms(std::span<const Detection> detections, double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) {
    throw std::invalid_argument("nms: iou_thresh must lie in (0, 1)");
  }
  const std::vector<std::size_t> order = by_descending_score(detections);
  std::vector<bool> keep(detections.size(), false);
  std::vector<bool> dead(detections.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (dead[i]) continue;
    keep[i] = true;
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (dead[j]) continue;
      if (detections[j].image != detections[i].image || detections[j].label != detections[i].label) continue;
      if (compute_iou(detections[i].box, detections[j].box) > iou_thresh) dead[j] = true;
    }
  }
  std::vector<Detection> out;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (keep[i]) out.push_back(detections[i]);
  }
  return out;
}

std::optional<double> average_precision(std::span<const Detection> detections,
                                        std::span<const GroundTruth> ground_truths,
                                        std::size_t label, double iou_thresh, bool eleven_point) {
  std::map<std::size_t, std::vector<std::pair<Box, bool>>> gt_by_image;
  std::size_t num_gt = 0;
  for (const GroundTruth& g : ground_truths) {
    if (g.label != label) continue;
    gt_by_image[g.image].emplace_back(g.box, false);
    ++num_gt;
  }
  if (num_gt == 0) return std::nullopt;

  std::vector<Detection> dets;
  for (const Detection& d : detections) {
    if (d.label == label) dets.push_back(d);
  }
  const std::vector<std::size_t> order = by_descending_score(dets);

  std::vector<double> precision;
  std::vector<double> recall;
  precision.reserve(order.size());
  recall.reserve(order.size());
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Detection& d = dets[order[rank]];
    auto it = gt_by_image.find(d.image);
    if (it != gt_by_image.end()) {
      double best = -1.0;
      std::size_t best_idx = 0;
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        if (it->second[g].second) continue;
        const double iou = compute_iou(d.box, it->second[g].first);
        if (iou > best) {
          best = iou;
          best_idx = g;
        }
      }
      if (best >= iou_thresh) {
        it->second[best_idx].second = true;
        ++tp;
      }
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }

  if (eleven_point) {
    double ap = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double r = t / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] >= r) p = std::max(p, precision[i]);
      }
      ap += p / 11.0;
    }
    return ap;
  }

  // all-points: envelope over (0, recall..., 1) with sentinels
  std::vector<double> mrec{0.0};
  std::vector<double> mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return ap;
}

MapResult mean_ap(std::span<const Detection> detections, std::span<const GroundTruth> ground_truths,
                  std::size_t num_classes, double iou_thresh, bool eleven_point) {
  MapResult r;
  r.per_class.resize(num_classes);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 1; c <= num_classes; ++c) {
    r.per_class[c - 1] = average_precision(detections, ground_truths, c, iou_thresh, eleven_point);
    if (r.per_class[c - 1]) {
      sum += *r.per_class[c - 1];
      ++n;
    }
  }
  r.map = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return r;
}

double coco_map(std::span<const Detection> detections, std::span<const GroundTruth> ground_truths,
                std::size_t num_classes) {
  double sum = 0.0;
  for (int t = 0; t < 10; ++t) {
    sum += mean_ap(detections, ground_truths, num_classes, 0.5 + 0.05 * t).map;
  }
  return sum / 10.0;
}

}  // namespace couplenet
