#pragma once

#include <array>

#include "couplenet/roi_layers.hpp"

namespace couplenet {

/// Axis-aligned box with continuous corners (x1, y1) <= (x2, y2).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  [[nodiscard]] double width() const { return x2 - x1; }
  [[nodiscard]] double height() const { return y2 - y1; }
  [[nodiscard]] double area() const;

  friend bool operator==(const Box&, const Box&) = default;
};

inline Box to_box(const RoI& r) { return {r.x1, r.y1, r.x2, r.y2}; }
inline RoI to_roi(const Box& b, std::size_t batch_index = 0) {
  return {batch_index, b.x1, b.y1, b.x2, b.y2};
}

/// Intersection over union; 0 when the union is empty.
double compute_iou(const Box& a, const Box& b);

Box clip_box(const Box& b, double image_w, double image_h);

using BoxDeltas = std::array<double, 4>;

/// (dx, dy, dw, dh) taking the RoI onto gt in center/size form.
/// Throws std::invalid_argument for non-positive RoI or gt extents.
BoxDeltas encode_targets(const RoI& roi, const Box& gt);

/// Exact inverse of encode_targets (no clipping).
Box decode_boxes(const RoI& roi, const BoxDeltas& deltas);

/// decode_boxes followed by clipping to the image.
Box decode_boxes(const RoI& roi, const BoxDeltas& deltas, double image_w, double image_h);

}  // namespace couplenet
