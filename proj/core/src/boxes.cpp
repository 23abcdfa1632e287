#include "couplenet/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace couplenet {

double Box::area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

double compute_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Box clip_box(const Box& b, double image_w, double image_h) {
  return {std::clamp(b.x1, 0.0, image_w), std::clamp(b.y1, 0.0, image_h),
          std::clamp(b.x2, 0.0, image_w), std::clamp(b.y2, 0.0, image_h)};
}

BoxDeltas encode_targets(const RoI& roi, const Box& gt) {
  const double rw = roi.width();
  const double rh = roi.height();
  if (!(rw > 0.0) || !(rh > 0.0)) {
    throw std::invalid_argument("encode_targets: RoI must have positive extent");
  }
  const double gw = gt.width();
  const double gh = gt.height();
  if (!(gw > 0.0) || !(gh > 0.0)) {
    throw std::invalid_argument("encode_targets: ground-truth box must have positive extent");
  }
  const double rx = roi.x1 + 0.5 * rw;
  const double ry = roi.y1 + 0.5 * rh;
  const double gx = gt.x1 + 0.5 * gw;
  const double gy = gt.y1 + 0.5 * gh;
  return {(gx - rx) / rw, (gy - ry) / rh, std::log(gw / rw), std::log(gh / rh)};
}

Box decode_boxes(const RoI& roi, const BoxDeltas& d) {
  const double rw = roi.width();
  const double rh = roi.height();
  if (!(rw > 0.0) || !(rh > 0.0)) {
    throw std::invalid_argument("decode_boxes: RoI must have positive extent");
  }
  const double cx = roi.x1 + 0.5 * rw + d[0] * rw;
  const double cy = roi.y1 + 0.5 * rh + d[1] * rh;
  // exp of a runaway prediction must not produce inf
  const double w = rw * std::exp(std::min(d[2], 10.0));
  const double h = rh * std::exp(std::min(d[3], 10.0));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box decode_boxes(const RoI& roi, const BoxDeltas& deltas, double image_w, double image_h) {
  return clip_box(decode_boxes(roi, deltas), image_w, image_h);
}

}  // namespace couplenet
