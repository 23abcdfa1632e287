#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "couplenet/tensor.hpp"

namespace couplenet {

/// A region proposal: batch element plus continuous corners in image pixels.
struct RoI {
  std::size_t batch_index = 0;
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  [[nodiscard]] double width() const { return x2 - x1; }
  [[nodiscard]] double height() const { return y2 - y1; }

  friend bool operator==(const RoI&, const RoI&) = default;
};

/// Half-open pixel range [start, end) of one pooling bin on the feature map.
struct BinRange {
  int hstart = 0;
  int hend = 0;
  int wstart = 0;
  int wend = 0;

  [[nodiscard]] bool empty() const { return hend <= hstart || wend <= wstart; }
  [[nodiscard]] int count() const { return empty() ? 0 : (hend - hstart) * (wend - wstart); }

  friend bool operator==(const BinRange&, const BinRange&) = default;
};

/// Bin layout of one RoI on a feature map, bins stored row-major (out_h x out_w).
struct BinGrid {
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::vector<BinRange> bins;

  [[nodiscard]] const BinRange& bin(std::size_t i, std::size_t j) const {
    return bins[i * out_w + j];
  }
};

/// Quantized RoI extent on the feature map.
struct QuantizedRoI {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;
};

/// Scale the corners, floor the start and ceil the end, with at least one
/// pixel of extent per axis.
QuantizedRoI quantize_roi(const RoI& roi, double spatial_scale);

/// Bin boundaries shared by both pooling operators: bin i along an axis of
/// integer extent E covers [floor(i*E/k), ceil((i+1)*E/k)) offset by the
/// quantized start, clipped to [0, map_extent).
BinGrid compute_bins(const RoI& roi, std::size_t out_h, std::size_t out_w, double spatial_scale,
                     std::size_t map_h, std::size_t map_w);

/// Sentinel stored in an argmax map for bins without source pixels.
inline constexpr std::int64_t kEmptyBin = -1;

struct RoIMaxPooled {
  Tensor pooled;                     ///< (1, C, out_h, out_w)
  std::vector<std::int64_t> argmax;  ///< flat index into features, per (channel, bin)
  BinGrid grid;
};

/// RoI max pooling. Ties keep the first pixel in row-major scan order.
RoIMaxPooled roi_pool_max(const Tensor& features, const RoI& roi, std::size_t out_h,
                          std::size_t out_w, double spatial_scale);

/// Scatter-adds each upstream entry onto its recorded argmax pixel.
Tensor roi_pool_max_backward(const std::vector<std::int64_t>& argmax, const Tensor& upstream_grad,
                             const Shape& feature_shape);

/// Output of position-sensitive average pooling for one RoI.
struct PooledLocal {
  Tensor values;                        ///< (1, C+1, k, k)
  std::vector<int> bin_source_counts;   ///< k*k, pixels averaged per bin
  BinGrid grid;
  std::size_t batch_index = 0;
};

/// Position-sensitive average pooling. Output bin (i, j) of class c reads
/// channel c*k*k + i*k + j of the score maps.
PooledLocal psroi_pool_avg(const Tensor& score_maps, const RoI& roi, std::size_t k,
                           std::size_t num_classes_plus_bg, double spatial_scale);

/// Spreads each bin's cotangent / count uniformly over its source pixels in
/// the bin's own channel. Empty bins contribute nothing.
Tensor psroi_pool_avg_backward(const PooledLocal& forward, const Tensor& upstream_grad,
                               const Shape& score_map_shape);

/// Accumulating variant used by the model: adds into grad_score_maps.
void psroi_pool_avg_backward_accumulate(const PooledLocal& forward, const Tensor& upstream_grad,
                                        Tensor& grad_score_maps);

/// Accumulating variant of roi_pool_max_backward.
void roi_pool_max_backward_accumulate(const std::vector<std::int64_t>& argmax,
                                      const Tensor& upstream_grad, Tensor& grad_features);

/// Per-class mean over all k*k bins, empty bins included as zeros.
std::vector<double> vote_average(const PooledLocal& pooled);

/// Gradient of vote_average: each bin of class c receives upstream[c] / k^2.
Tensor vote_average_backward(const Shape& pooled_shape, const std::vector<double>& upstream);

}  // namespace couplenet
