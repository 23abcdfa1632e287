#include "couplenet/roi_layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace couplenet {
namespace {

int clip(int v, int lo, int hi) { return std::max(lo, std::min(v, hi)); }

void check_roi(const RoI& roi, const Shape& map, const char* op) {
  if (map.h == 0 || map.w == 0 || map.c == 0 || map.n == 0) {
    throw std::invalid_argument(std::string(op) + ": degenerate feature map " + map.str());
  }
  if (roi.batch_index >= map.n) {
    throw std::invalid_argument(std::string(op) + ": batch index " +
                                std::to_string(roi.batch_index) + " out of range for " +
                                map.str());
  }
  if (!(roi.x2 >= roi.x1) || !(roi.y2 >= roi.y1)) {
    throw std::invalid_argument(std::string(op) + ": RoI corners are inverted");
  }
}

}  // namespace

QuantizedRoI quantize_roi(const RoI& roi, double spatial_scale) {
  if (!(spatial_scale > 0.0)) throw std::invalid_argument("spatial_scale must be positive");
  QuantizedRoI q;
  q.x1 = static_cast<int>(std::floor(roi.x1 * spatial_scale));
  q.y1 = static_cast<int>(std::floor(roi.y1 * spatial_scale));
  q.x2 = static_cast<int>(std::ceil(roi.x2 * spatial_scale));
  q.y2 = static_cast<int>(std::ceil(roi.y2 * spatial_scale));
  q.x2 = std::max(q.x2, q.x1 + 1);
  q.y2 = std::max(q.y2, q.y1 + 1);
  return q;
}

BinGrid compute_bins(const RoI& roi, std::size_t out_h, std::size_t out_w, double spatial_scale,
                     std::size_t map_h, std::size_t map_w) {
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("compute_bins: empty output grid");
  const QuantizedRoI q = quantize_roi(roi, spatial_scale);
  const int eh = q.y2 - q.y1;
  const int ew = q.x2 - q.x1;
  const int kh = static_cast<int>(out_h);
  const int kw = static_cast<int>(out_w);
  const int mh = static_cast<int>(map_h);
  const int mw = static_cast<int>(map_w);

  BinGrid grid;
  grid.out_h = out_h;
  grid.out_w = out_w;
  grid.bins.resize(out_h * out_w);
  for (int i = 0; i < kh; ++i) {
    const int hs = clip(q.y1 + (i * eh) / kh, 0, mh);
    const int he = clip(q.y1 + ((i + 1) * eh + kh - 1) / kh, 0, mh);
    for (int j = 0; j < kw; ++j) {
      const int ws = clip(q.x1 + (j * ew) / kw, 0, mw);
      const int we = clip(q.x1 + ((j + 1) * ew + kw - 1) / kw, 0, mw);
      grid.bins[static_cast<std::size_t>(i * kw + j)] = BinRange{hs, he, ws, we};
    }
  }
  return grid;
}

RoIMaxPooled roi_pool_max(const Tensor& features, const RoI& roi, std::size_t out_h,
                          std::size_t out_w, double spatial_scale) {
  const Shape& fs = features.shape();
  check_roi(roi, fs, "roi_pool_max");
  RoIMaxPooled r;
  r.grid = compute_bins(roi, out_h, out_w, spatial_scale, fs.h, fs.w);
  r.pooled = Tensor(Shape{1, fs.c, out_h, out_w});
  r.argmax.assign(fs.c * out_h * out_w, kEmptyBin);

  const std::size_t nbins = out_h * out_w;
  for (std::size_t c = 0; c < fs.c; ++c) {
    const double* plane = features.plane(roi.batch_index, c);
    const auto plane_offset = static_cast<std::int64_t>(features.offset(roi.batch_index, c, 0, 0));
    for (std::size_t b = 0; b < nbins; ++b) {
      const BinRange& bin = r.grid.bins[b];
      if (bin.empty()) continue;
      double best = 0.0;
      std::int64_t best_idx = kEmptyBin;
      for (int y = bin.hstart; y < bin.hend; ++y) {
        for (int x = bin.wstart; x < bin.wend; ++x) {
          const std::int64_t idx = static_cast<std::int64_t>(y) * static_cast<std::int64_t>(fs.w) + x;
          const double v = plane[idx];
          if (best_idx == kEmptyBin || v > best) {
            best = v;
            best_idx = idx;
          }
        }
      }
      r.pooled.data()[c * nbins + b] = best;
      r.argmax[c * nbins + b] = plane_offset + best_idx;
    }
  }
  return r;
}

void roi_pool_max_backward_accumulate(const std::vector<std::int64_t>& argmax,
                                      const Tensor& upstream_grad, Tensor& grad_features) {
  if (argmax.size() != upstream_grad.numel()) {
    throw std::invalid_argument("roi_pool_max_backward: argmax has " +
                                std::to_string(argmax.size()) + " entries but upstream is " +
                                upstream_grad.shape().str());
  }
  auto g = upstream_grad.data();
  auto dst = grad_features.data();
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    const std::int64_t idx = argmax[i];
    if (idx == kEmptyBin) continue;
    if (idx < 0 || static_cast<std::size_t>(idx) >= dst.size()) {
      throw std::invalid_argument("roi_pool_max_backward: argmax index outside feature map " +
                                  grad_features.shape().str());
    }
    dst[static_cast<std::size_t>(idx)] += g[i];
  }
}

Tensor roi_pool_max_backward(const std::vector<std::int64_t>& argmax, const Tensor& upstream_grad,
                             const Shape& feature_shape) {
  Tensor grad(feature_shape);
  roi_pool_max_backward_accumulate(argmax, upstream_grad, grad);
  return grad;
}

PooledLocal psroi_pool_avg(const Tensor& score_maps, const RoI& roi, std::size_t k,
                           std::size_t num_classes_plus_bg, double spatial_scale) {
  if (k == 0) throw std::invalid_argument("psroi_pool_avg: k must be at least 1");
  if (num_classes_plus_bg == 0) throw std::invalid_argument("psroi_pool_avg: no classes");
  const Shape& fs = score_maps.shape();
  if (fs.c != k * k * num_classes_plus_bg) {
    throw std::invalid_argument("psroi_pool_avg: " + std::to_string(fs.c) +
                                " channels cannot be laid out as k^2*(C+1) = " +
                                std::to_string(k * k) + "*" +
                                std::to_string(num_classes_plus_bg));
  }
  check_roi(roi, fs, "psroi_pool_avg");

  PooledLocal r;
  r.batch_index = roi.batch_index;
  r.grid = compute_bins(roi, k, k, spatial_scale, fs.h, fs.w);
  r.values = Tensor(Shape{1, num_classes_plus_bg, k, k});
  r.bin_source_counts.resize(k * k);
  for (std::size_t b = 0; b < k * k; ++b) r.bin_source_counts[b] = r.grid.bins[b].count();

  const std::size_t nbins = k * k;
  for (std::size_t c = 0; c < num_classes_plus_bg; ++c) {
    for (std::size_t b = 0; b < nbins; ++b) {
      const BinRange& bin = r.grid.bins[b];
      if (bin.empty()) continue;
      const double* plane = score_maps.plane(roi.batch_index, c * nbins + b);
      double acc = 0.0;
      for (int y = bin.hstart; y < bin.hend; ++y) {
        const double* row = plane + static_cast<std::size_t>(y) * fs.w;
        for (int x = bin.wstart; x < bin.wend; ++x) acc += row[x];
      }
      r.values.data()[c * nbins + b] = acc / static_cast<double>(bin.count());
    }
  }
  return r;
}

void psroi_pool_avg_backward_accumulate(const PooledLocal& fwd, const Tensor& upstream_grad,
                                        Tensor& grad) {
  const Shape& vs = fwd.values.shape();
  if (upstream_grad.shape() != vs) {
    throw std::invalid_argument("psroi_pool_avg_backward: upstream " +
                                upstream_grad.shape().str() + " != pooled " + vs.str());
  }
  const std::size_t nbins = vs.h * vs.w;
  const Shape& gs = grad.shape();
  if (gs.c != vs.c * nbins || fwd.batch_index >= gs.n) {
    throw std::invalid_argument("psroi_pool_avg_backward: score map shape " + gs.str() +
                                " does not match pooled " + vs.str());
  }
  for (std::size_t c = 0; c < vs.c; ++c) {
    for (std::size_t b = 0; b < nbins; ++b) {
      const BinRange& bin = fwd.grid.bins[b];
      if (bin.empty()) continue;
      const double share = upstream_grad.data()[c * nbins + b] / static_cast<double>(bin.count());
      double* plane = grad.plane(fwd.batch_index, c * nbins + b);
      for (int y = bin.hstart; y < bin.hend; ++y) {
        double* row = plane + static_cast<std::size_t>(y) * gs.w;
        for (int x = bin.wstart; x < bin.wend; ++x) row[x] += share;
      }
    }
  }
}

Tensor psroi_pool_avg_backward(const PooledLocal& forward, const Tensor& upstream_grad,
                               const Shape& score_map_shape) {
  Tensor grad(score_map_shape);
  psroi_pool_avg_backward_accumulate(forward, upstream_grad, grad);
  return grad;
}

std::vector<double> vote_average(const PooledLocal& pooled) {
  const Shape& s = pooled.values.shape();
  const std::size_t nbins = s.h * s.w;
  std::vector<double> out(s.c, 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (std::size_t b = 0; b < nbins; ++b) acc += pooled.values.data()[c * nbins + b];
    out[c] = acc / static_cast<double>(nbins);
  }
  return out;
}

Tensor vote_average_backward(const Shape& pooled_shape, const std::vector<double>& upstream) {
  if (upstream.size() != pooled_shape.c) {
    throw std::invalid_argument("vote_average_backward: upstream length mismatch");
  }
  Tensor g(pooled_shape);
  const std::size_t nbins = pooled_shape.h * pooled_shape.w;
  for (std::size_t c = 0; c < pooled_shape.c; ++c) {
    const double share = upstream[c] / static_cast<double>(nbins);
    for (std::size_t b = 0; b < nbins; ++b) g.data()[c * nbins + b] = share;
  }
  return g;
}

}  // namespace couplenet
