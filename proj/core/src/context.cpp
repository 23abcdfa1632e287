#include "couplenet/context.hpp"

#include <algorithm>
#include <stdexcept>

namespace couplenet {

RoI expand_roi(const RoI& roi, double factor, double image_w, double image_h) {
  if (!(factor >= 1.0)) throw std::invalid_argument("expand_roi: factor must be >= 1");
  if (!(roi.x2 >= roi.x1) || !(roi.y2 >= roi.y1)) {
    throw std::invalid_argument("expand_roi: RoI corners are inverted");
  }
  const double cx = 0.5 * (roi.x1 + roi.x2);
  const double cy = 0.5 * (roi.y1 + roi.y2);
  const double hw = 0.5 * factor * roi.width();
  const double hh = 0.5 * factor * roi.height();
  RoI out = roi;
  out.x1 = std::clamp(cx - hw, 0.0, image_w);
  out.y1 = std::clamp(cy - hh, 0.0, image_h);
  out.x2 = std::clamp(cx + hw, 0.0, image_w);
  out.y2 = std::clamp(cy + hh, 0.0, image_h);
  return out;
}

ContextPair make_context_pair(const RoI& roi, double factor, double image_w, double image_h) {
  return {roi, expand_roi(roi, factor, image_w, image_h)};
}

ContextPooled pool_with_context(const Tensor& features, const ContextPair& pair,
                                std::size_t out_k, double spatial_scale) {
  if (pair.original.batch_index != pair.expanded.batch_index) {
    throw std::invalid_argument("pool_with_context: regions reference different batch elements");
  }
  RoIMaxPooled a = roi_pool_max(features, pair.original, out_k, out_k, spatial_scale);
  RoIMaxPooled b = roi_pool_max(features, pair.expanded, out_k, out_k, spatial_scale);
  const std::size_t c = features.shape().c;
  const std::size_t half = c * out_k * out_k;
  ContextPooled r;
  r.pooled = Tensor(Shape{1, 2 * c, out_k, out_k});
  std::copy_n(a.pooled.data().begin(), half, r.pooled.data().begin());
  std::copy_n(b.pooled.data().begin(), half, r.pooled.data().begin() + static_cast<std::ptrdiff_t>(half));
  r.argmax_original = std::move(a.argmax);
  r.argmax_context = std::move(b.argmax);
  return r;
}

void pool_with_context_backward_accumulate(const ContextPooled& forward,
                                           const Tensor& upstream_grad, Tensor& grad_features) {
  const Shape& ps = forward.pooled.shape();
  if (upstream_grad.shape() != ps) {
    throw std::invalid_argument("pool_with_context_backward: upstream " +
                                upstream_grad.shape().str() + " != pooled " + ps.str());
  }
  const Shape half_shape{1, ps.c / 2, ps.h, ps.w};
  const std::size_t half = half_shape.numel();
  auto g = upstream_grad.data();
  Tensor first(half_shape, std::vector<double>(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(half)));
  Tensor second(half_shape, std::vector<double>(g.begin() + static_cast<std::ptrdiff_t>(half), g.end()));
  roi_pool_max_backward_accumulate(forward.argmax_original, first, grad_features);
  roi_pool_max_backward_accumulate(forward.argmax_context, second, grad_features);
}

}  // namespace couplenet
