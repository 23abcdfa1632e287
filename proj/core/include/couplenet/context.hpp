#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "couplenet/roi_layers.hpp"
#include "couplenet/tensor.hpp"

namespace couplenet {

/// A proposal and its context region (same batch element).
struct ContextPair {
  RoI original;
  RoI expanded;
};

/// Scales width and height by `factor` about the box center, then clips to
/// [0, image_w] x [0, image_h]. factor must be >= 1.
RoI expand_roi(const RoI& roi, double factor, double image_w, double image_h);

ContextPair make_context_pair(const RoI& roi, double factor, double image_w, double image_h);

struct ContextPooled {
  Tensor pooled;  ///< (1, 2C, k, k): original region first, context second
  std::vector<std::int64_t> argmax_original;
  std::vector<std::int64_t> argmax_context;
};

ContextPooled pool_with_context(const Tensor& features, const ContextPair& pair,
                                std::size_t out_k, double spatial_scale);

/// Accumulates the gradient of pool_with_context into grad_features.
void pool_with_context_backward_accumulate(const ContextPooled& forward,
                                           const Tensor& upstream_grad, Tensor& grad_features);

}  // namespace couplenet
