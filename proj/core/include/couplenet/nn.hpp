#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "couplenet/tensor.hpp"

namespace couplenet {

/// Parameters of a 2-D cross-correlation layer.
/// weight has shape (out_channels, in_channels, kh, kw).
struct ConvParams {
  Tensor weight;
  std::vector<double> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  [[nodiscard]] std::size_t out_channels() const { return weight.shape().n; }
  [[nodiscard]] std::size_t in_channels() const { return weight.shape().c; }
  [[nodiscard]] std::size_t kernel_h() const { return weight.shape().h; }
  [[nodiscard]] std::size_t kernel_w() const { return weight.shape().w; }

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

/// Zero-initialized parameters for a conv layer of the given geometry.
ConvParams make_conv(std::size_t out_channels, std::size_t in_channels, std::size_t kernel,
                     std::size_t stride = 1, std::size_t padding = 0);

/// Output shape of conv2d(input, params); throws on incompatible geometry.
Shape conv2d_output_shape(const Shape& input, const ConvParams& params);

/// Cross-correlation with zero padding: no kernel flip.
Tensor conv2d(const Tensor& input, const ConvParams& params);

struct ConvGrads {
  Tensor grad_input;
  Tensor grad_weight;
  std::vector<double> grad_bias;
};

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& params,
                          const Tensor& upstream_grad);

/// Same as conv2d_backward but skips the input gradient (first layer).
ConvGrads conv2d_backward_params_only(const Tensor& input, const ConvParams& params,
                                      const Tensor& upstream_grad);

Tensor relu(const Tensor& input);

/// Passes the cotangent where input > 0; the subgradient at exactly 0 is 0.
Tensor relu_backward(const Tensor& input, const Tensor& upstream_grad);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Stable softmax over a score vector.
std::vector<double> softmax(std::span<const double> logits);

/// -log softmax(logits)[label], gradient softmax - onehot(label).
LossGrad softmax_cross_entropy(std::span<const double> logits, std::size_t label);

/// Summed smooth-L1 (beta = 1) of pred - target.
LossGrad smooth_l1(std::span<const double> pred, std::span<const double> target);

}  // namespace couplenet
