#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "couplenet/boxes.hpp"
#include "couplenet/coupling.hpp"
#include "couplenet/nn.hpp"
#include "couplenet/roi_layers.hpp"
#include "couplenet/tensor.hpp"

namespace couplenet {

/// Architecture hyper-parameters of the toy detector.
struct ModelConfig {
  std::size_t k = 3;               ///< part grid resolution
  std::size_t num_classes = 4;     ///< foreground classes C
  std::size_t backbone_c1 = 16;
  std::size_t backbone_c2 = 32;
  std::size_t backbone_c3 = 32;
  std::size_t reduce_channels = 64;  ///< global branch 1x1 reduction D
  std::size_t hidden_channels = 64;  ///< output of the global k x k conv
  bool use_context = false;
  double context_factor = 2.0;
  CouplingConfig coupling;

  [[nodiscard]] std::size_t cls_dim() const { return num_classes + 1; }
  [[nodiscard]] std::size_t feature_channels() const { return backbone_c3; }
  /// Three-layer backbone with two stride-2 convolutions.
  [[nodiscard]] static constexpr double spatial_scale() { return 0.25; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct BackboneParams {
  ConvParams conv1;  ///< 3x3 stride 2
  ConvParams conv2;  ///< 3x3 stride 2
  ConvParams conv3;  ///< 3x3 stride 1

  friend bool operator==(const BackboneParams&, const BackboneParams&) = default;
};

struct HeadParams {
  ConvParams local_score_conv;    ///< 1x1 -> k^2 (C+1)
  ConvParams local_bbox_conv;     ///< 1x1 -> 4 k^2
  ConvParams global_reduce_conv;  ///< 1x1 -> D
  ConvParams global_kxk_conv;     ///< k x k valid, D (or 2D with context) -> hidden
  ConvParams global_cls_conv;     ///< 1x1 -> C+1
  ConvParams global_bbox_conv;    ///< 1x1 -> 4
  ScaleParams scale_params;

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

struct ModelParams {
  BackboneParams backbone;
  HeadParams head;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// All-zero parameters with the shapes implied by the config.
ModelParams make_model_params(const ModelConfig& config);

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, identity scales.
ModelParams init_model_params(const ModelConfig& config, std::uint64_t seed);

ModelParams zeros_like(const ModelParams& params);

/// Visits every learnable array in a fixed order with a stable dotted name.
/// fn(const std::string& name, std::span<T> values, std::vector<std::size_t> dims)
template <class Params, class Fn>
void for_each_param(Params& p, Fn&& fn) {
  auto conv = [&](const std::string& name, auto& c) {
    const Shape s = c.weight.shape();
    fn(name + ".weight", c.weight.data(), std::vector<std::size_t>{s.n, s.c, s.h, s.w});
    fn(name + ".bias", std::span(c.bias), std::vector<std::size_t>{c.bias.size()});
  };
  auto scale = [&](const std::string& name, auto& b) {
    fn(name + ".scale", std::span(b.scale), std::vector<std::size_t>{b.scale.size()});
    fn(name + ".bias", std::span(b.bias), std::vector<std::size_t>{b.bias.size()});
  };
  conv("backbone.conv1", p.backbone.conv1);
  conv("backbone.conv2", p.backbone.conv2);
  conv("backbone.conv3", p.backbone.conv3);
  conv("local.score", p.head.local_score_conv);
  conv("local.bbox", p.head.local_bbox_conv);
  conv("global.reduce", p.head.global_reduce_conv);
  conv("global.kxk", p.head.global_kxk_conv);
  conv("global.cls", p.head.global_cls_conv);
  conv("global.bbox", p.head.global_bbox_conv);
  scale("norm.local_cls", p.head.scale_params.local_cls);
  scale("norm.global_cls", p.head.scale_params.global_cls);
  scale("norm.local_bbox", p.head.scale_params.local_bbox);
  scale("norm.global_bbox", p.head.scale_params.global_bbox);
}

/// Raw (pre-normalization) output of one branch for one RoI.
struct BranchOutput {
  std::vector<double> cls;   ///< C+1
  std::vector<double> bbox;  ///< 4, class-agnostic
};

struct RoIOutput {
  std::vector<double> cls_scores;  ///< C+1 logits after coupling
  BoxDeltas bbox_deltas{};
  BranchOutput local;   ///< empty when the branch is disabled
  BranchOutput global;  ///< empty when the branch is disabled
};

/// Backbone: image (N, 1, H, W) -> features (N, c3, ~H/4, ~W/4).
Tensor backbone_forward(const Tensor& image, const BackboneParams& params);

/// Local FCN branch on backbone features: 1x1 score conv, PSRoI pooling, voting.
BranchOutput local_branch(const Tensor& features, const RoI& roi, const HeadParams& params,
                          std::size_t k, std::size_t num_classes);

/// Global FCN branch: 1x1 reduce, RoI pooling (optionally with the context
/// region concatenated), k x k conv, ReLU, then 1x1 classifier / regressor.
BranchOutput global_branch(const Tensor& features, const RoI& roi, const HeadParams& params,
                           std::size_t k, bool use_context, double context_factor,
                           double image_w, double image_h);

/// Runs the enabled branches for every RoI, normalizes each branch output and
/// couples them. A single enabled branch bypasses coupling.
std::vector<RoIOutput> couplenet_forward(const Tensor& features, std::span<const RoI> rois,
                                         const HeadParams& params, const ModelConfig& config,
                                         double image_w, double image_h);

/// Cached intermediates of a full image forward pass.
struct ForwardPass {
  struct Backbone {
    Tensor input, pre1, act1, pre2, act2, pre3, features;
  } backbone;
  Tensor local_scores;  ///< (1, k^2 (C+1), h, w)
  Tensor local_bbox;    ///< (1, 4 k^2, h, w)
  Tensor reduced;       ///< (1, D, h, w)

  struct PerRoI {
    PooledLocal cls_pool;
    PooledLocal bbox_pool;
    Tensor pooled;  ///< global RoI-pooled input of the k x k conv
    std::vector<std::int64_t> argmax_original;
    std::vector<std::int64_t> argmax_context;
    Tensor hidden_pre;
    Tensor hidden;
    std::vector<double> norm_local_cls, norm_local_bbox, norm_global_cls, norm_global_bbox;
  };
  std::vector<PerRoI> rois;
  std::vector<RoIOutput> outputs;
  double image_w = 0.0;
  double image_h = 0.0;
};

/// Image (1, 1, H, W) through backbone and head, keeping what backward needs.
ForwardPass model_forward(const ModelParams& params, const ModelConfig& config,
                          const Tensor& image, std::span<const RoI> rois);

/// Cotangent of the loss with respect to one RoI's coupled outputs.
struct OutputGrad {
  std::size_t roi = 0;
  std::vector<double> cls;
  BoxDeltas bbox{};
};

/// Accumulates parameter gradients for the listed RoIs into `grads`.
void model_backward(const ModelParams& params, const ModelConfig& config,
                    const ForwardPass& pass, std::span<const OutputGrad> output_grads,
                    ModelParams& grads);

}  // namespace couplenet
