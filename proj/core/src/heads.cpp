#include "couplenet/heads.hpp"

#include <cmath>
#include <stdexcept>
#include <tuple>

#include "couplenet/context.hpp"
#include "couplenet/rng.hpp"

namespace couplenet {

void ModelConfig::validate() const {
  if (k == 0) throw std::invalid_argument("model: k must be at least 1");
  if (num_classes == 0) throw std::invalid_argument("model: need at least one class");
  if (backbone_c1 == 0 || backbone_c2 == 0 || backbone_c3 == 0 || reduce_channels == 0 ||
      hidden_channels == 0) {
    throw std::invalid_argument("model: channel counts must be positive");
  }
  if (!(context_factor >= 1.0)) throw std::invalid_argument("model: context factor must be >= 1");
  coupling.validate();
}

ModelParams make_model_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t kk = cfg.k * cfg.k;
  const std::size_t pooled_c = cfg.use_context ? 2 * cfg.reduce_channels : cfg.reduce_channels;
  ModelParams p;
  p.backbone.conv1 = make_conv(cfg.backbone_c1, 1, 3, 2, 1);
  p.backbone.conv2 = make_conv(cfg.backbone_c2, cfg.backbone_c1, 3, 2, 1);
  p.backbone.conv3 = make_conv(cfg.backbone_c3, cfg.backbone_c2, 3, 1, 1);
  p.head.local_score_conv = make_conv(kk * cfg.cls_dim(), cfg.feature_channels(), 1);
  p.head.local_bbox_conv = make_conv(4 * kk, cfg.feature_channels(), 1);
  p.head.global_reduce_conv = make_conv(cfg.reduce_channels, cfg.feature_channels(), 1);
  p.head.global_kxk_conv = make_conv(cfg.hidden_channels, pooled_c, cfg.k);
  p.head.global_cls_conv = make_conv(cfg.cls_dim(), cfg.hidden_channels, 1);
  p.head.global_bbox_conv = make_conv(4, cfg.hidden_channels, 1);
  p.head.scale_params = ScaleParams::identity(cfg.cls_dim());
  return p;
}

ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = make_model_params(cfg);
  Rng root(seed);
  std::uint64_t stream = 0;
  for_each_param(p, [&](const std::string& name, std::span<double> values,
                        const std::vector<std::size_t>& dims) {
    ++stream;
    if (dims.size() != 4 || !name.ends_with(".weight")) return;
    Rng rng = root.split(stream);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[1] * dims[2] * dims[3]));
    for (double& v : values) v = rng.uniform(-bound, bound);
  });
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for_each_param(z, [](const std::string&, std::span<double> v, const std::vector<std::size_t>&) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  return z;
}

Tensor backbone_forward(const Tensor& image, const BackboneParams& p) {
  Tensor x = relu(conv2d(image, p.conv1));
  x = relu(conv2d(x, p.conv2));
  return relu(conv2d(x, p.conv3));
}

namespace {

using PerRoI = ForwardPass::PerRoI;

std::vector<double> conv_output_vector(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

void run_local(const Tensor& scores, const Tensor& bbox_maps, const RoI& roi, std::size_t k,
               std::size_t cls_dim, PerRoI& cache, BranchOutput& out) {
  const double scale = ModelConfig::spatial_scale();
  cache.cls_pool = psroi_pool_avg(scores, roi, k, cls_dim, scale);
  cache.bbox_pool = psroi_pool_avg(bbox_maps, roi, k, 4, scale);
  out.cls = vote_average(cache.cls_pool);
  out.bbox = vote_average(cache.bbox_pool);
}

void run_global(const Tensor& reduced, const RoI& roi, const HeadParams& params, std::size_t k,
                bool use_context, double factor, double image_w, double image_h, PerRoI& cache,
                BranchOutput& out) {
  const double scale = ModelConfig::spatial_scale();
  if (use_context) {
    ContextPooled cp =
        pool_with_context(reduced, make_context_pair(roi, factor, image_w, image_h), k, scale);
    cache.pooled = std::move(cp.pooled);
    cache.argmax_original = std::move(cp.argmax_original);
    cache.argmax_context = std::move(cp.argmax_context);
  } else {
    RoIMaxPooled mp = roi_pool_max(reduced, roi, k, k, scale);
    cache.pooled = std::move(mp.pooled);
    cache.argmax_original = std::move(mp.argmax);
    cache.argmax_context.clear();
  }
  cache.hidden_pre = conv2d(cache.pooled, params.global_kxk_conv);
  cache.hidden = relu(cache.hidden_pre);
  out.cls = conv_output_vector(conv2d(cache.hidden, params.global_cls_conv));
  out.bbox = conv_output_vector(conv2d(cache.hidden, params.global_bbox_conv));
}

void couple_outputs(const ModelConfig& cfg, const ScaleParams& sp, PerRoI& cache,
                    RoIOutput& out) {
  const Normalization mode = cfg.coupling.normalization;
  std::vector<double> bbox;
  if (cfg.coupling.enable_local) {
    cache.norm_local_cls = normalize_branch(out.local.cls, mode, &sp.local_cls);
    cache.norm_local_bbox = normalize_branch(out.local.bbox, mode, &sp.local_bbox);
  }
  if (cfg.coupling.enable_global) {
    cache.norm_global_cls = normalize_branch(out.global.cls, mode, &sp.global_cls);
    cache.norm_global_bbox = normalize_branch(out.global.bbox, mode, &sp.global_bbox);
  }
  if (cfg.coupling.coupled()) {
    out.cls_scores = couple(cache.norm_local_cls, cache.norm_global_cls, cfg.coupling.strategy);
    bbox = couple(cache.norm_local_bbox, cache.norm_global_bbox, cfg.coupling.strategy);
  } else if (cfg.coupling.enable_local) {
    out.cls_scores = cache.norm_local_cls;
    bbox = cache.norm_local_bbox;
  } else {
    out.cls_scores = cache.norm_global_cls;
    bbox = cache.norm_global_bbox;
  }
  for (std::size_t i = 0; i < 4; ++i) out.bbox_deltas[i] = bbox[i];
}

struct HeadMaps {
  Tensor local_scores;
  Tensor local_bbox;
  Tensor reduced;
};

HeadMaps compute_head_maps(const Tensor& features, const HeadParams& params,
                           const CouplingConfig& coupling) {
  HeadMaps m;
  if (coupling.enable_local) {
    m.local_scores = conv2d(features, params.local_score_conv);
    m.local_bbox = conv2d(features, params.local_bbox_conv);
  }
  if (coupling.enable_global) m.reduced = conv2d(features, params.global_reduce_conv);
  return m;
}

void run_rois(const HeadMaps& maps, std::span<const RoI> rois, const HeadParams& params,
              const ModelConfig& cfg, double image_w, double image_h,
              std::vector<PerRoI>& caches, std::vector<RoIOutput>& outputs) {
  caches.assign(rois.size(), PerRoI{});
  outputs.assign(rois.size(), RoIOutput{});
  for (std::size_t r = 0; r < rois.size(); ++r) {
    if (cfg.coupling.enable_local) {
      run_local(maps.local_scores, maps.local_bbox, rois[r], cfg.k, cfg.cls_dim(), caches[r],
                outputs[r].local);
    }
    if (cfg.coupling.enable_global) {
      run_global(maps.reduced, rois[r], params, cfg.k, cfg.use_context, cfg.context_factor,
                 image_w, image_h, caches[r], outputs[r].global);
    }
    couple_outputs(cfg, params.scale_params, caches[r], outputs[r]);
  }
}

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void accumulate(ConvParams& g, const ConvGrads& cg) {
  add_into(g.weight.data(), cg.grad_weight.data());
  add_into(g.bias, cg.grad_bias);
}

void accumulate(BranchScale& g, const NormalizeGrads& ng) {
  if (ng.grad_scale.empty()) return;
  add_into(g.scale, ng.grad_scale);
  add_into(g.bias, ng.grad_bias);
}

Tensor column(std::span<const double> v) {
  return Tensor(Shape{1, v.size(), 1, 1}, std::vector<double>(v.begin(), v.end()));
}

void add_tensor(Tensor& dst, const Tensor& src) { add_into(dst.data(), src.data()); }

}  // namespace

BranchOutput local_branch(const Tensor& features, const RoI& roi, const HeadParams& params,
                          std::size_t k, std::size_t num_classes) {
  const Tensor scores = conv2d(features, params.local_score_conv);
  const Tensor bbox = conv2d(features, params.local_bbox_conv);
  PerRoI cache;
  BranchOutput out;
  run_local(scores, bbox, roi, k, num_classes + 1, cache, out);
  return out;
}

BranchOutput global_branch(const Tensor& features, const RoI& roi, const HeadParams& params,
                           std::size_t k, bool use_context, double context_factor,
                           double image_w, double image_h) {
  const Tensor reduced = conv2d(features, params.global_reduce_conv);
  PerRoI cache;
  BranchOutput out;
  run_global(reduced, roi, params, k, use_context, context_factor, image_w, image_h, cache, out);
  return out;
}

std::vector<RoIOutput> couplenet_forward(const Tensor& features, std::span<const RoI> rois,
                                         const HeadParams& params, const ModelConfig& config,
                                         double image_w, double image_h) {
  config.validate();
  const HeadMaps maps = compute_head_maps(features, params, config.coupling);
  std::vector<PerRoI> caches;
  std::vector<RoIOutput> outputs;
  run_rois(maps, rois, params, config, image_w, image_h, caches, outputs);
  return outputs;
}

ForwardPass model_forward(const ModelParams& params, const ModelConfig& config,
                          const Tensor& image, std::span<const RoI> rois) {
  config.validate();
  if (image.shape().n != 1 || image.shape().c != 1) {
    throw std::invalid_argument("model_forward: expected a (1, 1, H, W) image, got " +
                                image.shape().str());
  }
  ForwardPass fp;
  fp.image_w = static_cast<double>(image.shape().w);
  fp.image_h = static_cast<double>(image.shape().h);
  auto& b = fp.backbone;
  b.input = image;
  b.pre1 = conv2d(b.input, params.backbone.conv1);
  b.act1 = relu(b.pre1);
  b.pre2 = conv2d(b.act1, params.backbone.conv2);
  b.act2 = relu(b.pre2);
  b.pre3 = conv2d(b.act2, params.backbone.conv3);
  b.features = relu(b.pre3);

  HeadMaps maps = compute_head_maps(b.features, params.head, config.coupling);
  run_rois(maps, rois, params.head, config, fp.image_w, fp.image_h, fp.rois, fp.outputs);
  fp.local_scores = std::move(maps.local_scores);
  fp.local_bbox = std::move(maps.local_bbox);
  fp.reduced = std::move(maps.reduced);
  return fp;
}

void model_backward(const ModelParams& params, const ModelConfig& cfg, const ForwardPass& fp,
                    std::span<const OutputGrad> output_grads, ModelParams& grads) {
  const HeadParams& hp = params.head;
  HeadParams& hg = grads.head;
  const Normalization mode = cfg.coupling.normalization;
  const bool use_local = cfg.coupling.enable_local;
  const bool use_global = cfg.coupling.enable_global;

  Tensor g_scores;
  Tensor g_bbox_maps;
  Tensor g_reduced;
  if (use_local) {
    g_scores = Tensor(fp.local_scores.shape());
    g_bbox_maps = Tensor(fp.local_bbox.shape());
  }
  if (use_global) g_reduced = Tensor(fp.reduced.shape());

  for (const OutputGrad& og : output_grads) {
    if (og.roi >= fp.rois.size()) throw std::invalid_argument("model_backward: RoI index out of range");
    if (og.cls.size() != cfg.cls_dim()) throw std::invalid_argument("model_backward: cls grad length");
    const PerRoI& c = fp.rois[og.roi];
    const RoIOutput& out = fp.outputs[og.roi];
    const std::span<const double> gb(og.bbox);

    std::vector<double> gl_cls, gg_cls, gl_bbox, gg_bbox;
    if (cfg.coupling.coupled()) {
      std::tie(gl_cls, gg_cls) =
          couple_backward(c.norm_local_cls, c.norm_global_cls, cfg.coupling.strategy, og.cls);
      std::tie(gl_bbox, gg_bbox) =
          couple_backward(c.norm_local_bbox, c.norm_global_bbox, cfg.coupling.strategy, gb);
    } else if (use_local) {
      gl_cls = og.cls;
      gl_bbox.assign(gb.begin(), gb.end());
    } else {
      gg_cls = og.cls;
      gg_bbox.assign(gb.begin(), gb.end());
    }

    if (use_local) {
      const auto ncls = normalize_branch_backward(out.local.cls, mode, &hp.scale_params.local_cls, gl_cls);
      const auto nbox = normalize_branch_backward(out.local.bbox, mode, &hp.scale_params.local_bbox, gl_bbox);
      accumulate(hg.scale_params.local_cls, ncls);
      accumulate(hg.scale_params.local_bbox, nbox);
      psroi_pool_avg_backward_accumulate(
          c.cls_pool, vote_average_backward(c.cls_pool.values.shape(), ncls.grad_input), g_scores);
      psroi_pool_avg_backward_accumulate(
          c.bbox_pool, vote_average_backward(c.bbox_pool.values.shape(), nbox.grad_input),
          g_bbox_maps);
    }
    if (use_global) {
      const auto ncls = normalize_branch_backward(out.global.cls, mode, &hp.scale_params.global_cls, gg_cls);
      const auto nbox = normalize_branch_backward(out.global.bbox, mode, &hp.scale_params.global_bbox, gg_bbox);
      accumulate(hg.scale_params.global_cls, ncls);
      accumulate(hg.scale_params.global_bbox, nbox);
      const ConvGrads cls_g = conv2d_backward(c.hidden, hp.global_cls_conv, column(ncls.grad_input));
      const ConvGrads box_g = conv2d_backward(c.hidden, hp.global_bbox_conv, column(nbox.grad_input));
      accumulate(hg.global_cls_conv, cls_g);
      accumulate(hg.global_bbox_conv, box_g);
      Tensor g_hidden = cls_g.grad_input;
      add_tensor(g_hidden, box_g.grad_input);
      const Tensor g_pre = relu_backward(c.hidden_pre, g_hidden);
      const ConvGrads kxk_g = conv2d_backward(c.pooled, hp.global_kxk_conv, g_pre);
      accumulate(hg.global_kxk_conv, kxk_g);
      if (c.argmax_context.empty()) {
        roi_pool_max_backward_accumulate(c.argmax_original, kxk_g.grad_input, g_reduced);
      } else {
        ContextPooled view;
        view.pooled = c.pooled;
        view.argmax_original = c.argmax_original;
        view.argmax_context = c.argmax_context;
        pool_with_context_backward_accumulate(view, kxk_g.grad_input, g_reduced);
      }
    }
  }

  const auto& b = fp.backbone;
  Tensor g_features(b.features.shape());
  if (use_local) {
    const ConvGrads s = conv2d_backward(b.features, hp.local_score_conv, g_scores);
    const ConvGrads bb = conv2d_backward(b.features, hp.local_bbox_conv, g_bbox_maps);
    accumulate(hg.local_score_conv, s);
    accumulate(hg.local_bbox_conv, bb);
    add_tensor(g_features, s.grad_input);
    add_tensor(g_features, bb.grad_input);
  }
  if (use_global) {
    const ConvGrads r = conv2d_backward(b.features, hp.global_reduce_conv, g_reduced);
    accumulate(hg.global_reduce_conv, r);
    add_tensor(g_features, r.grad_input);
  }

  const ConvGrads c3 = conv2d_backward(b.act2, params.backbone.conv3, relu_backward(b.pre3, g_features));
  accumulate(grads.backbone.conv3, c3);
  const ConvGrads c2 = conv2d_backward(b.act1, params.backbone.conv2, relu_backward(b.pre2, c3.grad_input));
  accumulate(grads.backbone.conv2, c2);
  const ConvGrads c1 = conv2d_backward_params_only(b.input, params.backbone.conv1,
                                                   relu_backward(b.pre1, c2.grad_input));
  accumulate(grads.backbone.conv1, c1);
}

}  // namespace couplenet
