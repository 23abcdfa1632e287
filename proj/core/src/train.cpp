#include "couplenet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <type_traits>
#include <utility>

#include <nlohmann/json.hpp>

#include "couplenet/nn.hpp"
#include "couplenet/rng.hpp"

namespace couplenet {

void TrainConfig::validate() const {
  if (lr_values.empty() || lr_steps.size() + 1 != lr_values.size()) {
    throw std::invalid_argument("train: need exactly one more lr value than lr steps");
  }
  for (double lr : lr_values) {
    if (!(lr > 0.0)) throw std::invalid_argument("train: learning rates must be positive");
  }
  if (!std::is_sorted(lr_steps.begin(), lr_steps.end())) {
    throw std::invalid_argument("train: lr steps must be ascending");
  }
  if (iterations < 0) throw std::invalid_argument("train: iterations must be >= 0");
  if (rois_per_image < 1) throw std::invalid_argument("train: rois_per_image (B) must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("train: momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (scales.empty()) throw std::invalid_argument("train: scale set must not be empty");
  for (double s : scales) {
    if (!(s > 0.0)) throw std::invalid_argument("train: scales must be positive");
  }
  for (double s : bbox_std) {
    if (!(s > 0.0)) throw std::invalid_argument("train: bbox_std entries must be positive");
  }
  if (val_interval < 0) throw std::invalid_argument("train: val_interval must be >= 0");
}

double TrainConfig::learning_rate(int iteration) const {
  std::size_t phase = 0;
  while (phase < lr_steps.size() && iteration >= lr_steps[phase]) ++phase;
  return lr_values[phase];
}

MultitaskLoss multitask_loss(std::span<const RoIOutput> outputs,
                             std::span<const RoITarget> targets, const LossWeights& weights) {
  if (outputs.size() != targets.size()) {
    throw std::invalid_argument("multitask_loss: " + std::to_string(outputs.size()) +
                                " outputs but " + std::to_string(targets.size()) + " targets");
  }
  MultitaskLoss r;
  r.per_roi.assign(outputs.size(), 0.0);
  for (const RoITarget& t : targets) {
    if (t.kind != TargetKind::ignored) ++r.num_cls;
    if (t.kind == TargetKind::foreground) ++r.num_fg;
  }
  if (r.num_cls == 0) return r;

  const double cls_norm = 1.0 / static_cast<double>(r.num_cls);
  const double box_norm = r.num_fg > 0 ? 1.0 / static_cast<double>(r.num_fg) : 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const RoITarget& t = targets[i];
    if (t.kind == TargetKind::ignored) continue;
    const LossGrad ce = softmax_cross_entropy(outputs[i].cls_scores, t.label);
    OutputGrad g;
    g.roi = i;
    g.cls.resize(ce.grad.size());
    for (std::size_t c = 0; c < ce.grad.size(); ++c) g.cls[c] = weights.cls * cls_norm * ce.grad[c];
    r.cls_loss += ce.loss;
    r.per_roi[i] = weights.cls * ce.loss;
    if (t.kind == TargetKind::foreground) {
      const LossGrad sl = smooth_l1(outputs[i].bbox_deltas, t.regression_target);
      for (std::size_t c = 0; c < 4; ++c) g.bbox[c] = weights.bbox * box_norm * sl.grad[c];
      r.bbox_loss += sl.loss;
      r.per_roi[i] += weights.bbox * sl.loss;
    }
    r.grads.push_back(std::move(g));
  }
  r.cls_loss *= cls_norm;
  r.bbox_loss *= box_norm;
  r.loss = weights.cls * r.cls_loss + weights.bbox * r.bbox_loss;
  return r;
}

std::vector<std::size_t> ohem_select(std::span<const double> losses, std::size_t b) {
  if (b < 1) throw std::invalid_argument("ohem_select: B must be >= 1");
  std::vector<std::size_t> idx(losses.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t keep = std::min(b, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                    [&](std::size_t a, std::size_t c) {
                      return losses[a] > losses[c] || (losses[a] == losses[c] && a < c);
                    });
  idx.resize(keep);
  return idx;
}

void sgd_step(std::span<double> params, std::span<const double> grads, double lr,
              double momentum, std::span<double> velocity) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw std::invalid_argument("sgd_step: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

namespace {

template <class Params>
auto collect_spans(Params& p) {
  using T = std::conditional_t<std::is_const_v<Params>, const double, double>;
  std::vector<std::pair<std::string, std::span<T>>> out;
  for_each_param(p, [&](const std::string& name, std::span<T> values,
                        const std::vector<std::size_t>&) { out.emplace_back(name, values); });
  return out;
}

void check_same_layout(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("parameter sets have different layouts");
}

}  // namespace

void sgd_step(ModelParams& params, const ModelParams& grads, double lr, double momentum,
              ModelParams& velocity) {
  auto p = collect_spans(params);
  auto g = collect_spans(grads);
  auto v = collect_spans(velocity);
  check_same_layout(p.size(), g.size());
  check_same_layout(p.size(), v.size());
  for (std::size_t i = 0; i < p.size(); ++i) sgd_step(p[i].second, g[i].second, lr, momentum, v[i].second);
}

std::string metric_line(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iteration;
  j["loss"] = r.loss;
  j["cls_loss"] = r.cls_loss;
  j["bbox_loss"] = r.bbox_loss;
  j["lr"] = r.lr;
  if (r.val_map) j["val_map"] = *r.val_map;
  return j.dump();
}

std::vector<Detection> detect(const ModelParams& params, const ModelConfig& model,
                              const Tensor& image, std::span<const RoI> rois,
                              const std::array<double, 4>& bbox_std, const DetectConfig& config,
                              std::size_t image_index) {
  const ForwardPass fp = model_forward(params, model, image, rois);
  std::vector<Detection> raw;
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const RoIOutput& out = fp.outputs[r];
    const std::vector<double> prob = softmax(out.cls_scores);
    BoxDeltas d{};
    for (std::size_t i = 0; i < 4; ++i) d[i] = out.bbox_deltas[i] * bbox_std[i];
    const Box box = decode_boxes(rois[r], d, fp.image_w, fp.image_h);
    if (!(box.width() > 0.0) || !(box.height() > 0.0)) continue;
    for (std::size_t c = 1; c < prob.size(); ++c) {
      if (prob[c] >= config.min_score) raw.push_back({image_index, c, prob[c], box});
    }
  }
  std::vector<Detection> kept = nms(raw, config.nms_thresh);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (kept.size() > config.max_per_image) kept.resize(config.max_per_image);
  return kept;
}

EvalResult evaluate(const ModelParams& params, const ModelConfig& model,
                    std::span<const Scene> scenes, const ProposalConfig& proposals,
                    double noise_level, const std::array<double, 4>& bbox_std,
                    const DetectConfig& config) {
  EvalResult r;
  const Rng root(config.proposal_seed);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    const Tensor image = rasterize(s, noise_level);
    Rng prng = root.split(i);
    const std::vector<RoI> rois = generate_test_proposals(s, proposals, prng.next_u64());
    std::vector<Detection> dets = detect(params, model, image, rois, bbox_std, config, i);
    r.detections.insert(r.detections.end(), dets.begin(), dets.end());
    for (const SceneObject& o : s.objects) {
      r.ground_truths.push_back({i, o.label(), o.visible_box(s.image_w, s.image_h)});
    }
  }
  r.voc = mean_ap(r.detections, r.ground_truths, model.num_classes, 0.5);
  r.coco = coco_map(r.detections, r.ground_truths, model.num_classes);
  return r;
}

namespace {

Scene flip_scene(const Scene& scene) {
  Scene s = scene;
  const double w = s.image_w;
  auto flip = [w](Box& b) {
    const double x1 = w - b.x2;
    const double x2 = w - b.x1;
    b.x1 = x1;
    b.x2 = x2;
  };
  for (auto& o : s.objects) {
    flip(o.box);
    for (auto& occ : o.occluders) flip(occ);
  }
  return s;
}

bool is_weight(const std::string& name) { return name.ends_with(".weight"); }

}  // namespace

TrainResult run_training(std::span<const Scene> train_scenes, std::span<const Scene> val_scenes,
                         ModelParams params, const TrainSetup& setup, std::uint64_t seed,
                         const std::function<void(const MetricRecord&)>& on_record) {
  const TrainConfig& tc = setup.train;
  tc.validate();
  setup.model.validate();
  setup.proposals.validate();
  setup.assign.validate();
  if (tc.iterations > 0 && train_scenes.empty()) {
    throw std::invalid_argument("train: no training scenes");
  }

  TrainResult result;
  ModelParams velocity = zeros_like(params);
  const LossWeights weights{tc.cls_weight, tc.bbox_weight};
  const Rng root(seed);
  const std::size_t val_count = std::min(tc.val_scenes, val_scenes.size());

  for (int it = 0; it < tc.iterations; ++it) {
    Rng rng = root.split(static_cast<std::uint64_t>(it));
    const Scene& base = train_scenes[rng.below(train_scenes.size())];
    const double scale = tc.scales[rng.below(tc.scales.size())];
    Scene scene = scale_scene(base, scale);
    if (tc.flip && rng.bernoulli(0.5)) scene = flip_scene(scene);
    scene.noise_seed = rng.next_u64();
    const Tensor image = rasterize(scene, setup.noise_level);
    const std::vector<RoI> rois = generate_proposals(scene, setup.proposals, rng.next_u64());
    std::vector<RoITarget> targets = assign_targets(rois, scene, setup.assign);
    for (RoITarget& t : targets) {
      for (std::size_t i = 0; i < 4; ++i) t.regression_target[i] /= tc.bbox_std[i];
    }

    const ForwardPass fp = model_forward(params, setup.model, image, rois);

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (targets[i].kind != TargetKind::ignored) candidates.push_back(i);
    }
    const auto b = static_cast<std::size_t>(tc.rois_per_image);
    std::vector<std::size_t> selected;
    if (tc.ohem) {
      const MultitaskLoss all = multitask_loss(fp.outputs, targets, weights);
      std::vector<double> cand_losses;
      cand_losses.reserve(candidates.size());
      for (std::size_t i : candidates) cand_losses.push_back(all.per_roi[i]);
      for (std::size_t j : ohem_select(cand_losses, b)) selected.push_back(candidates[j]);
    } else {
      selected = candidates;
      const std::size_t keep = std::min(b, selected.size());
      for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t j = i + rng.below(selected.size() - i);
        std::swap(selected[i], selected[j]);
      }
      selected.resize(keep);
    }
    std::vector<RoITarget> sel_targets(targets.size());
    for (std::size_t i : selected) sel_targets[i] = targets[i];

    const MultitaskLoss loss = multitask_loss(fp.outputs, sel_targets, weights);
    if (!std::isfinite(loss.loss)) {
      throw TrainingDiverged("training diverged at iteration " + std::to_string(it) +
                             ": loss is not finite");
    }
    ModelParams grads = zeros_like(params);
    model_backward(params, setup.model, fp, loss.grads, grads);
    if (tc.weight_decay > 0.0) {
      auto p = collect_spans(std::as_const(params));
      auto g = collect_spans(grads);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (!is_weight(p[i].first)) continue;
        for (std::size_t j = 0; j < p[i].second.size(); ++j) g[i].second[j] += tc.weight_decay * p[i].second[j];
      }
    }
    const double lr = tc.learning_rate(it);
    sgd_step(params, grads, lr, tc.momentum, velocity);

    MetricRecord rec{it, loss.loss, loss.cls_loss, loss.bbox_loss, lr, std::nullopt};
    if (tc.val_interval > 0 && (it + 1) % tc.val_interval == 0 && val_count > 0) {
      rec.val_map = evaluate(params, setup.model, val_scenes.first(val_count), setup.proposals,
                             setup.noise_level, tc.bbox_std)
                        .voc.map;
    }
    if (on_record) on_record(rec);
    result.log.push_back(rec);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace couplenet
