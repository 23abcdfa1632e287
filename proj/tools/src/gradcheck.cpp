#include "couplenet/tools/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>

#include "couplenet/context.hpp"
#include "couplenet/coupling.hpp"
#include "couplenet/heads.hpp"
#include "couplenet/nn.hpp"
#include "couplenet/rng.hpp"
#include "couplenet/roi_layers.hpp"
#include "couplenet/train.hpp"

namespace couplenet::tools {

namespace {

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-6;
constexpr double kCompositeRelTol = 1e-4;
constexpr double kAbsFloor = 1e-9;

struct Context {
  const GradcheckOptions& options;
  std::vector<GradcheckResult>& results;
  std::string suite;
};

/// Accumulates analytic-vs-numeric comparisons for one op.
class Row {
 public:
  Row(Context& ctx, std::string op, double rel_tol)
      : ctx_(ctx), corrupt_(ctx.options.corrupt_op == op) {
    r_.suite = ctx.suite;
    r_.op = std::move(op);
    r_.rel_tol = rel_tol;
    r_.abs_floor = kAbsFloor;
  }
  Row(const Row&) = delete;
  Row& operator=(const Row&) = delete;
  ~Row() { ctx_.results.push_back(r_); }

  /// Compares `analytic` against central differences of `loss` with respect
  /// to every entry of `x` (which `loss` must read through).
  void check(std::span<double> x, std::span<const double> analytic,
             const std::function<double()>& loss) {
    if (x.size() != analytic.size()) throw std::logic_error("gradcheck: size mismatch in " + r_.op);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + kStep;
      const double up = loss();
      x[i] = saved - kStep;
      const double down = loss();
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * kStep);
      double a = analytic[i];
      if (corrupt_ && r_.entries == 0) a += 1e-3 * (1.0 + std::abs(a));
      record(a, numeric);
    }
  }

 private:
  void record(double a, double n) {
    ++r_.entries;
    const double err = std::abs(a - n);
    const double scale = std::max(std::abs(a), std::abs(n));
    r_.max_abs_error = std::max(r_.max_abs_error, err);
    if (scale > kAbsFloor) r_.max_rel_error = std::max(r_.max_rel_error, err / scale);
    if (!std::isfinite(err) || err > std::max(kAbsFloor, r_.rel_tol * scale)) r_.passed = false;
  }

  Context& ctx_;
  bool corrupt_;
  GradcheckResult r_;
};

void fill_uniform(std::span<double> v, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (double& x : v) x = rng.uniform(lo, hi);
}

/// Uniform in [-1, 1] but at least `gap` away from every value in `kinks`.
double away_from(Rng& rng, std::initializer_list<double> kinks, double gap, double lo = -1.0,
                 double hi = 1.0) {
  for (;;) {
    const double v = rng.uniform(lo, hi);
    bool ok = true;
    for (double k : kinks) ok = ok && std::abs(v - k) > gap;
    if (ok) return v;
  }
}

Tensor random_tensor(Shape s, Rng& rng) {
  Tensor t(s);
  fill_uniform(t.data(), rng);
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void suite_conv2d(Context& ctx, Rng& rng) {
  Row row(ctx, "conv2d", kRelTol);
  struct Geometry {
    Shape input;
    std::size_t out_c, kernel, stride, pad;
  };
  const Geometry cases[] = {{{1, 2, 5, 5}, 3, 3, 1, 1},
                            {{1, 3, 7, 6}, 2, 3, 2, 1},
                            {{2, 2, 4, 5}, 3, 1, 1, 0},
                            {{1, 2, 6, 6}, 2, 2, 2, 0}};
  for (const Geometry& g : cases) {
    Tensor x = random_tensor(g.input, rng);
    ConvParams p = make_conv(g.out_c, g.input.c, g.kernel, g.stride, g.pad);
    fill_uniform(p.weight.data(), rng);
    fill_uniform(p.bias, rng);
    const Tensor u = random_tensor(conv2d_output_shape(g.input, p), rng);
    const ConvGrads grads = conv2d_backward(x, p, u);
    auto loss = [&] { return dot(conv2d(x, p).data(), u.data()); };
    row.check(x.data(), grads.grad_input.data(), loss);
    row.check(p.weight.data(), grads.grad_weight.data(), loss);
    row.check(p.bias, grads.grad_bias, loss);
  }
}

void suite_relu(Context& ctx, Rng& rng) {
  Row row(ctx, "relu", kRelTol);
  Tensor x(Shape{2, 3, 4, 5});
  for (double& v : x.data()) v = away_from(rng, {0.0}, 1e-3);
  const Tensor u = random_tensor(x.shape(), rng);
  const Tensor g = relu_backward(x, u);
  row.check(x.data(), g.data(), [&] { return dot(relu(x).data(), u.data()); });
}

void suite_losses(Context& ctx, Rng& rng) {
  {
    Row row(ctx, "softmax_ce", kRelTol);
    for (std::size_t label = 0; label < 5; ++label) {
      std::vector<double> logits(5);
      fill_uniform(logits, rng, -3.0, 3.0);
      const LossGrad lg = softmax_cross_entropy(logits, label);
      row.check(logits, lg.grad, [&] { return softmax_cross_entropy(logits, label).loss; });
    }
  }
  {
    Row row(ctx, "smooth_l1", kRelTol);
    for (int rep = 0; rep < 4; ++rep) {
      std::vector<double> pred(4), target(4);
      fill_uniform(target, rng);
      for (std::size_t i = 0; i < 4; ++i) {
        pred[i] = target[i] + away_from(rng, {-1.0, 0.0, 1.0}, 1e-3, -2.5, 2.5);
      }
      const LossGrad lg = smooth_l1(pred, target);
      row.check(pred, lg.grad, [&] { return smooth_l1(pred, target).loss; });
    }
  }
}

std::vector<RoI> pooling_rois() {
  // Interior, border-clipped, tiny (empty bins) and whole-map boxes on a map
  // of 9 x 11 at spatial scale 0.5.
  return {{0, 2.0, 3.0, 15.0, 13.0},  {0, -4.0, -3.0, 9.0, 8.0}, {0, 10.0, 6.0, 30.0, 25.0},
          {0, 5.0, 5.0, 6.0, 6.5},    {0, 0.0, 0.0, 22.0, 18.0}, {1, 3.3, 1.7, 12.9, 16.2}};
}

void suite_roipool(Context& ctx, Rng& rng) {
  Row row(ctx, "roi_pool_max", kRelTol);
  Tensor features = random_tensor(Shape{2, 3, 9, 11}, rng);
  for (const RoI& roi : pooling_rois()) {
    for (std::size_t k : {2u, 3u}) {
      const RoIMaxPooled fwd = roi_pool_max(features, roi, k, k, 0.5);
      const Tensor u = random_tensor(fwd.pooled.shape(), rng);
      const Tensor g = roi_pool_max_backward(fwd.argmax, u, features.shape());
      row.check(features.data(), g.data(), [&] {
        return dot(roi_pool_max(features, roi, k, k, 0.5).pooled.data(), u.data());
      });
    }
  }
}

void suite_psroi(Context& ctx, Rng& rng) {
  {
    Row row(ctx, "psroi_pool_avg", kRelTol);
    const std::size_t classes = 3;
    for (std::size_t k : {1u, 2u, 3u}) {
      Tensor maps = random_tensor(Shape{2, classes * k * k, 9, 11}, rng);
      for (const RoI& roi : pooling_rois()) {
        const PooledLocal fwd = psroi_pool_avg(maps, roi, k, classes, 0.5);
        const Tensor u = random_tensor(fwd.values.shape(), rng);
        const Tensor g = psroi_pool_avg_backward(fwd, u, maps.shape());
        row.check(maps.data(), g.data(), [&] {
          return dot(psroi_pool_avg(maps, roi, k, classes, 0.5).values.data(), u.data());
        });
      }
    }
  }
  {
    Row row(ctx, "vote_average", kRelTol);
    for (std::size_t k : {1u, 3u, 7u}) {
      PooledLocal pooled;
      pooled.values = random_tensor(Shape{1, 4, k, k}, rng);
      std::vector<double> u(4);
      fill_uniform(u, rng);
      const Tensor g = vote_average_backward(pooled.values.shape(), u);
      row.check(pooled.values.data(), g.data(), [&] { return dot(vote_average(pooled), u); });
    }
  }
}

void suite_normalize(Context& ctx, Rng& rng) {
  for (Normalization mode : {Normalization::none, Normalization::l2, Normalization::learned_scale}) {
    Row row(ctx, "normalize/" + to_string(mode), kRelTol);
    for (int rep = 0; rep < 4; ++rep) {
      std::vector<double> v(5), u(5);
      fill_uniform(v, rng, -2.0, 2.0);
      fill_uniform(u, rng);
      BranchScale s = BranchScale::identity(5);
      fill_uniform(s.scale, rng, 0.5, 1.5);
      fill_uniform(s.bias, rng, -0.5, 0.5);
      const NormalizeGrads g = normalize_branch_backward(v, mode, &s, u);
      auto loss = [&] { return dot(normalize_branch(v, mode, &s), u); };
      row.check(v, g.grad_input, loss);
      if (mode == Normalization::learned_scale) {
        row.check(s.scale, g.grad_scale, loss);
        row.check(s.bias, g.grad_bias, loss);
      }
    }
  }
}

void suite_couple(Context& ctx, Rng& rng) {
  for (Strategy strategy : {Strategy::sum, Strategy::prod, Strategy::max}) {
    Row row(ctx, "couple/" + to_string(strategy), kRelTol);
    for (int rep = 0; rep < 4; ++rep) {
      std::vector<double> l(5), g(5), u(5);
      fill_uniform(l, rng, -2.0, 2.0);
      for (std::size_t i = 0; i < 5; ++i) g[i] = l[i] + away_from(rng, {0.0}, 1e-3);
      fill_uniform(u, rng);
      const auto [gl, gg] = couple_backward(l, g, strategy, u);
      auto loss = [&] { return dot(couple(l, g, strategy), u); };
      row.check(l, gl, loss);
      row.check(g, gg, loss);
    }
  }
}

void suite_context(Context& ctx, Rng& rng) {
  Row row(ctx, "context_pool", kRelTol);
  Tensor features = random_tensor(Shape{2, 3, 9, 11}, rng);
  for (const RoI& roi : pooling_rois()) {
    const ContextPair pair = make_context_pair(roi, 2.0, 22.0, 18.0);
    const ContextPooled fwd = pool_with_context(features, pair, 3, 0.5);
    const Tensor u = random_tensor(fwd.pooled.shape(), rng);
    Tensor g(features.shape());
    pool_with_context_backward_accumulate(fwd, u, g);
    row.check(features.data(), g.data(), [&] {
      return dot(pool_with_context(features, pair, 3, 0.5).pooled.data(), u.data());
    });
  }
}

/// Micro-instance: one 24 x 24 image, two RoIs (one foreground, one
/// background), C = 2, k = 3, narrow channels so every parameter is checked.
void e2e_case(Context& ctx, Rng& rng, const std::string& op, Normalization norm, Strategy strategy,
              bool use_context) {
  ModelConfig cfg;
  cfg.k = 3;
  cfg.num_classes = 2;
  cfg.backbone_c1 = 4;
  cfg.backbone_c2 = 6;
  cfg.backbone_c3 = 6;
  cfg.reduce_channels = 5;
  cfg.hidden_channels = 6;
  cfg.use_context = use_context;
  cfg.coupling.normalization = norm;
  cfg.coupling.strategy = strategy;

  ModelParams params = init_model_params(cfg, rng.next_u64());
  for_each_param(params, [&](const std::string& name, std::span<double> v,
                             const std::vector<std::size_t>&) {
    if (name.ends_with(".scale")) {
      fill_uniform(v, rng, 0.7, 1.3);
    } else if (name.ends_with(".bias")) {
      fill_uniform(v, rng, -0.1, 0.1);
    }
  });
  Tensor image = random_tensor(Shape{1, 1, 24, 24}, rng);
  for (double& v : image.data()) v = 0.5 + 0.5 * v;
  const std::vector<RoI> rois = {{0, 3.0, 4.0, 17.0, 19.0}, {0, 10.0, 2.0, 23.0, 13.0}};
  std::vector<RoITarget> targets(2);
  targets[0].kind = TargetKind::foreground;
  targets[0].label = 2;
  targets[0].regression_target = {0.3, -0.2, 0.1, -0.4};
  targets[1].kind = TargetKind::background;

  auto total_loss = [&] {
    const ForwardPass pass = model_forward(params, cfg, image, rois);
    return multitask_loss(pass.outputs, targets, LossWeights{}).loss;
  };
  const ForwardPass pass = model_forward(params, cfg, image, rois);
  const MultitaskLoss loss = multitask_loss(pass.outputs, targets, LossWeights{});
  ModelParams grads = zeros_like(params);
  model_backward(params, cfg, pass, loss.grads, grads);

  std::map<std::string, std::span<double>> analytic;
  for_each_param(grads, [&](const std::string& name, std::span<double> v,
                            const std::vector<std::size_t>&) { analytic[name] = v; });
  Row row(ctx, op, kCompositeRelTol);
  for_each_param(params, [&](const std::string& name, std::span<double> v,
                             const std::vector<std::size_t>&) {
    if (v.empty()) return;
    row.check(v, analytic.at(name), total_loss);
  });
}

void suite_e2e(Context& ctx, Rng& rng) {
  e2e_case(ctx, rng, "e2e", Normalization::learned_scale, Strategy::sum, false);
  e2e_case(ctx, rng, "e2e/l2-prod-context", Normalization::l2, Strategy::prod, true);
}

using SuiteFn = void (*)(Context&, Rng&);

struct Suite {
  const char* name;
  const char* group;
  SuiteFn fn;
};

constexpr Suite kSuites[] = {
    {"conv2d", "nn", suite_conv2d},         {"relu", "nn", suite_relu},
    {"losses", "nn", suite_losses},         {"roipool", "roi", suite_roipool},
    {"psroi", "roi", suite_psroi},          {"normalize", "coupling", suite_normalize},
    {"couple", "coupling", suite_couple},   {"context", "roi", suite_context},
    {"e2e", "e2e", suite_e2e},
};

}  // namespace

std::vector<std::string> gradcheck_suites() {
  std::vector<std::string> names;
  for (const Suite& s : kSuites) names.emplace_back(s.name);
  return names;
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options) {
  std::vector<GradcheckResult> results;
  bool matched = false;
  Rng root(options.seed);
  std::uint64_t stream = 0;
  for (const Suite& s : kSuites) {
    ++stream;
    if (options.scope != "all" && options.scope != s.name && options.scope != s.group) continue;
    matched = true;
    Context ctx{options, results, s.name};
    Rng rng = root.split(stream);
    s.fn(ctx, rng);
  }
  if (!matched) {
    std::string known = "all, nn, roi, coupling";
    for (const Suite& s : kSuites) known += std::string(", ") + s.name;
    throw std::invalid_argument("unknown gradcheck scope '" + options.scope + "' (known: " +
                                known + ")");
  }
  return results;
}

std::string format_gradcheck(const std::vector<GradcheckResult>& results) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-22s %8s %12s %12s %9s  %s\n", "suite", "op", "entries",
                "max_abs", "max_rel", "rel_tol", "status");
  out += line;
  std::size_t failed = 0;
  for (const GradcheckResult& r : results) {
    if (!r.passed) ++failed;
    std::snprintf(line, sizeof line, "%-10s %-22s %8zu %12.3e %12.3e %9.0e  %s\n", r.suite.c_str(),
                  r.op.c_str(), r.entries, r.max_abs_error, r.max_rel_error, r.rel_tol,
                  r.passed ? "ok" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "%zu of %zu checks passed\n", results.size() - failed,
                results.size());
  out += line;
  return out;
}

}  // namespace couplenet::tools
