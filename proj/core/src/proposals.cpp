#include "couplenet/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "couplenet/rng.hpp"

namespace couplenet {

void ProposalConfig::validate() const {
  if (jitter_scale < 0.0) throw std::invalid_argument("proposals: jitter_scale must be >= 0");
  if (positives_per_gt < 0 || negatives_per_image < 0 || test_proposals < 0) {
    throw std::invalid_argument("proposals: counts must be >= 0");
  }
  if (!(min_extent > 0.0)) throw std::invalid_argument("proposals: min_extent must be positive");
}

void AssignConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(fg_thresh) || !unit(bg_lo) || !unit(bg_hi) || !(bg_lo < bg_hi) ||
      !(bg_hi <= fg_thresh)) {
    throw std::invalid_argument("assign: need 0 <= bg_lo < bg_hi <= fg_thresh <= 1");
  }
}

namespace {

// Clips to the image and widens to min_extent, staying inside the image.
RoI finalize(Box b, double w, double h, double min_extent) {
  b = clip_box(b, w, h);
  auto widen = [min_extent](double& lo, double& hi, double limit) {
    const double ext = std::min(min_extent, limit);
    if (hi - lo >= ext) return;
    const double c = std::clamp(0.5 * (lo + hi), 0.5 * ext, limit - 0.5 * ext);
    lo = c - 0.5 * ext;
    hi = c + 0.5 * ext;
  };
  widen(b.x1, b.x2, w);
  widen(b.y1, b.y2, h);
  return to_roi(b);
}

void add_positives(std::vector<RoI>& out, const Scene& scene, const ProposalConfig& cfg,
                   Rng& rng) {
  const double w = scene.image_w;
  const double h = scene.image_h;
  for (const SceneObject& o : scene.objects) {
    const Box gt = o.visible_box(w, h);
    const double sx = cfg.jitter_scale * gt.width();
    const double sy = cfg.jitter_scale * gt.height();
    for (int i = 0; i < cfg.positives_per_gt; ++i) {
      Box b = gt;
      if (cfg.jitter_scale > 0.0) {
        b.x1 += rng.normal(0.0, sx);
        b.y1 += rng.normal(0.0, sy);
        b.x2 += rng.normal(0.0, sx);
        b.y2 += rng.normal(0.0, sy);
        if (b.x2 < b.x1) std::swap(b.x1, b.x2);
        if (b.y2 < b.y1) std::swap(b.y1, b.y2);
      }
      out.push_back(finalize(b, w, h, cfg.min_extent));
    }
  }
}

void add_random(std::vector<RoI>& out, const Scene& scene, int count, const ProposalConfig& cfg,
                Rng& rng) {
  const double w = scene.image_w;
  const double h = scene.image_h;
  for (int i = 0; i < count; ++i) {
    const double bw = rng.uniform(0.1, 0.8) * w;
    const double bh = rng.uniform(0.1, 0.8) * h;
    const double x1 = rng.uniform(0.0, w - bw);
    const double y1 = rng.uniform(0.0, h - bh);
    out.push_back(finalize({x1, y1, x1 + bw, y1 + bh}, w, h, cfg.min_extent));
  }
}

}  // namespace

std::vector<RoI> generate_proposals(const Scene& scene, const ProposalConfig& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  Rng root(seed);
  Rng pos = root.split(1);
  Rng neg = root.split(2);
  std::vector<RoI> out;
  out.reserve(scene.objects.size() * static_cast<std::size_t>(cfg.positives_per_gt) +
              static_cast<std::size_t>(cfg.negatives_per_image));
  add_positives(out, scene, cfg, pos);
  add_random(out, scene, cfg.negatives_per_image, cfg, neg);
  return out;
}

std::vector<RoI> generate_test_proposals(const Scene& scene, const ProposalConfig& cfg,
                                         std::uint64_t seed) {
  cfg.validate();
  Rng root(seed);
  Rng pos = root.split(1);
  Rng neg = root.split(2);
  std::vector<RoI> out;
  add_positives(out, scene, cfg, pos);
  const int remaining = std::max(0, cfg.test_proposals - static_cast<int>(out.size()));
  add_random(out, scene, remaining, cfg, neg);
  return out;
}

std::vector<RoI> grid_proposals(int image_w, int image_h) {
  std::vector<RoI> out;
  const double w = image_w;
  const double h = image_h;
  for (double size : {16.0, 24.0, 32.0, 48.0, 64.0}) {
    for (double aspect : {0.5, 1.0, 2.0}) {
      const double bw = std::min(w, size * std::sqrt(aspect));
      const double bh = std::min(h, size / std::sqrt(aspect));
      const double step = std::max(4.0, 0.25 * std::min(bw, bh));
      for (double y = 0.0; y + bh <= h + 1e-9; y += step) {
        for (double x = 0.0; x + bw <= w + 1e-9; x += step) out.push_back({0, x, y, x + bw, y + bh});
      }
    }
  }
  return out;
}

std::vector<RoITarget> assign_targets(std::span<const RoI> rois, const Scene& scene,
                                      const AssignConfig& cfg) {
  cfg.validate();
  const double w = scene.image_w;
  const double h = scene.image_h;
  std::vector<Box> gts;
  gts.reserve(scene.objects.size());
  for (const auto& o : scene.objects) gts.push_back(o.visible_box(w, h));

  std::vector<RoITarget> out(rois.size());
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const Box rb = to_box(rois[r]);
    double best = 0.0;
    std::optional<std::size_t> best_gt;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = compute_iou(rb, gts[g]);
      if (!best_gt || iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    RoITarget& t = out[r];
    t.max_iou = best;
    if (best_gt && best >= cfg.fg_thresh) {
      t.kind = TargetKind::foreground;
      t.label = scene.objects[*best_gt].label();
      t.matched_gt = best_gt;
      t.regression_target = encode_targets(rois[r], gts[*best_gt]);
    } else if (best >= cfg.bg_lo && best < cfg.bg_hi) {
      t.kind = TargetKind::background;
      t.label = 0;
      t.matched_gt = best_gt;
    }
  }
  return out;
}

}  // namespace couplenet
