#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "couplenet/boxes.hpp"
#include "couplenet/roi_layers.hpp"
#include "couplenet/synth.hpp"

namespace couplenet {

/// Stand-in for a region proposal network.
struct ProposalConfig {
  double jitter_scale = 0.1;       ///< corner noise std as a fraction of box extent
  int positives_per_gt = 8;
  int negatives_per_image = 32;
  int test_proposals = 64;         ///< total RoIs per image at test time
  double min_extent = 2.0;         ///< pixels

  void validate() const;
  friend bool operator==(const ProposalConfig&, const ProposalConfig&) = default;
};

/// Jittered copies of every ground-truth box followed by uniform random boxes.
std::vector<RoI> generate_proposals(const Scene& scene, const ProposalConfig& config,
                                    std::uint64_t seed);

/// Test-time proposals: the jittered positives plus random boxes up to
/// config.test_proposals in total (never fewer than the positives).
std::vector<RoI> generate_test_proposals(const Scene& scene, const ProposalConfig& config,
                                         std::uint64_t seed);

/// Dense multi-scale sliding-window boxes for images without annotations.
std::vector<RoI> grid_proposals(int image_w, int image_h);

enum class TargetKind { foreground, background, ignored };

struct RoITarget {
  TargetKind kind = TargetKind::ignored;
  std::size_t label = 0;                 ///< 0 = background
  BoxDeltas regression_target{};         ///< meaningful for foreground only
  std::optional<std::size_t> matched_gt;
  double max_iou = 0.0;
};

struct AssignConfig {
  double fg_thresh = 0.5;
  double bg_lo = 0.1;
  double bg_hi = 0.5;

  void validate() const;
  friend bool operator==(const AssignConfig&, const AssignConfig&) = default;
};

/// Max-IoU assignment against the scene's visible ground-truth boxes.
/// IoU ties resolve to the lowest ground-truth index.
std::vector<RoITarget> assign_targets(std::span<const RoI> rois, const Scene& scene,
                                      const AssignConfig& config);

}  // namespace couplenet
