#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "couplenet/eval.hpp"
#include "couplenet/heads.hpp"
#include "couplenet/proposals.hpp"
#include "couplenet/synth.hpp"

namespace couplenet {

/// Two-phase (or n-phase) step schedule: lr_values[i] applies from
/// lr_steps[i-1] (0 for i = 0) until lr_steps[i].
struct TrainConfig {
  std::vector<double> lr_values = {0.002, 0.0002};
  std::vector<int> lr_steps = {2000};
  int iterations = 2500;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int rois_per_image = 32;  ///< B
  double cls_weight = 1.0;
  double bbox_weight = 1.0;
  bool ohem = true;
  std::vector<double> scales = {1.0};
  /// Regression targets are divided by these before the loss.
  std::array<double, 4> bbox_std = {0.1, 0.1, 0.2, 0.2};
  bool flip = true;          ///< random horizontal flips
  int val_interval = 0;      ///< 0 disables periodic validation
  std::size_t val_scenes = 50;

  void validate() const;
  [[nodiscard]] double learning_rate(int iteration) const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct LossWeights {
  double cls = 1.0;
  double bbox = 1.0;
};

struct MultitaskLoss {
  double loss = 0.0;
  double cls_loss = 0.0;   ///< mean cross-entropy over non-ignored RoIs
  double bbox_loss = 0.0;  ///< mean smooth-L1 over foreground RoIs
  std::vector<double> per_roi;  ///< ce + bbox_weight * smooth-L1 (0 for ignored)
  std::vector<OutputGrad> grads;  ///< d loss / d outputs for non-ignored RoIs
  std::size_t num_cls = 0;
  std::size_t num_fg = 0;
};

/// Mean softmax cross-entropy over non-ignored RoIs plus bbox weight times
/// mean smooth-L1 over foreground RoIs. All-ignored input yields zero loss.
MultitaskLoss multitask_loss(std::span<const RoIOutput> outputs,
                             std::span<const RoITarget> targets, const LossWeights& weights);

/// Indices of the B largest losses in descending-loss order (ties: lower
/// index first); all indices when fewer than B.
std::vector<std::size_t> ohem_select(std::span<const double> per_roi_losses, std::size_t b);

/// v <- momentum * v + g; p <- p - lr * v.
void sgd_step(std::span<double> params, std::span<const double> grads, double lr,
              double momentum, std::span<double> velocity);

void sgd_step(ModelParams& params, const ModelParams& grads, double lr, double momentum,
              ModelParams& velocity);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricRecord {
  int iteration = 0;
  double loss = 0.0;
  double cls_loss = 0.0;
  double bbox_loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_map;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

/// One JSON object per line.
std::string metric_line(const MetricRecord& record);

struct DetectConfig {
  double nms_thresh = 0.3;
  double min_score = 0.01;
  std::size_t max_per_image = 100;
  std::uint64_t proposal_seed = 20240601;
};

/// Scores every RoI, decodes boxes, thresholds and runs per-class NMS.
std::vector<Detection> detect(const ModelParams& params, const ModelConfig& model,
                              const Tensor& image, std::span<const RoI> rois,
                              const std::array<double, 4>& bbox_std, const DetectConfig& config,
                              std::size_t image_index = 0);

struct EvalResult {
  MapResult voc;      ///< at IoU 0.5
  double coco = 0.0;  ///< averaged over 0.5:0.05:0.95
  std::vector<Detection> detections;
  std::vector<GroundTruth> ground_truths;
};

/// Detection evaluation over scenes rendered at scale 1 with test proposals.
/// Proposal seeds depend only on config.proposal_seed and the scene index, so
/// every model sees identical proposals.
EvalResult evaluate(const ModelParams& params, const ModelConfig& model,
                    std::span<const Scene> scenes, const ProposalConfig& proposals,
                    double noise_level, const std::array<double, 4>& bbox_std,
                    const DetectConfig& config = {});

struct TrainSetup {
  ModelConfig model;
  TrainConfig train;
  ProposalConfig proposals;
  AssignConfig assign;
  double noise_level = 0.06;
};

struct TrainResult {
  ModelParams params;
  std::vector<MetricRecord> log;
};

/// Multi-task SGD with optional hard-example selection. Fully deterministic
/// for a given seed. Throws TrainingDiverged on a non-finite loss.
/// `on_record`, when set, receives each metric record as it is produced.
TrainResult run_training(std::span<const Scene> train_scenes, std::span<const Scene> val_scenes,
                         ModelParams params, const TrainSetup& setup, std::uint64_t seed,
                         const std::function<void(const MetricRecord&)>& on_record = {});

}  // namespace couplenet
