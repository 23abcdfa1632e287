#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "couplenet/heads.hpp"
#include "couplenet/proposals.hpp"
#include "couplenet/synth.hpp"
#include "couplenet/train.hpp"

namespace couplenet {

/// Raised for malformed or invalid run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kRunConfigVersion = 1;

/// Every tunable of a run. Serialized as JSON with a version field; unknown
/// keys are rejected, missing keys keep their defaults.
struct RunConfig {
  int version = kRunConfigVersion;
  std::uint64_t seed = 1;
  std::string out_dir;
  bool export_images = false;
  DatasetConfig data;
  ModelConfig model;
  ProposalConfig proposals;
  AssignConfig assign{0.5, 0.0, 0.5};
  TrainConfig train;
  DetectConfig detect;
  double score_thresh = 0.6;  ///< drawing / infer threshold

  /// Throws ConfigError describing the first invalid field.
  void validate() const;
  [[nodiscard]] TrainSetup train_setup() const;

  friend bool operator==(const RunConfig& a, const RunConfig& b);
};

std::string to_json(const RunConfig& config);
RunConfig run_config_from_json(std::string_view text);

/// Branch selector spelling used by --branches: local | global | both.
std::string branches_to_string(const CouplingConfig& c);
void apply_branches(CouplingConfig& c, std::string_view branches);

}  // namespace couplenet
