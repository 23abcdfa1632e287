#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace couplenet {

enum class Normalization { none, l2, learned_scale };
enum class Strategy { sum, prod, max };

/// Normalization x coupling strategy x branch enables.
struct CouplingConfig {
  Normalization normalization = Normalization::learned_scale;
  Strategy strategy = Strategy::sum;
  bool enable_local = true;
  bool enable_global = true;

  /// Throws std::invalid_argument when no branch is enabled or when prod/max
  /// is requested with a single branch.
  void validate() const;
  [[nodiscard]] bool coupled() const { return enable_local && enable_global; }

  friend bool operator==(const CouplingConfig&, const CouplingConfig&) = default;
};

/// CLI spellings: none | l2 | conv.
std::string to_string(Normalization n);
std::string to_string(Strategy s);
Normalization parse_normalization(std::string_view s);
Strategy parse_strategy(std::string_view s);

inline constexpr double kL2Epsilon = 1e-12;

/// Per-channel affine rescaling (a diagonal 1x1 conv) of one branch output.
struct BranchScale {
  std::vector<double> scale;
  std::vector<double> bias;

  static BranchScale identity(std::size_t n) { return {std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)}; }
  friend bool operator==(const BranchScale&, const BranchScale&) = default;
};

struct ScaleParams {
  BranchScale local_cls;
  BranchScale global_cls;
  BranchScale local_bbox;
  BranchScale global_bbox;

  static ScaleParams identity(std::size_t num_classes_plus_bg);
  friend bool operator==(const ScaleParams&, const ScaleParams&) = default;
};

/// none: unchanged; l2: v / max(|v|, eps); learned_scale: scale * v + bias.
std::vector<double> normalize_branch(std::span<const double> v, Normalization mode,
                                     const BranchScale* scale = nullptr);

struct NormalizeGrads {
  std::vector<double> grad_input;
  std::vector<double> grad_scale;  ///< empty unless learned_scale
  std::vector<double> grad_bias;   ///< empty unless learned_scale
};

NormalizeGrads normalize_branch_backward(std::span<const double> v, Normalization mode,
                                         const BranchScale* scale,
                                         std::span<const double> upstream);

/// Element-wise combination of the two branch outputs.
std::vector<double> couple(std::span<const double> local_v, std::span<const double> global_v,
                           Strategy strategy);

/// Vector-Jacobian product of couple. For max, each element's cotangent goes
/// to the larger input; ties go to the local branch.
std::pair<std::vector<double>, std::vector<double>> couple_backward(
    std::span<const double> local_v, std::span<const double> global_v, Strategy strategy,
    std::span<const double> upstream);

}  // namespace couplenet
