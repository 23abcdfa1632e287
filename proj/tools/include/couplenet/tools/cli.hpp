#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "couplenet/eval.hpp"
#include "couplenet/tensor.hpp"

namespace couplenet::tools {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Environment variable naming the default root for command outputs.
inline constexpr const char* kOutRootEnv = "COUPLENET_OUT_ROOT";

/// Entry point of the `couplenet` executable. `args` excludes the program
/// name. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// RGB rendering of a grayscale image with one outline per detection whose
/// score reaches `score_thresh`, colored by class.
std::vector<std::uint8_t> render_overlay(const Tensor& image, std::span<const Detection> detections,
                                         double score_thresh);

}  // namespace couplenet::tools
