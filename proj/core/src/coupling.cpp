#include "couplenet/coupling.hpp"

#include <cmath>
#include <stdexcept>

namespace couplenet {

void CouplingConfig::validate() const {
  if (!enable_local && !enable_global) {
    throw std::invalid_argument("coupling: at least one branch must be enabled");
  }
  if (!coupled() && strategy != Strategy::sum) {
    throw std::invalid_argument("coupling: strategy " + to_string(strategy) +
                                " requires both branches");
  }
}

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::none: return "none";
    case Normalization::l2: return "l2";
    case Normalization::learned_scale: return "conv";
  }
  return "?";
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::sum: return "sum";
    case Strategy::prod: return "prod";
    case Strategy::max: return "max";
  }
  return "?";
}

Normalization parse_normalization(std::string_view s) {
  if (s == "none") return Normalization::none;
  if (s == "l2") return Normalization::l2;
  if (s == "conv" || s == "learned_scale") return Normalization::learned_scale;
  throw std::invalid_argument("unknown normalization '" + std::string(s) +
                              "' (expected none|l2|conv)");
}

Strategy parse_strategy(std::string_view s) {
  if (s == "sum") return Strategy::sum;
  if (s == "prod") return Strategy::prod;
  if (s == "max") return Strategy::max;
  throw std::invalid_argument("unknown coupling strategy '" + std::string(s) +
                              "' (expected sum|prod|max)");
}

ScaleParams ScaleParams::identity(std::size_t num_classes_plus_bg) {
  return {BranchScale::identity(num_classes_plus_bg), BranchScale::identity(num_classes_plus_bg),
          BranchScale::identity(4), BranchScale::identity(4)};
}

namespace {

double l2_norm(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

void check_scale(const BranchScale* scale, std::size_t n) {
  if (scale == nullptr) {
    throw std::invalid_argument("normalize_branch: learned_scale requires scale parameters");
  }
  if (scale->scale.size() != n || scale->bias.size() != n) {
    throw std::invalid_argument("normalize_branch: scale parameters have wrong length");
  }
}

void check_lengths(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": length " + std::to_string(a) +
                                " != " + std::to_string(b));
  }
}

}  // namespace

std::vector<double> normalize_branch(std::span<const double> v, Normalization mode,
                                     const BranchScale* scale) {
  std::vector<double> out(v.begin(), v.end());
  switch (mode) {
    case Normalization::none:
      break;
    case Normalization::l2: {
      const double n = std::max(l2_norm(v), kL2Epsilon);
      for (double& x : out) x /= n;
      break;
    }
    case Normalization::learned_scale:
      check_scale(scale, v.size());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = scale->scale[i] * v[i] + scale->bias[i];
      break;
  }
  return out;
}

NormalizeGrads normalize_branch_backward(std::span<const double> v, Normalization mode,
                                         const BranchScale* scale,
                                         std::span<const double> upstream) {
  check_lengths(v.size(), upstream.size(), "normalize_branch_backward");
  NormalizeGrads g;
  g.grad_input.assign(upstream.begin(), upstream.end());
  switch (mode) {
    case Normalization::none:
      break;
    case Normalization::l2: {
      const double norm = l2_norm(v);
      if (norm > kL2Epsilon) {
        // d(v/|v|) = (I - y y^T) / |v|
        double dot = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * upstream[i];
        dot /= norm;
        for (std::size_t i = 0; i < v.size(); ++i) {
          g.grad_input[i] = (upstream[i] - (v[i] / norm) * dot) / norm;
        }
      } else {
        for (double& x : g.grad_input) x /= kL2Epsilon;
      }
      break;
    }
    case Normalization::learned_scale:
      check_scale(scale, v.size());
      g.grad_scale.resize(v.size());
      g.grad_bias.resize(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) {
        g.grad_input[i] = scale->scale[i] * upstream[i];
        g.grad_scale[i] = v[i] * upstream[i];
        g.grad_bias[i] = upstream[i];
      }
      break;
  }
  return g;
}

std::vector<double> couple(std::span<const double> local_v, std::span<const double> global_v,
                           Strategy strategy) {
  check_lengths(local_v.size(), global_v.size(), "couple");
  std::vector<double> out(local_v.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (strategy) {
      case Strategy::sum: out[i] = local_v[i] + global_v[i]; break;
      case Strategy::prod: out[i] = local_v[i] * global_v[i]; break;
      case Strategy::max: out[i] = local_v[i] >= global_v[i] ? local_v[i] : global_v[i]; break;
    }
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> couple_backward(
    std::span<const double> local_v, std::span<const double> global_v, Strategy strategy,
    std::span<const double> upstream) {
  check_lengths(local_v.size(), global_v.size(), "couple_backward");
  check_lengths(local_v.size(), upstream.size(), "couple_backward");
  std::vector<double> gl(local_v.size(), 0.0);
  std::vector<double> gg(local_v.size(), 0.0);
  for (std::size_t i = 0; i < gl.size(); ++i) {
    switch (strategy) {
      case Strategy::sum:
        gl[i] = upstream[i];
        gg[i] = upstream[i];
        break;
      case Strategy::prod:
        gl[i] = upstream[i] * global_v[i];
        gg[i] = upstream[i] * local_v[i];
        break;
      case Strategy::max:
        if (local_v[i] >= global_v[i]) {
          gl[i] = upstream[i];
        } else {
          gg[i] = upstream[i];
        }
        break;
    }
  }
  return {std::move(gl), std::move(gg)};
}

}  // namespace couplenet
