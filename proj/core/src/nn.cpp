#include "couplenet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace couplenet {
namespace {

// Valid output-column range [lo, hi) for kernel column kx: 0 <= ox*s + kx - p < in_w.
struct ColRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

ColRange valid_range(std::size_t out_extent, std::size_t in_extent, std::size_t kx,
                     std::size_t stride, std::size_t pad) {
  const auto s = static_cast<long>(stride);
  const auto off = static_cast<long>(kx) - static_cast<long>(pad);
  // smallest o with o*s + off >= 0
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  // largest o with o*s + off <= in_extent - 1
  const long top = static_cast<long>(in_extent) - 1 - off;
  long hi = top < 0 ? -1 : top / s;
  hi = std::min(hi, static_cast<long>(out_extent) - 1);
  if (hi < lo) return {};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
}

void check_conv_args(const Shape& in, const ConvParams& p) {
  if (p.weight.shape().c != in.c) {
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(p.weight.shape().c) +
                                " input channels but input " + in.str() + " has " +
                                std::to_string(in.c));
  }
  if (p.bias.size() != p.out_channels()) {
    throw std::invalid_argument("conv2d: bias length " + std::to_string(p.bias.size()) +
                                " != out channels " + std::to_string(p.out_channels()));
  }
  if (p.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (in.h + 2 * p.padding < p.kernel_h() || in.w + 2 * p.padding < p.kernel_w()) {
    throw std::invalid_argument("conv2d: padded input " + in.str() +
                                " smaller than kernel " + p.weight.shape().str());
  }
}

ConvGrads conv_backward_impl(const Tensor& input, const ConvParams& p, const Tensor& g,
                             bool want_input) {
  const Shape& in = input.shape();
  const Shape out = conv2d_output_shape(in, p);
  if (g.shape() != out) {
    throw std::invalid_argument("conv2d_backward: upstream gradient " + g.shape().str() +
                                " does not match output " + out.str());
  }
  ConvGrads r;
  if (want_input) r.grad_input = Tensor(in);
  r.grad_weight = Tensor(p.weight.shape());
  r.grad_bias.assign(p.out_channels(), 0.0);
  const std::size_t s = p.stride;
  const std::size_t kh = p.kernel_h();
  const std::size_t kw = p.kernel_w();

  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oc = 0; oc < out.c; ++oc) {
      const double* gp = g.plane(n, oc);
      double bsum = 0.0;
      for (std::size_t i = 0; i < out.h * out.w; ++i) bsum += gp[i];
      r.grad_bias[oc] += bsum;
      for (std::size_t ic = 0; ic < in.c; ++ic) {
        const double* ip = input.plane(n, ic);
        double* gip = want_input ? r.grad_input.plane(n, ic) : nullptr;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const ColRange rows = valid_range(out.h, in.h, ky, s, p.padding);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const ColRange cols = valid_range(out.w, in.w, kx, s, p.padding);
            const double wv = p.weight.at(oc, ic, ky, kx);
            const auto off = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(p.padding);
            double acc = 0.0;
            for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
              const std::size_t iy = oy * s + ky - p.padding;
              const double* grow = gp + oy * out.w;
              const double* irow = ip + static_cast<std::ptrdiff_t>(iy * in.w) + off;
              if (s == 1) {
                for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) acc += grow[ox] * irow[ox];
                if (gip != nullptr) {
                  double* girow = gip + static_cast<std::ptrdiff_t>(iy * in.w) + off;
                  for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) girow[ox] += wv * grow[ox];
                }
              } else {
                for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) acc += grow[ox] * irow[ox * s];
                if (gip != nullptr) {
                  double* girow = gip + static_cast<std::ptrdiff_t>(iy * in.w) + off;
                  for (std::size_t ox = cols.lo; ox < cols.hi; ++ox)
                    girow[ox * s] += wv * grow[ox];
                }
              }
            }
            r.grad_weight.at(oc, ic, ky, kx) += acc;
          }
        }
      }
    }
  }
  return r;
}

}  // namespace

ConvParams make_conv(std::size_t out_channels, std::size_t in_channels, std::size_t kernel,
                     std::size_t stride, std::size_t padding) {
  ConvParams p;
  p.weight = Tensor(Shape{out_channels, in_channels, kernel, kernel});
  p.bias.assign(out_channels, 0.0);
  p.stride = stride;
  p.padding = padding;
  return p;
}

Shape conv2d_output_shape(const Shape& in, const ConvParams& p) {
  check_conv_args(in, p);
  return Shape{in.n, p.out_channels(), (in.h + 2 * p.padding - p.kernel_h()) / p.stride + 1,
               (in.w + 2 * p.padding - p.kernel_w()) / p.stride + 1};
}

Tensor conv2d(const Tensor& input, const ConvParams& p) {
  const Shape& in = input.shape();
  const Shape out = conv2d_output_shape(in, p);
  Tensor y(out);
  const std::size_t s = p.stride;
  const std::size_t kh = p.kernel_h();
  const std::size_t kw = p.kernel_w();

  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oc = 0; oc < out.c; ++oc) {
      double* yp = y.plane(n, oc);
      std::fill(yp, yp + out.h * out.w, p.bias[oc]);
      for (std::size_t ic = 0; ic < in.c; ++ic) {
        const double* ip = input.plane(n, ic);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const ColRange rows = valid_range(out.h, in.h, ky, s, p.padding);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const ColRange cols = valid_range(out.w, in.w, kx, s, p.padding);
            const double wv = p.weight.at(oc, ic, ky, kx);
            if (wv == 0.0) continue;
            const auto off = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(p.padding);
            for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
              const std::size_t iy = oy * s + ky - p.padding;
              double* yrow = yp + oy * out.w;
              const double* irow = ip + static_cast<std::ptrdiff_t>(iy * in.w) + off;
              if (s == 1) {
                for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) yrow[ox] += wv * irow[ox];
              } else {
                for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) yrow[ox] += wv * irow[ox * s];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& params,
                          const Tensor& upstream_grad) {
  return conv_backward_impl(input, params, upstream_grad, true);
}

ConvGrads conv2d_backward_params_only(const Tensor& input, const ConvParams& params,
                                      const Tensor& upstream_grad) {
  return conv_backward_impl(input, params, upstream_grad, false);
}

Tensor relu(const Tensor& input) {
  Tensor y(input.shape());
  auto src = input.data();
  auto dst = y.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream_grad) {
  if (input.shape() != upstream_grad.shape()) {
    throw std::invalid_argument("relu_backward: shape " + upstream_grad.shape().str() +
                                " != " + input.shape().str());
  }
  Tensor g(input.shape());
  auto x = input.data();
  auto u = upstream_grad.data();
  auto dst = g.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = x[i] > 0.0 ? u[i] : 0.0;
  return g;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

LossGrad softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                " out of range for " + std::to_string(logits.size()) +
                                " classes");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  const double log_z = std::log(z) + m;
  LossGrad r;
  r.loss = log_z - logits[label];
  r.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logits[i] - log_z);
  r.grad[label] -= 1.0;
  return r;
}

LossGrad smooth_l1(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw std::invalid_argument("smooth_l1: length " + std::to_string(pred.size()) +
                                " != " + std::to_string(target.size()));
  }
  LossGrad r;
  r.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double x = pred[i] - target[i];
    const double ax = std::abs(x);
    if (ax < 1.0) {
      r.loss += 0.5 * x * x;
      r.grad[i] = x;
    } else {
      r.loss += ax - 0.5;
      r.grad[i] = x > 0.0 ? 1.0 : -1.0;
    }
  }
  return r;
}

}  // namespace couplenet
