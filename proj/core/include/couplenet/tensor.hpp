#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace couplenet {

/// Extents of a dense 4-D tensor in (batch, channel, height, width) order.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  [[nodiscard]] std::size_t numel() const { return n * c * h * w; }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense row-major 64-bit tensor, width fastest.
///
/// A plain value type: copies are deep and independent. Element access is
/// unchecked in release builds; use the shape-aware constructors and the
/// kernel entry points, which validate their arguments.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t numel() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::span<double> data() { return data_; }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] const std::vector<double>& values() const { return data_; }

  [[nodiscard]] std::size_t offset(std::size_t n, std::size_t c, std::size_t h,
                                   std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  [[nodiscard]] double at(std::size_t n, std::size_t c, std::size_t h,
                          std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  /// Pointer to the first element of plane (n, c).
  double* plane(std::size_t n, std::size_t c) {
    return data_.data() + offset(n, c, 0, 0);
  }
  [[nodiscard]] const double* plane(std::size_t n, std::size_t c) const {
    return data_.data() + offset(n, c, 0, 0);
  }

  void fill(double v);
  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] double sum() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Throws std::invalid_argument when any element is NaN or infinite.
void require_finite(const Tensor& t, const char* what);

}  // namespace couplenet
