#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace h23d {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major tensor of up to four dimensions, stored in double.
//
// Per-point features are {N, C}; feature maps are channel-first {C, H, W}.
// A gradient buffer of identical shape can be attached on demand.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> data() noexcept { return values_; }
  std::span<const double> data() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  double& at(std::size_t i, std::size_t j) { return values_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return values_[i * shape_[1] + j];
  }
  double& at(std::size_t c, std::size_t h, std::size_t w) {
    return values_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const {
    return values_[(c * shape_[1] + h) * shape_[2] + w];
  }

  // Row i of a rank-2 tensor.
  std::span<double> row(std::size_t i);
  std::span<const double> row(std::size_t i) const;

  bool has_grad() const noexcept { return !grad_.empty(); }
  // Allocates a zero gradient buffer if absent.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

  // Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const;
  void fill(double v);

  bool all_finite() const noexcept;

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

// Throws ShapeError unless a.shape() == b.shape().
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);
void require_shape(const Tensor& t, const Shape& expected, const char* what);

}  // namespace h23d
