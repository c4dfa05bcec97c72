#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctrm {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

/// Raised when operand shapes do not conform. The message names every shape involved.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles.
///
/// Rank 1 tensors hold vectors (layer-norm gains, biases), rank 2 tensors hold
/// matrices, and scalars are rank 1 with a single element. Every dimension is
/// positive, so `size() == product(shape)` always holds.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading dimension; for matrices this is the row count.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_.front(); }
  /// Product of the trailing dimensions; for matrices this is the column count.
  std::size_t cols() const { return rows() == 0 ? 0 : data_.size() / rows(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols(), cols()}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols(), cols()}; }

  /// Single element of a one-element tensor.
  double item() const;

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  /// Rows [begin, end) of a matrix.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Largest absolute element-wise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

void require_matrix(const Tensor& t, std::string_view what);

}  // namespace ctrm
