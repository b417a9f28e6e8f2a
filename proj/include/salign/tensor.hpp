#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace salign {

/// Dimension list of a dense row-major array. Rank 0 is a scalar.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::span<const std::size_t> dims);

  std::size_t rank() const noexcept { return rank_; }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  std::size_t numel() const noexcept;
  std::size_t rows() const noexcept { return rank_ < 2 ? 1 : dims_[0]; }
  std::size_t last() const noexcept { return rank_ == 0 ? 1 : dims_[rank_ - 1]; }
  std::span<const std::size_t> dims() const noexcept { return {dims_.data(), rank_}; }

  bool operator==(const Shape& other) const noexcept;
  std::string str() const;

 private:
  std::size_t rank_ = 0;
  std::array<std::size_t, kMaxRank> dims_{};
};

/// Dense 64-bit float array with value semantics.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.last() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.last() + c]; }
  double item() const;

  void reshape(Shape shape);
  bool all_finite() const noexcept;
  bool operator==(const Tensor& other) const noexcept {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace salign
