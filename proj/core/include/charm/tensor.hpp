#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "charm/error.hpp"

namespace charm {

/// Dense row-major tensor. Most of the library works with rank-2 tensors; a
/// scalar is a 1x1 tensor.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : shape_{rows, cols}, data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<Real> data)
      : shape_{rows, cols}, data_(std::move(data)) {
    if (data_.size() != rows * cols) throw DimensionError("tensor data does not match its shape");
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept {
    return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : shape_[1];
  }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::vector<Real>& values() noexcept { return data_; }
  const std::vector<Real>& values() const noexcept { return data_; }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }
  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  /// Element-wise precision conversion.
  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

}  // namespace charm
