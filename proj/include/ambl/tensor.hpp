#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ambl {

// Dense row-major tensor. Training uses Tensor<float>, gradient checks Tensor<double>.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T{0}) : shape_(std::move(shape)) {
    for (int d : shape_) {
      if (d <= 0) throw std::invalid_argument("Tensor: dimensions must be positive");
    }
    data_.assign(numel_of(shape_), fill);
  }
  Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (int d : shape_) {
      if (d <= 0) throw std::invalid_argument("Tensor: dimensions must be positive");
    }
    if (data_.size() != numel_of(shape_)) throw std::invalid_argument("Tensor: data length does not match shape");
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rows/cols of the tensor viewed as a matrix over its last axis.
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }
  int rows() const { return cols() == 0 ? 0 : static_cast<int>(data_.size() / cols()); }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t numel_of(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

std::string shape_string(const std::vector<int>& shape);

}  // namespace ambl
