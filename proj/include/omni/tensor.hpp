#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace omni::numerics {

// Dense row-major tensor of 64-bit floats. Values are validated to be finite
// at construction; a non-finite entry anywhere is treated as a logic error in
// the producing computation.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);     // 1 x n
  static Tensor column(std::vector<double> values);  // n x 1
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors. Throw on rank mismatch.
  std::size_t rows() const;
  std::size_t cols() const;

  double at(std::size_t i) const { return data_[i]; }
  double& at(std::size_t i) { return data_[i]; }
  double at2(std::size_t r, std::size_t c) const { return data_[r * cols_cached_ + c]; }
  double& at2(std::size_t r, std::size_t c) { return data_[r * cols_cached_ + c]; }
  double at3(std::size_t i, std::size_t j, std::size_t k) const;
  double& at3(std::size_t i, std::size_t j, std::size_t k);

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }
  bool operator!=(const Tensor& other) const { return !(*this == other); }

  // Throws if any entry is NaN or infinite.
  void check_finite(const std::string& context) const;

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::size_t cols_cached_ = 0;  // trailing dimension, for at2
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

}  // namespace omni::numerics
