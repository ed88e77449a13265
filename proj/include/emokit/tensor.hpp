#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace emokit {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major tensor of 64-bit reals. Rank 0 (empty shape) is a scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);
  static Tensor identity(std::size_t n);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double scalar_value() const;

  // Row view: the last axis is the row length, leading axes are flattened.
  std::size_t row_len() const { return rank() == 0 ? 1 : shape_.back(); }
  std::size_t row_count() const { return rank() == 0 ? 1 : numel() / row_len(); }
  const double* row(std::size_t r) const { return data_.data() + r * row_len(); }
  double* row(std::size_t r) { return data_.data() + r * row_len(); }

  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Numpy-style broadcast of two shapes; throws std::invalid_argument on mismatch.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op);

// Binary tensor format: magic "MDT1", u32 rank, u64 dims, f64 payload, little-endian.
void write_mdt(const std::string& path, const Tensor& t);
Tensor read_mdt(const std::string& path);

// JSON nested-array encoding for small tensors.
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace emokit
