#include "kads/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "kads/error.hpp"

namespace kads {
namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (product(shape_) != data_.size())
    throw ShapeError("tensor shape " + kads::shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                     " elements");
}

Tensor Tensor::row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw ShapeError("expected a rank-2 tensor, got " + kads::shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw ShapeError("expected a rank-2 tensor, got " + kads::shape_str(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + kads::shape_str(shape_));
  return data_[0];
}

void Tensor::add_inplace(const Tensor& other) {
  if (other.shape_ != shape_)
    throw ShapeError("add_inplace: " + kads::shape_str(shape_) + " vs " + kads::shape_str(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const { return kads::shape_str(shape_); }

}  // namespace kads
