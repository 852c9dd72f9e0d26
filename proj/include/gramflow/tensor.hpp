#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "gramflow/error.hpp"

namespace gramflow {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& dims);
std::string shape_str(const Shape& dims);

/// Dense row-major n-dimensional array of doubles. All extents are >= 1 and
/// the rank is >= 1; the flat payload always has product(dims) elements.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, double fill = 0.0);
  static Tensor from_data(Shape dims, std::vector<double> data);

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::initializer_list<std::size_t> idx) const;
  double& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  double at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
  void fill(double v);

  /// this += scale * other (shapes must match).
  void axpy(double scale, const Tensor& other);

 private:
  Shape dims_;
  std::vector<double> data_;
};

}  // namespace gramflow
