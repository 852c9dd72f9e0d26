#include "gramflow/tensor.hpp"

#include <sstream>
#include <utility>

namespace gramflow {

std::size_t shape_numel(const Shape& dims) {
  require(!dims.empty(), "tensor shape must have at least one axis");
  std::size_t n = 1;
  for (std::size_t d : dims) {
    require(d >= 1, "tensor extents must be >= 1, got shape " + shape_str(dims));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape dims, double fill) : dims_(std::move(dims)) {
  data_.assign(shape_numel(dims_), fill);
}

Tensor Tensor::from_data(Shape dims, std::vector<double> data) {
  std::size_t n = shape_numel(dims);
  require(n == data.size(), "payload length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(dims));
  Tensor t;
  t.dims_ = std::move(dims);
  t.data_ = std::move(data);
  return t;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  require(idx.size() == dims_.size(), "index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    require(i < dims_[axis], "index out of range on axis " + std::to_string(axis));
    off = off * dims_[axis] + i;
    ++axis;
  }
  return off;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

void Tensor::axpy(double scale, const Tensor& other) {
  require(same_shape(other), "axpy shape mismatch: " + shape_str(dims_) + " vs " +
                                 shape_str(other.dims_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

}  // namespace gramflow
