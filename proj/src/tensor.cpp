#include "mlwc/tensor.hpp"

#include <sstream>

namespace mlwc {

Eigen::Index shape_size(const Shape& shape) {
  Eigen::Index n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_ = Eigen::ArrayXd::Zero(shape_size(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  const Eigen::Index n = shape_size(shape_);
  if (static_cast<Eigen::Index>(values.size()) != n) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape_));
  }
  data_ = Eigen::Map<const Eigen::ArrayXd>(values.data(), n);
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("value count " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = Eigen::ArrayXd::Constant(shape_size(t.shape_), value);
  return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({static_cast<int>(values.size())}, std::vector<double>(values));
}

Eigen::Index Tensor::offset(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) +
                     " does not match tensor rank " + std::to_string(rank()));
  }
  Eigen::Index off = 0;
  int axis = 0;
  for (int i : idx) {
    const int d = shape_[static_cast<size_t>(axis)];
    if (i < 0 || i >= d) {
      throw ShapeError("index " + std::to_string(i) + " out of range for axis " +
                       std::to_string(axis) + " of extent " + std::to_string(d));
    }
    off = off * d + i;
    ++axis;
  }
  return off;
}

MatView Tensor::matrix() {
  if (rank() != 2) throw ShapeError("matrix view requires rank 2, have " + shape_str(shape_));
  return MatView(data_.data(), shape_[0], shape_[1]);
}

ConstMatView Tensor::matrix() const {
  if (rank() != 2) throw ShapeError("matrix view requires rank 2, have " + shape_str(shape_));
  return ConstMatView(data_.data(), shape_[0], shape_[1]);
}

MatView Tensor::matrix(int rows, int cols) {
  if (static_cast<Eigen::Index>(rows) * cols != size()) {
    throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not cover tensor of size " + std::to_string(size()));
  }
  return MatView(data_.data(), rows, cols);
}

ConstMatView Tensor::matrix(int rows, int cols) const {
  if (static_cast<Eigen::Index>(rows) * cols != size()) {
    throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not cover tensor of size " + std::to_string(size()));
  }
  return ConstMatView(data_.data(), rows, cols);
}

}  // namespace mlwc
