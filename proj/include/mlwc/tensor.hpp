#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlwc {

using Shape = std::vector<int>;
using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatView = Eigen::Map<RowMatrixXd>;
using ConstMatView = Eigen::Map<const RowMatrixXd>;
using VecView = Eigen::Map<Eigen::VectorXd>;
using ConstVecView = Eigen::Map<const Eigen::VectorXd>;

class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Dense n-dimensional array of doubles, flat row-major storage.
/// All dimension sizes are >= 1; product(shape) == data length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, Eigen::ArrayXd values);

  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  Eigen::ArrayXd& array() { return data_; }
  const Eigen::ArrayXd& array() const { return data_; }

  double& operator[](Eigen::Index i) { return data_[i]; }
  double operator[](Eigen::Index i) const { return data_[i]; }

  /// Row-major flat offset of a full index tuple.
  Eigen::Index offset(std::initializer_list<int> idx) const;
  double& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  double at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

  /// 2-D view; requires rank() == 2.
  MatView matrix();
  ConstMatView matrix() const;
  /// 2-D view with explicit dimensions; rows*cols must equal size().
  MatView matrix(int rows, int cols);
  ConstMatView matrix(int rows, int cols) const;
  VecView vec() { return VecView(data_.data(), data_.size()); }
  ConstVecView vec() const { return ConstVecView(data_.data(), data_.size()); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const { return data_.isFinite().all(); }

  Tensor zeros_like() const { return Tensor(shape_); }

 private:
  Shape shape_;
  Eigen::ArrayXd data_;
};

Eigen::Index shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

}  // namespace mlwc
