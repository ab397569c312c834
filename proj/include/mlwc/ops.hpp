#pragma once

#include <functional>
#include <vector>

#include "mlwc/rng.hpp"
#include "mlwc/tensor.hpp"

namespace mlwc {

/// Norm floor that absorbs the zero-vector singularity of l2_normalize.
inline constexpr double kNormFloor = 1e-12;

/// Forward value plus a vector-Jacobian product. pullback(upstream) returns
/// one gradient per input, in the documented input order of the op, each
/// shaped like the corresponding input.
struct Grad {
  Tensor value;
  std::function<std::vector<Tensor>(const Tensor&)> pullback;
};

enum class Padding { Same, Valid };
enum class PoolMode { Avg, Max };
enum class LayerKind { Linear, Conv2d, Relu, BiasAdd, Concat };

/// y = x * W + b with x [N,in], W [in,out], b [out]. Inputs: {x, W, b}.
Grad linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// NCHW input, OIHW kernel, stride 1 or 2, zero padding. Same padding splits
/// the total pad with the smaller half on the leading edge. Inputs: {x, k}.
Grad conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding padding);

Grad relu(const Tensor& input);

/// Adds bias[c] across axis 1 of a rank>=2 tensor. Inputs: {x, b}.
Grad bias_add(const Tensor& input, const Tensor& bias);

/// Concatenation along `axis`; all parts agree on the other extents.
/// Inputs: the parts in order.
Grad concat(const std::vector<Tensor>& parts, int axis = 1);

/// Exact inverse of concat for the given part extents along `axis`.
std::vector<Tensor> split(const Tensor& whole, const std::vector<int>& sizes, int axis = 1);

/// [N,C,H,W] -> [N,C]. Max mode routes the gradient to the first argmax
/// position in row-major order. Inputs: {map}.
Grad global_pool(const Tensor& map, PoolMode mode);

/// v / max(||v||, floor) for a rank-1 tensor. Gradient is the exact Jacobian
/// when ||v|| > floor and zero otherwise. Inputs: {v}.
Grad l2_normalize(const Tensor& v, double floor = kNormFloor);

/// Row-wise variant for [N,d]. Inputs: {m}.
Grad l2_normalize_rows(const Tensor& m, double floor = kNormFloor);

/// exp(z_j/T)/sum_i exp(z_i/T) with max subtraction; rank-1 input.
/// Inputs: {z}.
Grad softmax_temp(const Tensor& logits, double temperature);

/// Row-wise variant for [N,c]. Inputs: {z}.
Grad softmax_temp_rows(const Tensor& logits, double temperature);

/// a [m,k] * b [k,n]. Inputs: {a, b}.
Grad matmul(const Tensor& a, const Tensor& b);

/// Dispatch by kind. Linear expects params {W, b}; conv2d {kernel} (stride 1,
/// same padding); bias-add {b}; relu no params; concat joins {input,
/// params...} along axis 1. Unknown shape combinations raise ShapeError.
Grad layer_apply(LayerKind kind, const std::vector<Tensor>& params, const Tensor& input);

using GradOp = std::function<Grad(const std::vector<Tensor>&)>;

/// Central finite-difference check of every pullback component against the
/// directional derivative of <upstream, op(x)>. The upstream vector is drawn
/// from `rng`. Returns the max relative error over all input components.
double grad_check(const GradOp& op, const std::vector<Tensor>& point, double step, RngStream& rng);

}  // namespace mlwc
