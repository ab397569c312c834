#include "mlwc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mlwc {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

struct ConvGeom {
  int n, ci, h, w;
  int co, kh, kw;
  int stride, oh, ow;
  int pad_top, pad_left;
};

ConvGeom conv_geometry(const Shape& in, const Shape& kernel, int stride, Padding padding) {
  require(in.size() == 4, "conv2d: input must be NCHW, got shape " + shape_str(in));
  require(kernel.size() == 4, "conv2d: kernel must be OIHW, got shape " + shape_str(kernel));
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  ConvGeom g{};
  g.n = in[0];
  g.ci = in[1];
  g.h = in[2];
  g.w = in[3];
  g.co = kernel[0];
  g.kh = kernel[2];
  g.kw = kernel[3];
  g.stride = stride;
  require(kernel[1] == g.ci, "conv2d: input channel axis 1 (=" + std::to_string(g.ci) +
                                 ") does not match kernel input channels (=" +
                                 std::to_string(kernel[1]) + ")");
  if (padding == Padding::Same) {
    g.oh = (g.h + stride - 1) / stride;
    g.ow = (g.w + stride - 1) / stride;
    const int pad_h = std::max(0, (g.oh - 1) * stride + g.kh - g.h);
    const int pad_w = std::max(0, (g.ow - 1) * stride + g.kw - g.w);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    require(g.h >= g.kh, "conv2d: spatial axis 2 (=" + std::to_string(g.h) +
                             ") smaller than kernel height (=" + std::to_string(g.kh) + ")");
    require(g.w >= g.kw, "conv2d: spatial axis 3 (=" + std::to_string(g.w) +
                             ") smaller than kernel width (=" + std::to_string(g.kw) + ")");
    g.oh = (g.h - g.kh) / stride + 1;
    g.ow = (g.w - g.kw) / stride + 1;
    g.pad_top = 0;
    g.pad_left = 0;
  }
  return g;
}

Tensor im2col(const Tensor& input, const ConvGeom& g) {
  const int cols = g.ci * g.kh * g.kw;
  Tensor patches({g.n * g.oh * g.ow, cols});
  double* p = patches.data();
  const double* x = input.data();
  const Eigen::Index chw = static_cast<Eigen::Index>(g.ci) * g.h * g.w;
  for (int n = 0; n < g.n; ++n) {
    for (int oh = 0; oh < g.oh; ++oh) {
      for (int ow = 0; ow < g.ow; ++ow) {
        const int h0 = oh * g.stride - g.pad_top;
        const int w0 = ow * g.stride - g.pad_left;
        for (int ci = 0; ci < g.ci; ++ci) {
          const double* plane = x + n * chw + static_cast<Eigen::Index>(ci) * g.h * g.w;
          for (int kh = 0; kh < g.kh; ++kh) {
            const int h = h0 + kh;
            for (int kw = 0; kw < g.kw; ++kw) {
              const int w = w0 + kw;
              *p++ = (h >= 0 && h < g.h && w >= 0 && w < g.w)
                         ? plane[static_cast<Eigen::Index>(h) * g.w + w]
                         : 0.0;
            }
          }
        }
      }
    }
  }
  return patches;
}

void col2im_add(const Tensor& dpatches, const ConvGeom& g, Tensor& dinput) {
  const double* p = dpatches.data();
  double* x = dinput.data();
  const Eigen::Index chw = static_cast<Eigen::Index>(g.ci) * g.h * g.w;
  for (int n = 0; n < g.n; ++n) {
    for (int oh = 0; oh < g.oh; ++oh) {
      for (int ow = 0; ow < g.ow; ++ow) {
        const int h0 = oh * g.stride - g.pad_top;
        const int w0 = ow * g.stride - g.pad_left;
        for (int ci = 0; ci < g.ci; ++ci) {
          double* plane = x + n * chw + static_cast<Eigen::Index>(ci) * g.h * g.w;
          for (int kh = 0; kh < g.kh; ++kh) {
            const int h = h0 + kh;
            for (int kw = 0; kw < g.kw; ++kw) {
              const int w = w0 + kw;
              if (h >= 0 && h < g.h && w >= 0 && w < g.w) {
                plane[static_cast<Eigen::Index>(h) * g.w + w] += *p;
              }
              ++p;
            }
          }
        }
      }
    }
  }
}

}  // namespace

Grad linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.rank() == 2, "linear: input must be rank 2, got " + shape_str(input.shape()));
  require(weight.rank() == 2, "linear: weight must be rank 2, got " + shape_str(weight.shape()));
  require(input.dim(1) == weight.dim(0),
          "linear: input axis 1 (=" + std::to_string(input.dim(1)) +
              ") does not match weight rows (=" + std::to_string(weight.dim(0)) + ")");
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(1),
          "linear: bias extent must equal weight cols (=" + std::to_string(weight.dim(1)) +
              "), got " + shape_str(bias.shape()));
  const int n = input.dim(0), out = weight.dim(1);
  Tensor y({n, out});
  y.matrix() = input.matrix() * weight.matrix();
  y.matrix().rowwise() += bias.vec().transpose();
  Grad g;
  g.value = std::move(y);
  g.pullback = [input, weight](const Tensor& up) {
    Tensor dx(input.shape()), dw(weight.shape()), db({weight.dim(1)});
    dx.matrix() = up.matrix() * weight.matrix().transpose();
    dw.matrix() = input.matrix().transpose() * up.matrix();
    db.vec() = up.matrix().colwise().sum();
    return std::vector<Tensor>{std::move(dx), std::move(dw), std::move(db)};
  };
  return g;
}

Grad conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding padding) {
  const ConvGeom g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
  Tensor patches = im2col(input, g);
  const int cols = g.ci * g.kh * g.kw;
  // Rows of the kernel matrix are output channels over flattened (i,kh,kw).
  Tensor ymat({g.n * g.oh * g.ow, g.co});
  ymat.matrix() = patches.matrix() * kernel.matrix(g.co, cols).transpose();

  Tensor y({g.n, g.co, g.oh, g.ow});
  {
    double* dst = y.data();
    const double* src = ymat.data();
    const Eigen::Index plane = static_cast<Eigen::Index>(g.oh) * g.ow;
    for (int n = 0; n < g.n; ++n) {
      for (int co = 0; co < g.co; ++co) {
        for (Eigen::Index s = 0; s < plane; ++s) {
          dst[(n * g.co + co) * plane + s] = src[(n * plane + s) * g.co + co];
        }
      }
    }
  }

  Grad out;
  out.value = std::move(y);
  out.pullback = [g, cols, patches = std::move(patches), kernel,
                  in_shape = input.shape()](const Tensor& up) {
    Tensor gmat({g.n * g.oh * g.ow, g.co});
    {
      double* dst = gmat.data();
      const double* src = up.data();
      const Eigen::Index plane = static_cast<Eigen::Index>(g.oh) * g.ow;
      for (int n = 0; n < g.n; ++n) {
        for (int co = 0; co < g.co; ++co) {
          for (Eigen::Index s = 0; s < plane; ++s) {
            dst[(n * plane + s) * g.co + co] = src[(n * g.co + co) * plane + s];
          }
        }
      }
    }
    Tensor dkernel(kernel.shape());
    dkernel.matrix(g.co, cols) = gmat.matrix().transpose() * patches.matrix();
    Tensor dpatches({g.n * g.oh * g.ow, cols});
    dpatches.matrix() = gmat.matrix() * kernel.matrix(g.co, cols);
    Tensor dinput(in_shape);
    col2im_add(dpatches, g, dinput);
    return std::vector<Tensor>{std::move(dinput), std::move(dkernel)};
  };
  return out;
}

Grad relu(const Tensor& input) {
  Tensor y(input.shape(), input.array().max(0.0));
  Grad g;
  g.value = std::move(y);
  g.pullback = [input](const Tensor& up) {
    Tensor dx(input.shape(), (input.array() > 0.0).select(up.array(), 0.0));
    return std::vector<Tensor>{std::move(dx)};
  };
  return g;
}

Grad bias_add(const Tensor& input, const Tensor& bias) {
  require(input.rank() >= 2, "bias-add: input must have rank >= 2, got " + shape_str(input.shape()));
  require(bias.rank() == 1 && bias.dim(0) == input.dim(1),
          "bias-add: bias extent (=" + shape_str(bias.shape()) +
              ") must equal input axis 1 (=" + std::to_string(input.dim(1)) + ")");
  const int n = input.dim(0), c = input.dim(1);
  const Eigen::Index inner = input.size() / (static_cast<Eigen::Index>(n) * c);
  Tensor y(input.shape(), input.array());
  {
    double* p = y.data();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < c; ++j) {
        const double b = bias[j];
        for (Eigen::Index k = 0; k < inner; ++k) *p++ += b;
      }
    }
  }
  Grad g;
  g.value = std::move(y);
  g.pullback = [shape = input.shape(), n, c, inner](const Tensor& up) {
    Tensor dx(shape, up.array());
    Tensor db({c});
    const double* p = up.data();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < inner; ++k) s += *p++;
        db[j] += s;
      }
    }
    return std::vector<Tensor>{std::move(dx), std::move(db)};
  };
  return g;
}

Grad concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat: no parts");
  const Shape& first = parts[0].shape();
  require(axis >= 0 && axis < static_cast<int>(first.size()),
          "concat: axis " + std::to_string(axis) + " out of range for rank " +
              std::to_string(first.size()));
  int total = 0;
  std::vector<int> extents;
  for (const Tensor& p : parts) {
    require(p.rank() == static_cast<int>(first.size()), "concat: rank mismatch between parts");
    for (int a = 0; a < p.rank(); ++a) {
      if (a != axis) {
        require(p.dim(a) == first[static_cast<size_t>(a)],
                "concat: parts disagree on axis " + std::to_string(a));
      }
    }
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape out_shape = first;
  out_shape[static_cast<size_t>(axis)] = total;

  Eigen::Index outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= first[static_cast<size_t>(a)];
  for (size_t a = static_cast<size_t>(axis) + 1; a < first.size(); ++a) inner *= first[a];

  Tensor y(out_shape);
  {
    double* dst = y.data();
    const Eigen::Index row = static_cast<Eigen::Index>(total) * inner;
    Eigen::Index off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const Eigen::Index block = static_cast<Eigen::Index>(extents[pi]) * inner;
      const double* src = parts[pi].data();
      for (Eigen::Index o = 0; o < outer; ++o) {
        std::copy(src + o * block, src + (o + 1) * block, dst + o * row + off);
      }
      off += block;
    }
  }
  Grad g;
  g.value = std::move(y);
  g.pullback = [extents, axis, outer, inner, total, shapes = [&] {
    std::vector<Shape> s;
    for (const Tensor& p : parts) s.push_back(p.shape());
    return s;
  }()](const Tensor& up) {
    std::vector<Tensor> grads;
    const double* src = up.data();
    const Eigen::Index row = static_cast<Eigen::Index>(total) * inner;
    Eigen::Index off = 0;
    for (size_t pi = 0; pi < shapes.size(); ++pi) {
      Tensor d(shapes[pi]);
      const Eigen::Index block = static_cast<Eigen::Index>(extents[pi]) * inner;
      double* dst = d.data();
      for (Eigen::Index o = 0; o < outer; ++o) {
        std::copy(src + o * row + off, src + o * row + off + block, dst + o * block);
      }
      off += block;
      grads.push_back(std::move(d));
    }
    return grads;
  };
  return g;
}

std::vector<Tensor> split(const Tensor& whole, const std::vector<int>& sizes, int axis) {
  require(axis >= 0 && axis < whole.rank(),
          "split: axis " + std::to_string(axis) + " out of range for rank " +
              std::to_string(whole.rank()));
  int total = 0;
  for (int s : sizes) total += s;
  require(total == whole.dim(axis), "split: sizes sum to " + std::to_string(total) +
                                        " but axis extent is " + std::to_string(whole.dim(axis)));
  Eigen::Index outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= whole.dim(a);
  for (int a = axis + 1; a < whole.rank(); ++a) inner *= whole.dim(a);

  std::vector<Tensor> parts;
  const double* src = whole.data();
  const Eigen::Index row = static_cast<Eigen::Index>(total) * inner;
  Eigen::Index off = 0;
  for (int s : sizes) {
    Shape shape = whole.shape();
    shape[static_cast<size_t>(axis)] = s;
    Tensor part(shape);
    const Eigen::Index block = static_cast<Eigen::Index>(s) * inner;
    double* dst = part.data();
    for (Eigen::Index o = 0; o < outer; ++o) {
      std::copy(src + o * row + off, src + o * row + off + block, dst + o * block);
    }
    off += block;
    parts.push_back(std::move(part));
  }
  return parts;
}

Grad global_pool(const Tensor& map, PoolMode mode) {
  require(map.rank() == 4, "global_pool: input must be NCHW, got " + shape_str(map.shape()));
  const int n = map.dim(0), c = map.dim(1), h = map.dim(2), w = map.dim(3);
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  require(plane > 0, "global_pool: empty spatial extent");
  Tensor y({n, c});
  Grad g;
  if (mode == PoolMode::Avg) {
    const double* src = map.data();
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n) * c; ++i) {
      y[i] = ConstVecView(src + i * plane, plane).mean();
    }
    g.value = std::move(y);
    g.pullback = [shape = map.shape(), plane](const Tensor& up) {
      Tensor dx(shape);
      double* dst = dx.data();
      for (Eigen::Index i = 0; i < up.size(); ++i) {
        const double v = up[i] / static_cast<double>(plane);
        VecView(dst + i * plane, plane).setConstant(v);
      }
      return std::vector<Tensor>{std::move(dx)};
    };
  } else {
    std::vector<Eigen::Index> argmax(static_cast<size_t>(n) * c);
    const double* src = map.data();
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n) * c; ++i) {
      const double* p = src + i * plane;
      Eigen::Index best = 0;
      for (Eigen::Index s = 1; s < plane; ++s) {
        if (p[s] > p[best]) best = s;  // strict: first tied index wins
      }
      y[i] = p[best];
      argmax[static_cast<size_t>(i)] = best;
    }
    g.value = std::move(y);
    g.pullback = [shape = map.shape(), plane, argmax](const Tensor& up) {
      Tensor dx(shape);
      double* dst = dx.data();
      for (Eigen::Index i = 0; i < up.size(); ++i) {
        dst[i * plane + argmax[static_cast<size_t>(i)]] = up[i];
      }
      return std::vector<Tensor>{std::move(dx)};
    };
  }
  return g;
}

namespace {

// Shared row-wise normalize; rows of length d, count r.
Grad normalize_impl(const Tensor& input, Eigen::Index rows, Eigen::Index d, double floor) {
  Tensor y(input.shape());
  std::vector<double> norms(static_cast<size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    ConstVecView v(input.data() + r * d, d);
    const double norm = v.norm();
    norms[static_cast<size_t>(r)] = norm;
    VecView(y.data() + r * d, d) = v / std::max(norm, floor);
  }
  Grad g;
  g.value = std::move(y);
  g.pullback = [input, rows, d, floor, norms](const Tensor& up) {
    Tensor dx(input.shape());
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double norm = norms[static_cast<size_t>(r)];
      if (norm <= floor) continue;  // zero-projected below the floor
      ConstVecView v(input.data() + r * d, d);
      ConstVecView g_r(up.data() + r * d, d);
      const Eigen::VectorXd unit = v / norm;
      VecView(dx.data() + r * d, d) = (g_r - unit * unit.dot(g_r)) / norm;
    }
    return std::vector<Tensor>{std::move(dx)};
  };
  return g;
}

Grad softmax_impl(const Tensor& logits, Eigen::Index rows, Eigen::Index c, double temperature) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("softmax_temp: temperature must be positive, got " +
                                std::to_string(temperature));
  }
  Tensor y(logits.shape());
  for (Eigen::Index r = 0; r < rows; ++r) {
    ConstVecView z(logits.data() + r * c, c);
    VecView p(y.data() + r * c, c);
    const double m = z.maxCoeff();
    p = ((z.array() - m) / temperature).exp();
    p /= p.sum();
  }
  Grad g;
  g.value = y;
  g.pullback = [probs = std::move(y), rows, c, temperature](const Tensor& up) {
    Tensor dz(probs.shape());
    for (Eigen::Index r = 0; r < rows; ++r) {
      ConstVecView p(probs.data() + r * c, c);
      ConstVecView g_r(up.data() + r * c, c);
      const double dot = p.dot(g_r);
      VecView(dz.data() + r * c, c) = (p.array() * (g_r.array() - dot) / temperature).matrix();
    }
    return std::vector<Tensor>{std::move(dz)};
  };
  return g;
}

}  // namespace

Grad l2_normalize(const Tensor& v, double floor) {
  require(v.rank() == 1, "l2_normalize: input must be rank 1, got " + shape_str(v.shape()));
  return normalize_impl(v, 1, v.size(), floor);
}

Grad l2_normalize_rows(const Tensor& m, double floor) {
  require(m.rank() == 2, "l2_normalize_rows: input must be rank 2, got " + shape_str(m.shape()));
  return normalize_impl(m, m.dim(0), m.dim(1), floor);
}

Grad softmax_temp(const Tensor& logits, double temperature) {
  require(logits.rank() == 1, "softmax_temp: input must be rank 1, got " + shape_str(logits.shape()));
  return softmax_impl(logits, 1, logits.size(), temperature);
}

Grad softmax_temp_rows(const Tensor& logits, double temperature) {
  require(logits.rank() == 2,
          "softmax_temp_rows: input must be rank 2, got " + shape_str(logits.shape()));
  return softmax_impl(logits, logits.dim(0), logits.dim(1), temperature);
}

Grad matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: inputs must be rank 2");
  require(a.dim(1) == b.dim(0), "matmul: inner extents disagree, a axis 1 (=" +
                                    std::to_string(a.dim(1)) + ") vs b axis 0 (=" +
                                    std::to_string(b.dim(0)) + ")");
  Tensor y({a.dim(0), b.dim(1)});
  y.matrix() = a.matrix() * b.matrix();
  Grad g;
  g.value = std::move(y);
  g.pullback = [a, b](const Tensor& up) {
    Tensor da(a.shape()), db(b.shape());
    da.matrix() = up.matrix() * b.matrix().transpose();
    db.matrix() = a.matrix().transpose() * up.matrix();
    return std::vector<Tensor>{std::move(da), std::move(db)};
  };
  return g;
}

Grad layer_apply(LayerKind kind, const std::vector<Tensor>& params, const Tensor& input) {
  switch (kind) {
    case LayerKind::Linear:
      require(params.size() == 2, "linear: expected params {weight, bias}");
      return linear(input, params[0], params[1]);
    case LayerKind::Conv2d:
      require(params.size() == 1, "conv2d: expected params {kernel}");
      return conv2d(input, params[0], 1, Padding::Same);
    case LayerKind::Relu:
      require(params.empty(), "relu: takes no params");
      return relu(input);
    case LayerKind::BiasAdd:
      require(params.size() == 1, "bias-add: expected params {bias}");
      return bias_add(input, params[0]);
    case LayerKind::Concat: {
      std::vector<Tensor> parts{input};
      parts.insert(parts.end(), params.begin(), params.end());
      return concat(parts, 1);
    }
  }
  throw std::invalid_argument("layer_apply: unknown layer kind");
}

double grad_check(const GradOp& op, const std::vector<Tensor>& point, double step, RngStream& rng) {
  if (!(step > 0.0 && step < 1.0)) {
    throw std::invalid_argument("grad_check: step must lie in (0, 1)");
  }
  Grad at_point = op(point);
  Tensor upstream(at_point.value.shape());
  for (Eigen::Index i = 0; i < upstream.size(); ++i) upstream[i] = rng.normal();
  const std::vector<Tensor> analytic = at_point.pullback(upstream);

  auto scalar_of = [&](const std::vector<Tensor>& x) {
    return (op(x).value.array() * upstream.array()).sum();
  };

  double worst = 0.0;
  for (size_t t = 0; t < point.size(); ++t) {
    std::vector<Tensor> probe = point;
    for (Eigen::Index i = 0; i < point[t].size(); ++i) {
      const double saved = probe[t][i];
      probe[t][i] = saved + step;
      const double hi = scalar_of(probe);
      probe[t][i] = saved - step;
      const double lo = scalar_of(probe);
      probe[t][i] = saved;
      const double numeric = (hi - lo) / (2.0 * step);
      const double a = analytic[t][i];
      const double scale = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
  }
  return worst;
}

}  // namespace mlwc
