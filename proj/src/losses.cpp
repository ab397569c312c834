#include "mlwc/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mlwc/heads.hpp"

namespace mlwc {

const char* level_name(Level level) {
  switch (level) {
    case Level::Mid: return "mid";
    case Level::High: return "high";
    case Level::Relation: return "relation";
  }
  return "?";
}

void LossConfig::validate() const {
  if (lambda < 0.0) throw std::invalid_argument("losses: lambda must be >= 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("losses: epsilon must be positive");
}

namespace {

void check_labels(const std::vector<int>& labels, int n_rows, int n_classes) {
  if (static_cast<int>(labels.size()) != n_rows) {
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n_rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= n_classes) {
      throw std::out_of_range("loss: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(n_classes) + ")");
    }
  }
}

/// Column-wise l2 normalization of a [d,c] matrix with the shared floor rule.
struct ColumnNormalize {
  Tensor unit;                // normalized columns
  std::vector<double> norms;  // per column

  explicit ColumnNormalize(const Tensor& w) : unit(w.shape()) {
    auto src = w.matrix();
    auto dst = unit.matrix();
    norms.resize(static_cast<size_t>(w.dim(1)));
    for (int j = 0; j < w.dim(1); ++j) {
      const double norm = src.col(j).norm();
      norms[static_cast<size_t>(j)] = norm;
      dst.col(j) = src.col(j) / std::max(norm, kNormFloor);
    }
  }

  Tensor pullback(const Tensor& w, const Tensor& upstream) const {
    Tensor dw(w.shape());
    auto src = w.matrix();
    auto up = upstream.matrix();
    auto out = dw.matrix();
    for (int j = 0; j < w.dim(1); ++j) {
      const double norm = norms[static_cast<size_t>(j)];
      if (norm <= kNormFloor) continue;
      const Eigen::VectorXd u = src.col(j) / norm;
      out.col(j) = (up.col(j) - u * u.dot(up.col(j))) / norm;
    }
    return dw;
  }
};

/// Softmax cross-entropy over [N,c] logits; returns mean loss and d_logits.
SoftmaxLossGrad cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const int n = logits.dim(0), c = logits.dim(1);
  SoftmaxLossGrad out;
  out.d_logits = Tensor(logits.shape());
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    ConstVecView z(logits.data() + static_cast<Eigen::Index>(r) * c, c);
    VecView d(out.d_logits.data() + static_cast<Eigen::Index>(r) * c, c);
    const double m = z.maxCoeff();
    const Eigen::ArrayXd e = (z.array() - m).exp();
    const double sum = e.sum();
    total += std::log(sum) + m - z[labels[static_cast<size_t>(r)]];
    d = (e / sum).matrix() / n;
    d[labels[static_cast<size_t>(r)]] -= 1.0 / n;
  }
  out.value = total / n;
  return out;
}

}  // namespace

SoftmaxLossGrad softmax_loss(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_loss: logits must be [N,c], got " + shape_str(logits.shape()));
  }
  check_labels(labels, logits.dim(0), logits.dim(1));
  return cross_entropy(logits, labels);
}

CosineSoftmaxGrad cosine_softmax_loss(const Tensor& features, const Tensor& weights, double scale,
                                      const std::vector<int>& labels, double lambda) {
  if (features.rank() != 2 || weights.rank() != 2 || features.dim(1) != weights.dim(0)) {
    throw ShapeError("cosine_softmax_loss: features " + shape_str(features.shape()) +
                     " incompatible with weights " + shape_str(weights.shape()));
  }
  if (!(scale > 0.0)) {
    throw std::invalid_argument("cosine_softmax_loss: scale must be positive, got " +
                                std::to_string(scale));
  }
  if (lambda < 0.0) throw std::invalid_argument("cosine_softmax_loss: lambda must be >= 0");
  const int n = features.dim(0), c = weights.dim(1);
  check_labels(labels, n, c);

  Grad unit_features = l2_normalize_rows(features);
  ColumnNormalize unit_weights(weights);

  Tensor cosines({n, c});
  cosines.matrix() = unit_features.value.matrix() * unit_weights.unit.matrix();
  Tensor logits(cosines.shape(), scale * cosines.array());

  SoftmaxLossGrad ce = cross_entropy(logits, labels);

  CosineSoftmaxGrad out;
  out.value = ce.value + lambda * weights.array().square().sum();
  out.d_scale = (cosines.array() * ce.d_logits.array()).sum();

  Tensor d_cos(cosines.shape(), scale * ce.d_logits.array());
  Tensor d_unit_f(features.shape());
  d_unit_f.matrix() = d_cos.matrix() * unit_weights.unit.matrix().transpose();
  Tensor d_unit_w(weights.shape());
  d_unit_w.matrix() = unit_features.value.matrix().transpose() * d_cos.matrix();

  out.d_features = unit_features.pullback(d_unit_f)[0];
  out.d_weights = unit_weights.pullback(weights, d_unit_w);
  out.d_weights.array() += 2.0 * lambda * weights.array();
  return out;
}

WeightCentricGrad weight_centric_loss(const Tensor& features, const Tensor& frozen_weights,
                                      const std::vector<int>& labels) {
  if (features.rank() != 2 || frozen_weights.rank() != 2 ||
      features.dim(1) != frozen_weights.dim(0)) {
    throw ShapeError("weight_centric_loss: features " + shape_str(features.shape()) +
                     " incompatible with frozen weights " + shape_str(frozen_weights.shape()));
  }
  const int n = features.dim(0);
  check_labels(labels, n, frozen_weights.dim(1));

  Grad unit_features = l2_normalize_rows(features);
  const Tensor unit_frozen = normalize_columns(frozen_weights);

  WeightCentricGrad out;
  Tensor d_unit(features.shape());
  auto f = unit_features.value.matrix();
  auto w = unit_frozen.matrix();
  auto du = d_unit.matrix();
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    const Eigen::VectorXd diff = f.row(r).transpose() - w.col(labels[static_cast<size_t>(r)]);
    total += diff.squaredNorm();
    du.row(r) = (2.0 / n) * diff.transpose();
  }
  out.value = total / n;
  out.d_features = unit_features.pullback(d_unit)[0];
  return out;
}

CombinedCost combined_cost(const std::array<Tensor, kLevelCount>& features,
                           const std::array<Tensor, kLevelCount>& weights,
                           const std::array<double, kLevelCount>& scales,
                           const std::vector<int>& labels, const FrozenWeights* frozen,
                           const LossConfig& config, int stage) {
  config.validate();
  if (stage != 1 && stage != 2) {
    throw std::invalid_argument("combined_cost: stage must be 1 or 2, got " + std::to_string(stage));
  }
  if (stage == 2 && frozen == nullptr) {
    throw std::invalid_argument("combined_cost: stage 2 requires frozen weights");
  }
  CombinedCost out;
  for (int b = 0; b < kLevelCount; ++b) {
    const auto bi = static_cast<size_t>(b);
    CosineSoftmaxGrad cs =
        cosine_softmax_loss(features[bi], weights[bi], scales[bi], labels, config.lambda);
    out.cs[bi] = cs.value;
    out.value += cs.value;
    out.d_features[bi] = std::move(cs.d_features);
    out.d_weights[bi] = std::move(cs.d_weights);
    out.d_scale[bi] = cs.d_scale;
    if (stage == 2) {
      WeightCentricGrad cen = weight_centric_loss(features[bi], frozen->weights[bi], labels);
      out.cen[bi] = cen.value;
      out.value += config.centric_weight * cen.value;
      out.d_features[bi].array() += config.centric_weight * cen.d_features.array();
    }
  }
  return out;
}

}  // namespace mlwc
