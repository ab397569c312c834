#pragma once

#include <array>
#include <vector>

#include "mlwc/ops.hpp"
#include "mlwc/tensor.hpp"

namespace mlwc {

enum class Level { Mid = 0, High = 1, Relation = 2 };
inline constexpr int kLevelCount = 3;
inline constexpr std::array<Level, 3> kLevels{Level::Mid, Level::High, Level::Relation};
const char* level_name(Level level);

struct LossConfig {
  double lambda = 1e-4;      // weight-regularization coefficient
  double epsilon = 1e-3;     // stage-switch plateau tolerance
  double centric_weight = 1.0;

  void validate() const;
};

/// Per-branch classifier weights captured at the end of stage 1; constant
/// afterwards.
struct FrozenWeights {
  std::array<Tensor, kLevelCount> weights;
};

/// Mean over the batch of -log softmax(logits)[label]. The gradient fields of
/// these loss results are the pullbacks evaluated at upstream 1.
struct SoftmaxLossGrad {
  double value = 0.0;
  Tensor d_logits;
};
SoftmaxLossGrad softmax_loss(const Tensor& logits, const std::vector<int>& labels);

/// Cross-entropy over scaled cosine logits plus lambda * ||W||_F^2.
struct CosineSoftmaxGrad {
  double value = 0.0;
  Tensor d_features;
  Tensor d_weights;
  double d_scale = 0.0;
};
CosineSoftmaxGrad cosine_softmax_loss(const Tensor& features, const Tensor& weights, double scale,
                                      const std::vector<int>& labels, double lambda);

/// Mean over the batch of ||normalize(f) - normalize(w*_y)||^2; the frozen
/// weights are constant, so only the feature gradient exists.
struct WeightCentricGrad {
  double value = 0.0;
  Tensor d_features;
};
WeightCentricGrad weight_centric_loss(const Tensor& features, const Tensor& frozen_weights,
                                      const std::vector<int>& labels);

/// Stage 1: sum of the three branch cosine softmax losses. Stage 2 adds
/// centric_weight times the three weight-centric terms against the frozen
/// weights. Arrays are indexed by Level.
struct CombinedCost {
  double value = 0.0;
  std::array<double, kLevelCount> cs{};
  std::array<double, kLevelCount> cen{};
  std::array<Tensor, kLevelCount> d_features;
  std::array<Tensor, kLevelCount> d_weights;
  std::array<double, kLevelCount> d_scale{};
};
CombinedCost combined_cost(const std::array<Tensor, kLevelCount>& features,
                           const std::array<Tensor, kLevelCount>& weights,
                           const std::array<double, kLevelCount>& scales,
                           const std::vector<int>& labels, const FrozenWeights* frozen,
                           const LossConfig& config, int stage);

}  // namespace mlwc
