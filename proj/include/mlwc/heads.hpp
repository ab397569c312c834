#pragma once

#include <vector>

#include "mlwc/backbone.hpp"
#include "mlwc/ops.hpp"

namespace mlwc {

enum class RelationInput { Scaled, Unscaled };

struct HeadConfig {
  int embed_dim = 64;
  double relation_temperature = 4.0;
  int mid_channels = 16;     // 1x1-conv output channels per tap
  int relation_hidden = 64;  // hidden width of the relation perceptron
  RelationInput relation_input = RelationInput::Scaled;
  double scale_init = 10.0;

  void validate() const;
};

struct LinearLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct HighHead {
  LinearLayer proj;
};

struct MidHead {
  std::vector<ConvLayer> tap_convs;  // one 1x1 conv per tap
  LinearLayer proj;
};

struct RelationHead {
  LinearLayer fc1, fc2;
};

/// Cosine classifier of one branch: weight columns in R^d per base class and
/// the trainable logit scale (kept positive by the trainer's clamp).
struct BranchClassifier {
  Tensor weights;  // [d, classes]
  Tensor scale;    // shape {1}
};

/// Global-average pool then linear map to the embedding space.
/// Pullback inputs: {final_map, proj.weight, proj.bias}.
Grad high_head(const HighHead& head, const Tensor& final_map);

/// Per tap: 1x1 conv -> relu -> global-max pool; pooled vectors concatenate
/// and map linearly to the embedding space. Pullback inputs:
/// {tap_0..tap_{T-1}, conv_0.kernel, conv_0.bias, ..., proj.weight, proj.bias}.
Grad mid_head(const MidHead& head, const std::vector<Tensor>& taps);

/// Temperature-softened softmax of the (detached) high-branch logits through a
/// linear -> relu -> linear perceptron. The input is detached by contract, so
/// pullback inputs are the head parameters only:
/// {fc1.weight, fc1.bias, fc2.weight, fc2.bias}.
Grad relation_head(const RelationHead& head, const Tensor& high_logits, double temperature);

/// logit[i][j] = s * <normalize(features row i), normalize(weights col j)>.
Tensor branch_logits(const BranchClassifier& cls, const Tensor& features);

/// Weight matrix with unit-normalized columns.
Tensor normalize_columns(const Tensor& weights, double floor = kNormFloor);

}  // namespace mlwc
