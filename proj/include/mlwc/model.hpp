#pragma once

#include <array>
#include <functional>
#include <string>

#include "mlwc/backbone.hpp"
#include "mlwc/heads.hpp"
#include "mlwc/losses.hpp"

namespace mlwc {

/// The three-branch base model: shared trunk, one feature extractor per level,
/// one cosine classifier per level.
struct Model {
  HeadConfig head_cfg;
  BackboneState trunk;  // carries BackboneConfig
  HighHead high;
  MidHead mid;
  RelationHead rel;
  std::array<BranchClassifier, kLevelCount> classifiers;

  const BranchClassifier& classifier(Level level) const {
    return classifiers[static_cast<size_t>(level)];
  }
  BranchClassifier& classifier(Level level) { return classifiers[static_cast<size_t>(level)]; }
};

Model model_init(const BackboneConfig& trunk_cfg, const HeadConfig& head_cfg, int base_classes,
                 RngStream& rng);

/// Same structure with every parameter tensor zeroed; used for gradient and
/// momentum accumulators.
Model model_zeros_like(const Model& model);

struct ModelFeatures {
  std::array<Tensor, kLevelCount> embed;  // [N,d] per level
  Tensor high_logits;                     // relation-head input (detached)

  const Tensor& of(Level level) const { return embed[static_cast<size_t>(level)]; }
  Tensor& of(Level level) { return embed[static_cast<size_t>(level)]; }
};

struct ModelTrace {
  BackboneTrace trunk;
  BackboneOut trunk_out;
  Grad high;
  Grad mid;
  Grad rel;
};

/// Runs the trunk and all three heads. The relation head consumes the high
/// branch's cosine logits as a detached value (scaled by s or not, per
/// HeadConfig::relation_input).
ModelFeatures model_forward(const Model& model, const Tensor& batch, ModelTrace* trace = nullptr);

/// Backpropagates per-branch embedding gradients into every trunk and head
/// parameter. Classifier gradients are produced by the losses, not here.
Model model_backward(const Model& model, const ModelTrace& trace,
                     const std::array<Tensor, kLevelCount>& d_embed);

/// Visits every trainable tensor with a stable dotted name; the order is fixed
/// and shared between a model and its zeros_like companions.
void visit_params(Model& model, const std::function<void(const std::string&, Tensor&)>& fn);
void visit_params(const Model& model,
                  const std::function<void(const std::string&, const Tensor&)>& fn);

}  // namespace mlwc
