#pragma once

#include <vector>

#include "mlwc/ops.hpp"
#include "mlwc/rng.hpp"
#include "mlwc/tensor.hpp"

namespace mlwc {

struct BackboneConfig {
  std::vector<int> stage_channels{16, 32, 64};
  int blocks_per_stage = 1;
  // Stage outputs feeding the mid-level head; the last stage feeds the
  // high-level head and is never tapped.
  std::vector<int> tap_stages{0, 1};
  bool detach_taps = true;
  int in_channels = 1;

  void validate() const;
};

struct ConvLayer {
  Tensor kernel;  // OIHW
  Tensor bias;
  int stride = 1;
};

struct BackboneState {
  BackboneConfig config;
  std::vector<std::vector<ConvLayer>> stages;  // [stage][block]
};

/// Fan-in-scaled uniform kernels, zero biases; deterministic given the stream.
BackboneState backbone_init(const BackboneConfig& config, RngStream& rng);

struct BackboneOut {
  Tensor final_map;
  std::vector<Tensor> taps;  // in tap_stages order
};

struct BackboneTrace {
  std::vector<std::vector<Grad>> conv;  // [stage][block]
  std::vector<std::vector<Grad>> bias;
  std::vector<std::vector<Grad>> act;
};

/// Each stage is conv(3x3, stride 2 on stage entry) -> bias -> relu repeated
/// blocks_per_stage times. Taps are copies of tapped stage outputs; they carry
/// no gradient back into the trunk when detach_taps is set.
BackboneOut backbone_forward(const BackboneState& state, const Tensor& batch,
                             BackboneTrace* trace = nullptr);

/// Parameter gradients for upstream gradients on the final map and on each
/// tap (tap_stages order; pass an empty vector when taps are detached).
BackboneState backbone_backward(const BackboneState& state, const BackboneTrace& trace,
                                const Tensor& d_final, const std::vector<Tensor>& d_taps);

BackboneState backbone_zeros_like(const BackboneState& state);

}  // namespace mlwc
