#include "mlwc/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mlwc {

void BackboneConfig::validate() const {
  if (stage_channels.empty()) throw std::invalid_argument("backbone: no stages configured");
  if (blocks_per_stage < 1) throw std::invalid_argument("backbone: blocks_per_stage must be >= 1");
  if (in_channels < 1) throw std::invalid_argument("backbone: in_channels must be >= 1");
  const int n_stages = static_cast<int>(stage_channels.size());
  for (int t : tap_stages) {
    if (t < 0 || t >= n_stages) {
      throw std::invalid_argument("backbone: tap stage " + std::to_string(t) + " out of range");
    }
    if (t == n_stages - 1) {
      throw std::invalid_argument("backbone: the last stage feeds the high-level head and "
                                  "cannot be tapped");
    }
  }
}

namespace {

Tensor fan_in_uniform(const Shape& shape, int fan_in, RngStream& rng) {
  Tensor t(shape);
  const double bound = std::sqrt(3.0 / fan_in);
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

BackboneState backbone_init(const BackboneConfig& config, RngStream& rng) {
  config.validate();
  BackboneState state;
  state.config = config;
  int in_ch = config.in_channels;
  for (int out_ch : config.stage_channels) {
    std::vector<ConvLayer> blocks;
    for (int b = 0; b < config.blocks_per_stage; ++b) {
      ConvLayer layer;
      layer.stride = b == 0 ? 2 : 1;
      const int block_in = b == 0 ? in_ch : out_ch;
      layer.kernel = fan_in_uniform({out_ch, block_in, 3, 3}, block_in * 9, rng);
      layer.bias = Tensor({out_ch});
      blocks.push_back(std::move(layer));
    }
    state.stages.push_back(std::move(blocks));
    in_ch = out_ch;
  }
  return state;
}

BackboneOut backbone_forward(const BackboneState& state, const Tensor& batch,
                             BackboneTrace* trace) {
  if (batch.rank() != 4) {
    throw ShapeError("backbone: batch must be NCHW, got " + shape_str(batch.shape()));
  }
  if (trace) {
    trace->conv.assign(state.stages.size(), {});
    trace->bias.assign(state.stages.size(), {});
    trace->act.assign(state.stages.size(), {});
  }
  BackboneOut out;
  Tensor x = batch;
  for (size_t s = 0; s < state.stages.size(); ++s) {
    for (const ConvLayer& layer : state.stages[s]) {
      Grad c = conv2d(x, layer.kernel, layer.stride, Padding::Same);
      Grad b = bias_add(c.value, layer.bias);
      Grad a = relu(b.value);
      x = a.value;
      if (trace) {
        trace->conv[s].push_back(std::move(c));
        trace->bias[s].push_back(std::move(b));
        trace->act[s].push_back(std::move(a));
      }
    }
    if (std::find(state.config.tap_stages.begin(), state.config.tap_stages.end(),
                  static_cast<int>(s)) != state.config.tap_stages.end()) {
      out.taps.push_back(x);
    }
  }
  out.final_map = std::move(x);
  return out;
}

BackboneState backbone_backward(const BackboneState& state, const BackboneTrace& trace,
                                const Tensor& d_final, const std::vector<Tensor>& d_taps) {
  if (!d_taps.empty() && d_taps.size() != state.config.tap_stages.size()) {
    throw ShapeError("backbone: expected one tap gradient per tap stage");
  }
  BackboneState grads = backbone_zeros_like(state);
  Tensor flowing = d_final;
  for (int s = static_cast<int>(state.stages.size()) - 1; s >= 0; --s) {
    if (!d_taps.empty()) {
      const auto& taps = state.config.tap_stages;
      const auto it = std::find(taps.begin(), taps.end(), s);
      if (it != taps.end()) {
        const size_t tap_idx = static_cast<size_t>(it - taps.begin());
        flowing.array() += d_taps[tap_idx].array();
      }
    }
    for (int b = static_cast<int>(state.stages[static_cast<size_t>(s)].size()) - 1; b >= 0; --b) {
      const auto si = static_cast<size_t>(s);
      const auto bi = static_cast<size_t>(b);
      Tensor d_pre_act = trace.act[si][bi].pullback(flowing)[0];
      std::vector<Tensor> d_bias = trace.bias[si][bi].pullback(d_pre_act);
      std::vector<Tensor> d_conv = trace.conv[si][bi].pullback(d_bias[0]);
      grads.stages[si][bi].bias = std::move(d_bias[1]);
      grads.stages[si][bi].kernel = std::move(d_conv[1]);
      flowing = std::move(d_conv[0]);
    }
  }
  return grads;
}

BackboneState backbone_zeros_like(const BackboneState& state) {
  BackboneState z;
  z.config = state.config;
  for (const auto& stage : state.stages) {
    std::vector<ConvLayer> blocks;
    for (const ConvLayer& layer : stage) {
      ConvLayer g;
      g.stride = layer.stride;
      g.kernel = layer.kernel.zeros_like();
      g.bias = layer.bias.zeros_like();
      blocks.push_back(std::move(g));
    }
    z.stages.push_back(std::move(blocks));
  }
  return z;
}

}  // namespace mlwc
