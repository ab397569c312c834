#include "mlwc/heads.hpp"

#include <stdexcept>

namespace mlwc {

void HeadConfig::validate() const {
  if (embed_dim < 1) throw std::invalid_argument("heads: embed_dim must be >= 1");
  if (!(relation_temperature > 0.0)) {
    throw std::invalid_argument("heads: relation_temperature must be positive");
  }
  if (mid_channels < 1) throw std::invalid_argument("heads: mid_channels must be >= 1");
  if (relation_hidden < 1) throw std::invalid_argument("heads: relation_hidden must be >= 1");
  if (!(scale_init > 0.0)) throw std::invalid_argument("heads: scale_init must be positive");
}

Grad high_head(const HighHead& head, const Tensor& final_map) {
  Grad pooled = global_pool(final_map, PoolMode::Avg);
  Grad proj = linear(pooled.value, head.proj.weight, head.proj.bias);
  Grad out;
  out.value = proj.value;
  out.pullback = [pooled, proj](const Tensor& up) {
    std::vector<Tensor> d_proj = proj.pullback(up);
    std::vector<Tensor> d_pool = pooled.pullback(d_proj[0]);
    return std::vector<Tensor>{std::move(d_pool[0]), std::move(d_proj[1]), std::move(d_proj[2])};
  };
  return out;
}

Grad mid_head(const MidHead& head, const std::vector<Tensor>& taps) {
  if (taps.empty()) throw ShapeError("mid_head: no taps");
  if (taps.size() != head.tap_convs.size()) {
    throw ShapeError("mid_head: got " + std::to_string(taps.size()) + " taps for " +
                     std::to_string(head.tap_convs.size()) + " tap convs");
  }
  std::vector<Grad> convs, biases, acts, pools;
  std::vector<Tensor> pooled;
  for (size_t t = 0; t < taps.size(); ++t) {
    Grad c = conv2d(taps[t], head.tap_convs[t].kernel, 1, Padding::Same);
    Grad b = bias_add(c.value, head.tap_convs[t].bias);
    Grad a = relu(b.value);
    Grad p = global_pool(a.value, PoolMode::Max);
    pooled.push_back(p.value);
    convs.push_back(std::move(c));
    biases.push_back(std::move(b));
    acts.push_back(std::move(a));
    pools.push_back(std::move(p));
  }
  Grad cat = concat(pooled, 1);
  Grad proj = linear(cat.value, head.proj.weight, head.proj.bias);

  Grad out;
  out.value = proj.value;
  out.pullback = [convs, biases, acts, pools, cat, proj](const Tensor& up) {
    std::vector<Tensor> d_proj = proj.pullback(up);
    std::vector<Tensor> d_parts = cat.pullback(d_proj[0]);
    std::vector<Tensor> d_taps, d_kernels, d_biases;
    for (size_t t = 0; t < convs.size(); ++t) {
      Tensor d_act = pools[t].pullback(d_parts[t])[0];
      Tensor d_pre = acts[t].pullback(d_act)[0];
      std::vector<Tensor> d_bias = biases[t].pullback(d_pre);
      std::vector<Tensor> d_conv = convs[t].pullback(d_bias[0]);
      d_taps.push_back(std::move(d_conv[0]));
      d_kernels.push_back(std::move(d_conv[1]));
      d_biases.push_back(std::move(d_bias[1]));
    }
    std::vector<Tensor> grads = std::move(d_taps);
    for (size_t t = 0; t < d_kernels.size(); ++t) {
      grads.push_back(std::move(d_kernels[t]));
      grads.push_back(std::move(d_biases[t]));
    }
    grads.push_back(std::move(d_proj[1]));
    grads.push_back(std::move(d_proj[2]));
    return grads;
  };
  return out;
}

Grad relation_head(const RelationHead& head, const Tensor& high_logits, double temperature) {
  Grad soft = softmax_temp_rows(high_logits, temperature);
  Grad fc1 = linear(soft.value, head.fc1.weight, head.fc1.bias);
  Grad act = relu(fc1.value);
  Grad fc2 = linear(act.value, head.fc2.weight, head.fc2.bias);
  Grad out;
  out.value = fc2.value;
  out.pullback = [fc1, act, fc2](const Tensor& up) {
    std::vector<Tensor> d_fc2 = fc2.pullback(up);
    Tensor d_act = act.pullback(d_fc2[0])[0];
    std::vector<Tensor> d_fc1 = fc1.pullback(d_act);
    // The softened-logit input is detached; its gradient is dropped here.
    return std::vector<Tensor>{std::move(d_fc1[1]), std::move(d_fc1[2]), std::move(d_fc2[1]),
                               std::move(d_fc2[2])};
  };
  return out;
}

Tensor normalize_columns(const Tensor& weights, double floor) {
  if (weights.rank() != 2) {
    throw ShapeError("normalize_columns: weights must be rank 2, got " + shape_str(weights.shape()));
  }
  Tensor out(weights.shape());
  auto w = weights.matrix();
  auto o = out.matrix();
  for (int j = 0; j < weights.dim(1); ++j) {
    const double norm = w.col(j).norm();
    o.col(j) = w.col(j) / std::max(norm, floor);
  }
  return out;
}

Tensor branch_logits(const BranchClassifier& cls, const Tensor& features) {
  if (features.rank() != 2 || features.dim(1) != cls.weights.dim(0)) {
    throw ShapeError("branch_logits: features " + shape_str(features.shape()) +
                     " incompatible with weights " + shape_str(cls.weights.shape()));
  }
  const Tensor unit_features = l2_normalize_rows(features).value;
  const Tensor unit_weights = normalize_columns(cls.weights);
  Tensor logits({features.dim(0), cls.weights.dim(1)});
  logits.matrix() = cls.scale[0] * (unit_features.matrix() * unit_weights.matrix());
  return logits;
}

}  // namespace mlwc
