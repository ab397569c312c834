#include "mlwc/model.hpp"

#include <cmath>

namespace mlwc {
namespace {

Tensor fan_in_uniform(const Shape& shape, int fan_in, RngStream& rng) {
  Tensor t(shape);
  const double bound = std::sqrt(3.0 / fan_in);
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

LinearLayer linear_init(int in, int out, RngStream& rng) {
  LinearLayer l;
  l.weight = fan_in_uniform({in, out}, in, rng);
  l.bias = Tensor({out});
  return l;
}

}  // namespace

Model model_init(const BackboneConfig& trunk_cfg, const HeadConfig& head_cfg, int base_classes,
                 RngStream& rng) {
  trunk_cfg.validate();
  head_cfg.validate();
  if (base_classes < 2) throw std::invalid_argument("model: need at least 2 base classes");

  Model m;
  m.head_cfg = head_cfg;
  m.trunk = backbone_init(trunk_cfg, rng);

  const int final_channels = trunk_cfg.stage_channels.back();
  const int d = head_cfg.embed_dim;
  m.high.proj = linear_init(final_channels, d, rng);

  int mid_width = 0;
  for (int t : trunk_cfg.tap_stages) {
    const int tap_channels = trunk_cfg.stage_channels[static_cast<size_t>(t)];
    ConvLayer conv;
    conv.stride = 1;
    conv.kernel = fan_in_uniform({head_cfg.mid_channels, tap_channels, 1, 1}, tap_channels, rng);
    conv.bias = Tensor({head_cfg.mid_channels});
    m.mid.tap_convs.push_back(std::move(conv));
    mid_width += head_cfg.mid_channels;
  }
  m.mid.proj = linear_init(mid_width, d, rng);

  m.rel.fc1 = linear_init(base_classes, head_cfg.relation_hidden, rng);
  m.rel.fc2 = linear_init(head_cfg.relation_hidden, d, rng);

  for (BranchClassifier& cls : m.classifiers) {
    cls.weights = fan_in_uniform({d, base_classes}, d, rng);
    cls.scale = Tensor::scalar(head_cfg.scale_init);
  }
  return m;
}

Model model_zeros_like(const Model& model) {
  Model z;
  z.head_cfg = model.head_cfg;
  z.trunk = backbone_zeros_like(model.trunk);
  z.high.proj = {model.high.proj.weight.zeros_like(), model.high.proj.bias.zeros_like()};
  for (const ConvLayer& conv : model.mid.tap_convs) {
    z.mid.tap_convs.push_back({conv.kernel.zeros_like(), conv.bias.zeros_like(), conv.stride});
  }
  z.mid.proj = {model.mid.proj.weight.zeros_like(), model.mid.proj.bias.zeros_like()};
  z.rel.fc1 = {model.rel.fc1.weight.zeros_like(), model.rel.fc1.bias.zeros_like()};
  z.rel.fc2 = {model.rel.fc2.weight.zeros_like(), model.rel.fc2.bias.zeros_like()};
  for (int b = 0; b < kLevelCount; ++b) {
    z.classifiers[static_cast<size_t>(b)].weights =
        model.classifiers[static_cast<size_t>(b)].weights.zeros_like();
    z.classifiers[static_cast<size_t>(b)].scale =
        model.classifiers[static_cast<size_t>(b)].scale.zeros_like();
  }
  return z;
}

ModelFeatures model_forward(const Model& model, const Tensor& batch, ModelTrace* trace) {
  ModelTrace local;
  ModelTrace& t = trace ? *trace : local;

  t.trunk_out = backbone_forward(model.trunk, batch, trace ? &t.trunk : nullptr);

  t.high = high_head(model.high, t.trunk_out.final_map);
  t.mid = mid_head(model.mid, t.trunk_out.taps);

  ModelFeatures out;
  out.of(Level::High) = t.high.value;
  out.of(Level::Mid) = t.mid.value;

  // Relation input: the high branch's cosine logits, detached.
  const BranchClassifier& high_cls = model.classifier(Level::High);
  Tensor logits = branch_logits(high_cls, out.of(Level::High));
  if (model.head_cfg.relation_input == RelationInput::Unscaled) {
    logits.array() /= high_cls.scale[0];
  }
  out.high_logits = logits;

  t.rel = relation_head(model.rel, logits, model.head_cfg.relation_temperature);
  out.of(Level::Relation) = t.rel.value;
  return out;
}

Model model_backward(const Model& model, const ModelTrace& trace,
                     const std::array<Tensor, kLevelCount>& d_embed) {
  Model grads = model_zeros_like(model);

  std::vector<Tensor> d_rel = trace.rel.pullback(d_embed[static_cast<size_t>(Level::Relation)]);
  grads.rel.fc1.weight = std::move(d_rel[0]);
  grads.rel.fc1.bias = std::move(d_rel[1]);
  grads.rel.fc2.weight = std::move(d_rel[2]);
  grads.rel.fc2.bias = std::move(d_rel[3]);

  std::vector<Tensor> d_high = trace.high.pullback(d_embed[static_cast<size_t>(Level::High)]);
  grads.high.proj.weight = std::move(d_high[1]);
  grads.high.proj.bias = std::move(d_high[2]);

  std::vector<Tensor> d_mid = trace.mid.pullback(d_embed[static_cast<size_t>(Level::Mid)]);
  const size_t n_taps = model.mid.tap_convs.size();
  for (size_t t = 0; t < n_taps; ++t) {
    grads.mid.tap_convs[t].kernel = std::move(d_mid[n_taps + 2 * t]);
    grads.mid.tap_convs[t].bias = std::move(d_mid[n_taps + 2 * t + 1]);
  }
  grads.mid.proj.weight = std::move(d_mid[3 * n_taps]);
  grads.mid.proj.bias = std::move(d_mid[3 * n_taps + 1]);

  std::vector<Tensor> d_taps;
  if (!model.trunk.config.detach_taps) {
    d_taps.assign(d_mid.begin(), d_mid.begin() + static_cast<long>(n_taps));
  }
  grads.trunk = backbone_backward(model.trunk, trace.trunk, d_high[0], d_taps);
  return grads;
}

namespace {

template <typename ModelT, typename Fn>
void visit_impl(ModelT& model, const Fn& fn) {
  for (size_t s = 0; s < model.trunk.stages.size(); ++s) {
    for (size_t b = 0; b < model.trunk.stages[s].size(); ++b) {
      const std::string prefix =
          "trunk.stage" + std::to_string(s) + ".block" + std::to_string(b);
      fn(prefix + ".kernel", model.trunk.stages[s][b].kernel);
      fn(prefix + ".bias", model.trunk.stages[s][b].bias);
    }
  }
  fn("high.proj.weight", model.high.proj.weight);
  fn("high.proj.bias", model.high.proj.bias);
  for (size_t t = 0; t < model.mid.tap_convs.size(); ++t) {
    const std::string prefix = "mid.tap" + std::to_string(t);
    fn(prefix + ".kernel", model.mid.tap_convs[t].kernel);
    fn(prefix + ".bias", model.mid.tap_convs[t].bias);
  }
  fn("mid.proj.weight", model.mid.proj.weight);
  fn("mid.proj.bias", model.mid.proj.bias);
  fn("rel.fc1.weight", model.rel.fc1.weight);
  fn("rel.fc1.bias", model.rel.fc1.bias);
  fn("rel.fc2.weight", model.rel.fc2.weight);
  fn("rel.fc2.bias", model.rel.fc2.bias);
  for (Level level : kLevels) {
    const std::string prefix = std::string("classifier.") + level_name(level);
    fn(prefix + ".weights", model.classifiers[static_cast<size_t>(level)].weights);
    fn(prefix + ".scale", model.classifiers[static_cast<size_t>(level)].scale);
  }
}

}  // namespace

void visit_params(Model& model, const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_impl(model, fn);
}

void visit_params(const Model& model,
                  const std::function<void(const std::string&, const Tensor&)>& fn) {
  visit_impl(model, fn);
}

}  // namespace mlwc
