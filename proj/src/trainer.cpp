#include "mlwc/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mlwc {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("trainer: batch_size must be >= 1");
  if (!(stage1_lr > 0.0) || !(stage2_lr >= 0.0)) {
    throw std::invalid_argument("trainer: learning rates must be positive (stage 2 may be 0)");
  }
  if (stage1_lr_decay_epochs < 1) {
    throw std::invalid_argument("trainer: stage1_lr_decay_epochs must be >= 1");
  }
  if (!(stage1_lr_decay > 0.0)) throw std::invalid_argument("trainer: lr decay must be positive");
  if (stage1_max_epochs < 0 || stage2_max_epochs < 0) {
    throw std::invalid_argument("trainer: max epochs must be >= 0");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("trainer: momentum must lie in [0, 1)");
  }
  if (plateau_window < 1) throw std::invalid_argument("trainer: plateau_window must be >= 1");
  loss.validate();
}

std::string TrainLog::tsv_header() {
  return "stage\tepoch\tlr\tcs_mid\tcs_high\tcs_rel\tcen_mid\tcen_high\tcen_rel\t"
         "acc_mid\tacc_high\tacc_rel\tval_objective\twall_seconds";
}

void TrainLog::write_tsv(std::ostream& os) const {
  os << tsv_header() << "\n";
  for (const EpochRecord& r : epochs) {
    std::ostringstream line;
    line.precision(6);
    line << std::fixed;
    line << r.stage << "\t" << r.epoch << "\t" << r.lr;
    for (double v : r.loss_cs) line << "\t" << v;
    for (double v : r.loss_cen) line << "\t" << v;
    for (double v : r.train_acc) line << "\t" << v;
    line << "\t" << r.val_objective << "\t" << r.wall_seconds;
    os << line.str() << "\n";
  }
}

namespace {

constexpr double kScaleFloor = 1e-3;

Tensor make_batch(const std::vector<Tensor>& images, const std::vector<int>& order, size_t begin,
                  size_t end) {
  const Shape& img = images[static_cast<size_t>(order[begin])].shape();
  Tensor batch({static_cast<int>(end - begin), img[0], img[1], img[2]});
  const Eigen::Index stride = images[static_cast<size_t>(order[begin])].size();
  for (size_t i = begin; i < end; ++i) {
    const Tensor& src = images[static_cast<size_t>(order[i])];
    std::copy(src.data(), src.data() + stride, batch.data() + (i - begin) * stride);
  }
  return batch;
}

struct ParamRefs {
  std::vector<std::string> names;
  std::vector<Tensor*> tensors;
};

ParamRefs collect_params(Model& model) {
  ParamRefs refs;
  visit_params(model, [&](const std::string& name, Tensor& t) {
    refs.names.push_back(name);
    refs.tensors.push_back(&t);
  });
  return refs;
}

bool is_classifier_param(const std::string& name) { return name.rfind("classifier.", 0) == 0; }

struct BatchStats {
  std::array<double, kLevelCount> cs{};
  std::array<double, kLevelCount> cen{};
  std::array<double, kLevelCount> correct{};
  double count = 0.0;
};

void accumulate_accuracy(const Model& model, const ModelFeatures& features,
                         const std::vector<int>& labels, BatchStats& stats) {
  for (Level level : kLevels) {
    const Tensor logits = branch_logits(model.classifier(level), features.of(level));
    auto m = logits.matrix();
    int correct = 0;
    for (int r = 0; r < logits.dim(0); ++r) {
      Eigen::Index arg = 0;
      m.row(r).maxCoeff(&arg);
      if (static_cast<int>(arg) == labels[static_cast<size_t>(r)]) ++correct;
    }
    stats.correct[static_cast<size_t>(level)] += correct;
  }
}

/// Total stage objective on a dataset, batched; forward only.
double dataset_objective(const Model& model, const LabeledDataset& data,
                         const FrozenWeights* frozen, const LossConfig& loss, int stage,
                         int batch_size) {
  std::vector<int> order(data.images.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), begin + static_cast<size_t>(batch_size));
    Tensor batch = make_batch(data.images, order, begin, end);
    std::vector<int> labels;
    for (size_t i = begin; i < end; ++i) labels.push_back(data.labels[static_cast<size_t>(order[i])]);
    const ModelFeatures features = model_forward(model, batch);
    std::array<Tensor, kLevelCount> weights;
    std::array<double, kLevelCount> scales{};
    for (int b = 0; b < kLevelCount; ++b) {
      weights[static_cast<size_t>(b)] = model.classifiers[static_cast<size_t>(b)].weights;
      scales[static_cast<size_t>(b)] = model.classifiers[static_cast<size_t>(b)].scale[0];
    }
    const CombinedCost cost =
        combined_cost(features.embed, weights, scales, labels, frozen, loss, stage);
    total += cost.value * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(data.images.size());
}

TrainLog run_stage(Model& model, const DatasetPair& data, const TrainConfig& config, int stage,
                   const FrozenWeights* frozen) {
  config.validate();
  if (stage == 2 && frozen == nullptr) {
    throw std::invalid_argument("trainer: stage 2 requires frozen weights");
  }
  const LabeledDataset& train = data.base_train;
  if (train.images.empty()) throw DataError("trainer: empty base training set");

  TrainLog log;
  const int max_epochs = stage == 1 ? config.stage1_max_epochs : config.stage2_max_epochs;
  if (max_epochs == 0) return log;

  ParamRefs params = collect_params(model);
  Model velocity_store = model_zeros_like(model);
  ParamRefs velocity = collect_params(velocity_store);

  if (stage == 2) {
    // The classifier stays at the frozen snapshot for the whole stage.
    for (int b = 0; b < kLevelCount; ++b) {
      model.classifiers[static_cast<size_t>(b)].weights = frozen->weights[static_cast<size_t>(b)];
    }
  }

  double best_val = std::numeric_limits<double>::infinity();
  int stall = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    double lr = stage == 1
                    ? config.stage1_lr *
                          std::pow(config.stage1_lr_decay, epoch / config.stage1_lr_decay_epochs)
                    : config.stage2_lr;

    std::vector<int> order(train.images.size());
    std::iota(order.begin(), order.end(), 0);
    RngStream rng = RngStream::substream(config.seed,
                                         {0xE90C4, static_cast<std::uint64_t>(stage),
                                          static_cast<std::uint64_t>(epoch)});
    rng.shuffle(order);

    BatchStats stats;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(config.batch_size));
      Tensor batch = make_batch(train.images, order, begin, end);
      std::vector<int> labels;
      for (size_t i = begin; i < end; ++i) {
        labels.push_back(train.labels[static_cast<size_t>(order[i])]);
      }

      ModelTrace trace;
      const ModelFeatures features = model_forward(model, batch, &trace);

      std::array<Tensor, kLevelCount> weights;
      std::array<double, kLevelCount> scales{};
      for (int b = 0; b < kLevelCount; ++b) {
        weights[static_cast<size_t>(b)] = model.classifiers[static_cast<size_t>(b)].weights;
        scales[static_cast<size_t>(b)] = model.classifiers[static_cast<size_t>(b)].scale[0];
      }
      const CombinedCost cost =
          combined_cost(features.embed, weights, scales, labels, frozen, config.loss, stage);
      if (!std::isfinite(cost.value)) {
        throw NumericError("trainer: non-finite loss at stage " + std::to_string(stage) +
                           " epoch " + std::to_string(epoch));
      }

      Model grads = model_backward(model, trace, cost.d_features);
      for (int b = 0; b < kLevelCount; ++b) {
        grads.classifiers[static_cast<size_t>(b)].weights = cost.d_weights[static_cast<size_t>(b)];
        grads.classifiers[static_cast<size_t>(b)].scale =
            Tensor::scalar(cost.d_scale[static_cast<size_t>(b)]);
      }
      ParamRefs grad_refs = collect_params(grads);

      for (size_t p = 0; p < params.tensors.size(); ++p) {
        if (stage == 2 && is_classifier_param(params.names[p])) continue;
        Eigen::ArrayXd& v = velocity.tensors[p]->array();
        v = config.momentum * v + grad_refs.tensors[p]->array();
        params.tensors[p]->array() -= lr * v;
      }
      if (stage == 1) {
        for (BranchClassifier& cls : model.classifiers) {
          if (cls.scale[0] < kScaleFloor) cls.scale[0] = kScaleFloor;
        }
      }

      const double n = static_cast<double>(end - begin);
      for (int b = 0; b < kLevelCount; ++b) {
        stats.cs[static_cast<size_t>(b)] += cost.cs[static_cast<size_t>(b)] * n;
        stats.cen[static_cast<size_t>(b)] += cost.cen[static_cast<size_t>(b)] * n;
      }
      accumulate_accuracy(model, features, labels, stats);
      stats.count += n;
    }

    const double val =
        dataset_objective(model, data.base_test, frozen, config.loss, stage, config.batch_size);

    EpochRecord rec;
    rec.stage = stage;
    rec.epoch = epoch;
    rec.lr = lr;
    for (int b = 0; b < kLevelCount; ++b) {
      rec.loss_cs[static_cast<size_t>(b)] = stats.cs[static_cast<size_t>(b)] / stats.count;
      rec.loss_cen[static_cast<size_t>(b)] = stats.cen[static_cast<size_t>(b)] / stats.count;
      rec.train_acc[static_cast<size_t>(b)] =
          100.0 * stats.correct[static_cast<size_t>(b)] / stats.count;
    }
    rec.val_objective = val;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(rec);

    if (val < best_val - config.loss.epsilon) {
      best_val = val;
      stall = 0;
    } else {
      if (++stall >= config.plateau_window) break;
    }
  }
  return log;
}

}  // namespace

TrainLog train_stage1(Model& model, const DatasetPair& data, const TrainConfig& config) {
  return run_stage(model, data, config, 1, nullptr);
}

FrozenWeights freeze_weights(const Model& model) {
  FrozenWeights frozen;
  for (int b = 0; b < kLevelCount; ++b) {
    frozen.weights[static_cast<size_t>(b)] = model.classifiers[static_cast<size_t>(b)].weights;
  }
  return frozen;
}

TrainLog train_stage2(Model& model, const FrozenWeights& frozen, const DatasetPair& data,
                      const TrainConfig& config) {
  return run_stage(model, data, config, 2, &frozen);
}

std::array<Tensor, kLevelCount> extract_features(const Model& model,
                                                 const std::vector<Tensor>& images,
                                                 int batch_size) {
  const int n = static_cast<int>(images.size());
  const int d = model.head_cfg.embed_dim;
  std::array<Tensor, kLevelCount> out;
  for (int b = 0; b < kLevelCount; ++b) out[static_cast<size_t>(b)] = Tensor({n, d});

  std::vector<int> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t begin = 0; begin < images.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(images.size(), begin + static_cast<size_t>(batch_size));
    Tensor batch = make_batch(images, order, begin, end);
    const ModelFeatures features = model_forward(model, batch);
    for (int b = 0; b < kLevelCount; ++b) {
      const Tensor& src = features.embed[static_cast<size_t>(b)];
      std::copy(src.data(), src.data() + src.size(),
                out[static_cast<size_t>(b)].data() + static_cast<Eigen::Index>(begin) * d);
    }
  }
  return out;
}

std::array<double, kLevelCount> branch_accuracy(const Model& model, const LabeledDataset& data,
                                                int batch_size) {
  const std::array<Tensor, kLevelCount> features =
      extract_features(model, data.images, batch_size);
  std::array<double, kLevelCount> acc{};
  for (Level level : kLevels) {
    const Tensor logits = branch_logits(model.classifier(level), features[static_cast<size_t>(level)]);
    auto m = logits.matrix();
    int correct = 0;
    for (int r = 0; r < logits.dim(0); ++r) {
      Eigen::Index arg = 0;
      m.row(r).maxCoeff(&arg);
      if (static_cast<int>(arg) == data.labels[static_cast<size_t>(r)]) ++correct;
    }
    acc[static_cast<size_t>(level)] =
        100.0 * correct / static_cast<double>(std::max<size_t>(1, data.images.size()));
  }
  return acc;
}

}  // namespace mlwc
