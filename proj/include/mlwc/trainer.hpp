#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlwc/dataset.hpp"
#include "mlwc/model.hpp"

namespace mlwc {

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
  int batch_size = 32;
  double stage1_lr = 0.1;
  int stage1_lr_decay_epochs = 20;  // divide by 10 this often
  double stage1_lr_decay = 0.1;
  int stage1_max_epochs = 60;
  double stage2_lr = 0.01;
  int stage2_max_epochs = 40;
  double momentum = 0.9;
  int plateau_window = 3;  // epochs without an epsilon improvement that end a stage
  std::uint64_t seed = 7;
  LossConfig loss;

  void validate() const;
};

struct EpochRecord {
  int stage = 0;
  int epoch = 0;
  double lr = 0.0;
  std::array<double, kLevelCount> loss_cs{};
  std::array<double, kLevelCount> loss_cen{};
  std::array<double, kLevelCount> train_acc{};
  double val_objective = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  static std::string tsv_header();
  void write_tsv(std::ostream& os) const;
};

/// Minibatch SGD with momentum on all parameters under the summed cosine
/// softmax losses. Stops when the validation objective fails to improve by
/// loss.epsilon for plateau_window consecutive epochs, or at max epochs.
/// Deterministic given the seed.
TrainLog train_stage1(Model& model, const DatasetPair& data, const TrainConfig& config);

/// Deep constant copies of every branch's classifier weights.
FrozenWeights freeze_weights(const Model& model);

/// Fine-tunes the feature extractors only: classification and centric terms
/// both use the frozen weights; classifier weights and scales do not move.
TrainLog train_stage2(Model& model, const FrozenWeights& frozen, const DatasetPair& data,
                      const TrainConfig& config);

/// Per-branch accuracy of the cosine classifiers on a dataset.
std::array<double, kLevelCount> branch_accuracy(const Model& model, const LabeledDataset& data,
                                                int batch_size = 64);

/// Embeddings of every image in `data`, per branch, batched.
std::array<Tensor, kLevelCount> extract_features(const Model& model,
                                                 const std::vector<Tensor>& images,
                                                 int batch_size = 64);

}  // namespace mlwc
