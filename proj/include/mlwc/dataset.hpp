#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mlwc/netpbm.hpp"
#include "mlwc/rng.hpp"
#include "mlwc/tensor.hpp"

namespace mlwc {

enum class DatasetRole { Base, Novel };

struct LabeledDataset {
  std::vector<Tensor> images;  // [C,H,W], values in [0,1]
  std::vector<int> labels;
  std::vector<std::string> label_space;  // class names, index order
  DatasetRole role = DatasetRole::Base;

  int class_count() const { return static_cast<int>(label_space.size()); }
  std::vector<int> indices_of_class(int label) const;
};

/// Base and novel label spaces are disjoint; train/test of one role share a
/// label space and are sample-disjoint.
struct DatasetPair {
  LabeledDataset base_train;
  LabeledDataset base_test;
  LabeledDataset novel_train_pool;
  LabeledDataset novel_test;
};

struct SynthSpec {
  int image_size = 32;
  int channels = 1;
  int n_base_classes = 8;
  int n_novel_classes = 8;
  int samples_per_class = 40;       // per class in train / pool splits
  int test_samples_per_class = 20;  // per class in test splits
  double noise_sigma = 0.05;
  std::uint64_t seed = 7;
  // Draw novel archetypes from a shifted motif pool instead of the base pool.
  bool novel_family_shift = false;
};

/// Deterministic synthetic dataset. Each class archetype pairs a local motif
/// (small oriented texture patch stamped at jittered positions) with a global
/// layout (coarse intensity gradient plus background level); samples add
/// clipped Gaussian pixel noise. Base and novel archetypes are drawn without
/// replacement from one pool of at least 64.
DatasetPair synth_generate(const SynthSpec& spec);

/// Number of distinct archetypes per motif family.
int synth_archetype_count();

/// Loads root/{base,novel}/{train,test}/<class-name>/*.{ppm,pgm}. Class names
/// are sorted lexicographically to fix label indices.
DatasetPair load_image_dir(const std::filesystem::path& root);

/// Materializes the on-disk layout read back by load_image_dir.
void save_dataset_dir(const DatasetPair& pair, const std::filesystem::path& root);

struct Episode {
  int shot_count = 0;
  std::vector<std::vector<int>> support;  // per novel class: indices into novel_train_pool
  std::vector<int> novel_queries;         // all of novel_test
  std::vector<int> base_queries;          // all of base_test
};

/// Draws exactly k support samples per novel class without replacement.
Episode sample_episode(const DatasetPair& pair, int k, RngStream& rng);

/// Uniform-position crop of `fraction` of each side.
Tensor random_crop(const Tensor& image, double fraction, RngStream& rng);

}  // namespace mlwc
