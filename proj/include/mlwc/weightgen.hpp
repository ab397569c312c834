#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mlwc/netpbm.hpp"
#include "mlwc/ops.hpp"
#include "mlwc/rng.hpp"

namespace mlwc {

/// Support features for weight generation: one [k, d] matrix per novel class,
/// in label order.
struct SupportSet {
  int k = 0;
  std::vector<Tensor> features;
  std::vector<std::string> class_names;
};

/// w = normalize(mean_i normalize(f_i)) per class: per-sample normalization
/// first, then prototype normalization. Throws DataError naming the class when
/// the prototype degenerates (norm below the floor).
std::vector<Tensor> avg_gen(const SupportSet& support);

struct AttGenParams {
  Tensor phi_avg;     // [d] gate on the averaged prototype
  Tensor phi_att;     // [d] gate on the attended base-weight mix
  Tensor phi_q;       // [d,d] query transform
  Tensor keys;        // [K_b, d], one learnable key per base class
  Tensor attn_scale;  // {1}; multiplies cosine scores before the softmax
};

/// phi_avg = 1 and phi_att = 0 (the averaged path), phi_q = identity, keys
/// initialized to the unit base columns, attention scale 10.
AttGenParams att_gen_init(const Tensor& base_weights_unit, RngStream& rng);

struct AttGenResult {
  std::vector<Tensor> weights;    // per class, unit length
  std::vector<Tensor> attention;  // per class [k, n_active], rows sum to 1
};

struct AttGenGrads {
  Tensor phi_avg, phi_att, phi_q, keys, attn_scale;
};

/// w = normalize(phi_avg . w_avg + phi_att . (1/k) sum_i sum_b Att(q_i, k_b) w_b)
/// with Att the attention-scaled cosine softmax over the active base indices
/// (all of them when `active` is empty). base_weights_unit must carry
/// unit-normalized columns. The pullback maps per-class weight gradients to
/// parameter gradients; support features are treated as constants.
struct AttGenForward {
  AttGenResult result;
  std::function<AttGenGrads(const std::vector<Tensor>&)> pullback;
};
AttGenForward att_gen_forward(const SupportSet& support, const Tensor& base_weights_unit,
                              const AttGenParams& params, const std::vector<int>& active = {});

AttGenResult att_gen(const SupportSet& support, const Tensor& base_weights_unit,
                     const AttGenParams& params, const std::vector<int>& active = {});

struct AttGenTrainConfig {
  int episodes = 400;
  int way = 5;
  std::vector<int> shots{1, 2, 5};
  int queries_per_class = 5;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 99;

  void validate() const;
};

/// Episodic training on base classes with a frozen feature extractor: each
/// episode picks `way` fake-novel classes, generates their weights from k
/// support features, and minimizes query cross-entropy against those columns.
/// Attention runs over the remaining base classes only. Deterministic given
/// the seed.
AttGenParams att_gen_train(const Tensor& base_features, const std::vector<int>& labels,
                           const Tensor& base_weights, double scale, AttGenParams params,
                           const AttGenTrainConfig& config);

enum class GeneratorKind { Avg, Att };

/// Mean fake-novel episode accuracy of a generator over `episodes` draws;
/// the shared harness for comparing AvgGen and a trained AttGen.
double fake_novel_accuracy(const Tensor& base_features, const std::vector<int>& labels,
                           const Tensor& base_weights, double scale, GeneratorKind kind,
                           const AttGenParams* params, const AttGenTrainConfig& config,
                           std::uint64_t eval_seed);

}  // namespace mlwc
