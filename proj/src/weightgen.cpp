#include "mlwc/weightgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mlwc/trainer.hpp"

namespace mlwc {

std::vector<Tensor> avg_gen(const SupportSet& support) {
  if (support.features.empty()) throw DataError("avg_gen: empty support set");
  std::vector<Tensor> weights;
  for (size_t cls = 0; cls < support.features.size(); ++cls) {
    const Tensor& f = support.features[cls];
    if (f.rank() != 2) throw ShapeError("avg_gen: per-class features must be [k,d]");
    const Tensor unit = l2_normalize_rows(f).value;
    Eigen::VectorXd proto = unit.matrix().colwise().mean();
    const double norm = proto.norm();
    if (norm < kNormFloor) {
      const std::string name = cls < support.class_names.size()
                                   ? support.class_names[cls]
                                   : "#" + std::to_string(cls);
      throw DataError("avg_gen: degenerate prototype for class " + name);
    }
    Tensor w({f.dim(1)});
    w.vec() = proto / norm;
    weights.push_back(std::move(w));
  }
  return weights;
}

AttGenParams att_gen_init(const Tensor& base_weights_unit, RngStream& rng) {
  if (base_weights_unit.rank() != 2) {
    throw ShapeError("att_gen_init: base weights must be [d,c]");
  }
  (void)rng;  // reserved for key-count overrides; the default init is data-driven
  const int d = base_weights_unit.dim(0), c = base_weights_unit.dim(1);
  AttGenParams p;
  p.phi_avg = Tensor::full({d}, 1.0);
  p.phi_att = Tensor({d});
  p.phi_q = Tensor({d, d});
  p.phi_q.matrix() = Eigen::MatrixXd::Identity(d, d);
  p.keys = Tensor({c, d});
  p.keys.matrix() = base_weights_unit.matrix().transpose();
  p.attn_scale = Tensor::scalar(10.0);
  return p;
}

namespace {

struct ClassContext {
  Tensor unit_support;  // [k,d]
  Eigen::VectorXd w_avg;
  Eigen::MatrixXd q;       // [k,d] query vectors
  std::vector<double> q_norm;
  Eigen::MatrixXd cosines;  // [k,n_active]
  Eigen::MatrixXd attn;     // [k,n_active]
  Eigen::VectorXd attended;  // [d]
  Eigen::VectorXd u;         // pre-normalization combination
  double u_norm = 0.0;
};

}  // namespace

AttGenForward att_gen_forward(const SupportSet& support, const Tensor& base_weights_unit,
                              const AttGenParams& params, const std::vector<int>& active_in) {
  if (base_weights_unit.rank() != 2) {
    throw ShapeError("att_gen: base weights must be [d,c]");
  }
  const int d = base_weights_unit.dim(0);
  const int c = base_weights_unit.dim(1);
  if (params.phi_avg.size() != d || params.phi_att.size() != d) {
    throw ShapeError("att_gen: gate dimension does not match feature dimension " +
                     std::to_string(d));
  }
  if (params.phi_q.rank() != 2 || params.phi_q.dim(0) != d || params.phi_q.dim(1) != d) {
    throw ShapeError("att_gen: phi_q must be [d,d]");
  }
  if (params.keys.rank() != 2 || params.keys.dim(0) != c || params.keys.dim(1) != d) {
    throw ShapeError("att_gen: keys must be [base classes, d], got " +
                     shape_str(params.keys.shape()));
  }

  std::vector<int> active = active_in;
  if (active.empty()) {
    active.resize(static_cast<size_t>(c));
    std::iota(active.begin(), active.end(), 0);
  }
  const int n_active = static_cast<int>(active.size());
  if (n_active < 1) throw ShapeError("att_gen: no active base classes");

  // Unit keys for the active base set.
  Eigen::MatrixXd key_unit(n_active, d);
  std::vector<double> key_norm(static_cast<size_t>(n_active));
  for (int b = 0; b < n_active; ++b) {
    const Eigen::VectorXd row =
        params.keys.matrix().row(active[static_cast<size_t>(b)]).transpose();
    const double norm = row.norm();
    key_norm[static_cast<size_t>(b)] = norm;
    key_unit.row(b) = (row / std::max(norm, kNormFloor)).transpose();
  }
  Eigen::MatrixXd w_active(d, n_active);
  for (int b = 0; b < n_active; ++b) {
    w_active.col(b) = base_weights_unit.matrix().col(active[static_cast<size_t>(b)]);
  }

  const double gamma = params.attn_scale[0];
  auto contexts = std::make_shared<std::vector<ClassContext>>();
  AttGenForward out;

  for (size_t cls = 0; cls < support.features.size(); ++cls) {
    const Tensor& f = support.features[cls];
    if (f.rank() != 2 || f.dim(1) != d) {
      throw ShapeError("att_gen: class " + std::to_string(cls) + " features " +
                       shape_str(f.shape()) + " do not match dimension " + std::to_string(d));
    }
    const int k = f.dim(0);
    ClassContext ctx;
    ctx.unit_support = l2_normalize_rows(f).value;
    ctx.w_avg = ctx.unit_support.matrix().colwise().mean();

    ctx.q = ctx.unit_support.matrix() * params.phi_q.matrix().transpose();
    ctx.q_norm.resize(static_cast<size_t>(k));
    ctx.cosines.resize(k, n_active);
    for (int i = 0; i < k; ++i) {
      const double qn = ctx.q.row(i).norm();
      ctx.q_norm[static_cast<size_t>(i)] = qn;
      ctx.cosines.row(i) = (key_unit * ctx.q.row(i).transpose() / std::max(qn, kNormFloor)).transpose();
    }

    ctx.attn.resize(k, n_active);
    for (int i = 0; i < k; ++i) {
      const Eigen::ArrayXd scores = gamma * ctx.cosines.row(i).transpose().array();
      const Eigen::ArrayXd e = (scores - scores.maxCoeff()).exp();
      ctx.attn.row(i) = (e / e.sum()).matrix().transpose();
    }

    ctx.attended = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < k; ++i) {
      ctx.attended += w_active * ctx.attn.row(i).transpose();
    }
    ctx.attended /= static_cast<double>(k);

    ctx.u = params.phi_avg.vec().cwiseProduct(ctx.w_avg) +
            params.phi_att.vec().cwiseProduct(ctx.attended);
    ctx.u_norm = ctx.u.norm();

    Tensor w({d});
    w.vec() = ctx.u / std::max(ctx.u_norm, kNormFloor);
    out.result.weights.push_back(std::move(w));

    Tensor attn({k, n_active});
    attn.matrix() = ctx.attn;
    out.result.attention.push_back(std::move(attn));
    contexts->push_back(std::move(ctx));
  }

  out.pullback = [contexts, params, key_unit, key_norm, w_active, active, gamma,
                  d](const std::vector<Tensor>& d_weights) {
    AttGenGrads g;
    g.phi_avg = params.phi_avg.zeros_like();
    g.phi_att = params.phi_att.zeros_like();
    g.phi_q = params.phi_q.zeros_like();
    g.keys = params.keys.zeros_like();
    g.attn_scale = params.attn_scale.zeros_like();
    if (d_weights.size() != contexts->size()) {
      throw ShapeError("att_gen pullback: one gradient per generated class required");
    }

    auto d_phi_q = g.phi_q.matrix();
    auto d_keys = g.keys.matrix();
    double d_gamma = 0.0;

    for (size_t cls = 0; cls < contexts->size(); ++cls) {
      const ClassContext& ctx = (*contexts)[cls];
      const int k = static_cast<int>(ctx.unit_support.dim(0));
      const Eigen::VectorXd g_w = d_weights[cls].vec();

      Eigen::VectorXd g_u = Eigen::VectorXd::Zero(d);
      if (ctx.u_norm > kNormFloor) {
        const Eigen::VectorXd unit = ctx.u / ctx.u_norm;
        g_u = (g_w - unit * unit.dot(g_w)) / ctx.u_norm;
      }

      g.phi_avg.vec() += g_u.cwiseProduct(ctx.w_avg);
      g.phi_att.vec() += g_u.cwiseProduct(ctx.attended);
      const Eigen::VectorXd g_t = g_u.cwiseProduct(params.phi_att.vec());

      for (int i = 0; i < k; ++i) {
        // d attended_i arrives scaled by 1/k.
        const Eigen::VectorXd g_att = g_t / static_cast<double>(k);
        const Eigen::VectorXd d_a = w_active.transpose() * g_att;
        const Eigen::VectorXd a = ctx.attn.row(i).transpose();
        const Eigen::VectorXd d_h = a.cwiseProduct(d_a - Eigen::VectorXd::Constant(a.size(), a.dot(d_a)));
        d_gamma += d_h.dot(ctx.cosines.row(i).transpose());
        const Eigen::VectorXd d_c = gamma * d_h;

        const double qn = ctx.q_norm[static_cast<size_t>(i)];
        if (qn > kNormFloor) {
          const Eigen::VectorXd q_unit = ctx.q.row(i).transpose() / qn;
          Eigen::VectorXd d_q = Eigen::VectorXd::Zero(d);
          for (int b = 0; b < static_cast<int>(active.size()); ++b) {
            d_q += d_c[b] *
                   (key_unit.row(b).transpose() - ctx.cosines(i, b) * q_unit) / qn;
          }
          d_phi_q += d_q * ctx.unit_support.matrix().row(i);
        }
        for (int b = 0; b < static_cast<int>(active.size()); ++b) {
          const double kn = key_norm[static_cast<size_t>(b)];
          if (kn <= kNormFloor || qn <= kNormFloor) continue;
          const Eigen::VectorXd q_unit = ctx.q.row(i).transpose() / qn;
          d_keys.row(active[static_cast<size_t>(b)]) +=
              (d_c[b] * (q_unit - ctx.cosines(i, b) * key_unit.row(b).transpose()) / kn)
                  .transpose();
        }
      }
    }
    g.attn_scale[0] = d_gamma;
    return g;
  };
  return out;
}

AttGenResult att_gen(const SupportSet& support, const Tensor& base_weights_unit,
                     const AttGenParams& params, const std::vector<int>& active) {
  return att_gen_forward(support, base_weights_unit, params, active).result;
}

void AttGenTrainConfig::validate() const {
  if (episodes < 0) throw std::invalid_argument("attgen: episodes must be >= 0");
  if (way < 2) throw std::invalid_argument("attgen: way must be >= 2");
  if (shots.empty()) throw std::invalid_argument("attgen: shots must not be empty");
  for (int k : shots) {
    if (k < 1) throw std::invalid_argument("attgen: every shot count must be >= 1");
  }
  if (queries_per_class < 1) throw std::invalid_argument("attgen: queries_per_class must be >= 1");
  if (!(lr >= 0.0)) throw std::invalid_argument("attgen: lr must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("attgen: momentum must lie in [0, 1)");
  }
}

namespace {

struct FakeEpisode {
  std::vector<int> classes;               // fake-novel class ids
  int k = 0;                              // shot count for this episode
  std::vector<std::vector<int>> support;  // per class: feature row indices
  std::vector<int> query_rows;
  std::vector<int> query_labels;  // episode-local
};

FakeEpisode sample_fake_episode(const std::vector<std::vector<int>>& by_class,
                                const AttGenTrainConfig& config, RngStream& rng) {
  const int n_classes = static_cast<int>(by_class.size());
  FakeEpisode ep;
  ep.k = config.shots[static_cast<size_t>(rng.uniform_int(static_cast<int>(config.shots.size())))];
  const std::vector<int> picks = rng.sample_without_replacement(n_classes, config.way);
  ep.classes = picks;
  for (size_t local = 0; local < ep.classes.size(); ++local) {
    const std::vector<int>& rows = by_class[static_cast<size_t>(ep.classes[local])];
    const int avail = static_cast<int>(rows.size());
    if (avail < ep.k + 1) {
      throw DataError("attgen: class has " + std::to_string(avail) +
                      " base features, need shots + 1");
    }
    const int n_queries = std::min(config.queries_per_class, avail - ep.k);
    const std::vector<int> order = rng.sample_without_replacement(avail, ep.k + n_queries);
    std::vector<int> support;
    for (int i = 0; i < ep.k; ++i) support.push_back(rows[static_cast<size_t>(order[i])]);
    ep.support.push_back(std::move(support));
    for (int i = ep.k; i < ep.k + n_queries; ++i) {
      ep.query_rows.push_back(rows[static_cast<size_t>(order[i])]);
      ep.query_labels.push_back(static_cast<int>(local));
    }
  }
  return ep;
}

Tensor gather_rows(const Tensor& matrix, const std::vector<int>& rows) {
  Tensor out({static_cast<int>(rows.size()), matrix.dim(1)});
  for (size_t i = 0; i < rows.size(); ++i) {
    out.matrix().row(static_cast<Eigen::Index>(i)) =
        matrix.matrix().row(rows[i]);
  }
  return out;
}

std::vector<int> complement_of(const std::vector<int>& chosen, int n) {
  std::vector<bool> taken(static_cast<size_t>(n), false);
  for (int c : chosen) taken[static_cast<size_t>(c)] = true;
  std::vector<int> rest;
  for (int i = 0; i < n; ++i) {
    if (!taken[static_cast<size_t>(i)]) rest.push_back(i);
  }
  return rest;
}

/// Episode cross-entropy and its gradient on the generated weight columns.
struct EpisodeLoss {
  double value = 0.0;
  double accuracy = 0.0;
  std::vector<Tensor> d_weights;
};

EpisodeLoss episode_loss(const Tensor& query_features, const std::vector<int>& labels,
                         const std::vector<Tensor>& weights, double scale, bool need_grad) {
  const int q = query_features.dim(0);
  const int way = static_cast<int>(weights.size());
  const Tensor unit_q = l2_normalize_rows(query_features).value;
  Tensor logits({q, way});
  for (int j = 0; j < way; ++j) {
    logits.matrix().col(j) = scale * (unit_q.matrix() * weights[static_cast<size_t>(j)].vec());
  }
  EpisodeLoss out;
  int correct = 0;
  Tensor d_logits(logits.shape());
  for (int r = 0; r < q; ++r) {
    ConstVecView z(logits.data() + static_cast<Eigen::Index>(r) * way, way);
    const double m = z.maxCoeff();
    const Eigen::ArrayXd e = (z.array() - m).exp();
    const double sum = e.sum();
    out.value += std::log(sum) + m - z[labels[static_cast<size_t>(r)]];
    Eigen::Index arg = 0;
    z.maxCoeff(&arg);
    if (static_cast<int>(arg) == labels[static_cast<size_t>(r)]) ++correct;
    if (need_grad) {
      VecView dl(d_logits.data() + static_cast<Eigen::Index>(r) * way, way);
      dl = (e / sum).matrix() / q;
      dl[labels[static_cast<size_t>(r)]] -= 1.0 / q;
    }
  }
  out.value /= q;
  out.accuracy = 100.0 * correct / std::max(1, q);
  if (need_grad) {
    for (int j = 0; j < way; ++j) {
      Tensor dw({query_features.dim(1)});
      dw.vec() = scale * (unit_q.matrix().transpose() * d_logits.matrix().col(j));
      out.d_weights.push_back(std::move(dw));
    }
  }
  return out;
}

std::vector<std::vector<int>> rows_by_class(const std::vector<int>& labels, int n_classes) {
  std::vector<std::vector<int>> by_class(static_cast<size_t>(n_classes));
  for (size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
  }
  return by_class;
}

}  // namespace

AttGenParams att_gen_train(const Tensor& base_features, const std::vector<int>& labels,
                           const Tensor& base_weights, double scale, AttGenParams params,
                           const AttGenTrainConfig& config) {
  config.validate();
  const int n_classes = base_weights.dim(1);
  if (config.way >= n_classes) {
    throw DataError("attgen: way must leave at least one active base class");
  }
  const Tensor base_unit = [&] {
    Tensor t(base_weights.shape());
    auto src = base_weights.matrix();
    auto dst = t.matrix();
    for (int j = 0; j < base_weights.dim(1); ++j) {
      dst.col(j) = src.col(j) / std::max(src.col(j).norm(), kNormFloor);
    }
    return t;
  }();
  const std::vector<std::vector<int>> by_class = rows_by_class(labels, n_classes);

  Tensor* tensors[] = {&params.phi_avg, &params.phi_att, &params.phi_q, &params.keys,
                       &params.attn_scale};
  std::vector<Tensor> velocity;
  for (Tensor* t : tensors) velocity.push_back(t->zeros_like());

  for (int episode = 0; episode < config.episodes; ++episode) {
    RngStream rng = RngStream::substream(config.seed, {0xA77E, static_cast<std::uint64_t>(episode)});
    const FakeEpisode ep = sample_fake_episode(by_class, config, rng);

    SupportSet support;
    support.k = ep.k;
    for (const std::vector<int>& rows : ep.support) {
      support.features.push_back(gather_rows(base_features, rows));
    }
    const std::vector<int> active = complement_of(ep.classes, n_classes);
    AttGenForward fwd = att_gen_forward(support, base_unit, params, active);

    const Tensor queries = gather_rows(base_features, ep.query_rows);
    EpisodeLoss loss = episode_loss(queries, ep.query_labels, fwd.result.weights, scale, true);
    if (!std::isfinite(loss.value)) {
      throw NumericError("attgen: non-finite episode loss at episode " + std::to_string(episode));
    }
    const AttGenGrads grads = fwd.pullback(loss.d_weights);

    const Tensor* grad_ptrs[] = {&grads.phi_avg, &grads.phi_att, &grads.phi_q, &grads.keys,
                                 &grads.attn_scale};
    for (size_t p = 0; p < velocity.size(); ++p) {
      velocity[p].array() = config.momentum * velocity[p].array() + grad_ptrs[p]->array();
      tensors[p]->array() -= config.lr * velocity[p].array();
    }
  }
  return params;
}

double fake_novel_accuracy(const Tensor& base_features, const std::vector<int>& labels,
                           const Tensor& base_weights, double scale, GeneratorKind kind,
                           const AttGenParams* params, const AttGenTrainConfig& config,
                           std::uint64_t eval_seed) {
  config.validate();
  if (kind == GeneratorKind::Att && params == nullptr) {
    throw std::invalid_argument("fake_novel_accuracy: attention generator needs params");
  }
  const int n_classes = base_weights.dim(1);
  const Tensor base_unit = [&] {
    Tensor t(base_weights.shape());
    auto src = base_weights.matrix();
    auto dst = t.matrix();
    for (int j = 0; j < base_weights.dim(1); ++j) {
      dst.col(j) = src.col(j) / std::max(src.col(j).norm(), kNormFloor);
    }
    return t;
  }();
  const std::vector<std::vector<int>> by_class = rows_by_class(labels, n_classes);

  double total = 0.0;
  int counted = 0;
  for (int episode = 0; episode < config.episodes; ++episode) {
    RngStream rng = RngStream::substream(eval_seed, {0xE7A1, static_cast<std::uint64_t>(episode)});
    const FakeEpisode ep = sample_fake_episode(by_class, config, rng);
    SupportSet support;
    support.k = ep.k;
    for (const std::vector<int>& rows : ep.support) {
      support.features.push_back(gather_rows(base_features, rows));
    }
    std::vector<Tensor> weights;
    if (kind == GeneratorKind::Avg) {
      weights = avg_gen(support);
    } else {
      const std::vector<int> active = complement_of(ep.classes, n_classes);
      weights = att_gen(support, base_unit, *params, active).weights;
    }
    const Tensor queries = gather_rows(base_features, ep.query_rows);
    total += episode_loss(queries, ep.query_labels, weights, scale, false).accuracy;
    ++counted;
  }
  return counted ? total / counted : 0.0;
}

}  // namespace mlwc
