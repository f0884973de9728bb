#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "jsfusion/config.hpp"
#include "jsfusion/dataset.hpp"
#include "jsfusion/gradcheck.hpp"
#include "jsfusion/model.hpp"

namespace jsfusion {

/// L (video, sentence) pairs around one anchor; `positive` is l*.
/// `sources` holds the dataset example each negative was drawn from (the
/// anchor for the positive, -1 for multiple-choice answer options).
struct RankingBatch {
  std::vector<const VideoFeatureSequence*> videos;
  std::vector<const WordSequence*> sentences;
  std::vector<Index> sources;
  Index positive = 0;

  Index size() const { return static_cast<Index>(videos.size()); }
};

/// The anchor pair plus L-1 negatives built from other examples drawn
/// uniformly without replacement, in shuffled order. A negative pairs the
/// anchor sentence with the other example's video, or, with probability
/// `mixed`, the anchor video with the other example's sentence.
RankingBatch build_retrieval_batch(const Dataset& data, Index anchor, Index batch_size, Rng& rng, double mixed = 0.0);

/// The item's video with its correct choice, its four wrong choices and five
/// sentences sampled from other examples (never the video's own sentence or
/// a copy of the correct one), in shuffled order.
RankingBatch build_mc_batch(const Dataset& data, const McItem& item, Rng& rng);

struct FibBatch {
  std::vector<const VideoFeatureSequence*> videos;
  std::vector<const WordSequence*> sentences;
  std::vector<Index> targets;
};

/// Shuffles the items and cuts them into consecutive batches of `batch_size`
/// (the last one may be smaller but keeps at least two items).
std::vector<FibBatch> build_fib_batches(const Dataset& data, const std::vector<FibItem>& items, Index batch_size, Rng& rng);

// ---------------------------------------------------------------------------
// Objectives

/// λ · Σ ||W||² over the parameters flagged for decay.
template <typename Scalar>
Tensor<Scalar> weight_penalty(const ParamList<Scalar>& params, double lambda) {
  Tensor<Scalar> total = Tensor<Scalar>::scalar(Scalar(0));
  if (lambda == 0.0) return total;
  for (const auto& p : params) {
    if (p.decayed) total = add(total, sum_squares(p.tensor));
  }
  return scale(total, static_cast<Scalar>(lambda));
}

/// Σ_k Σ_{l≠l*_k} max(0, s_{k,l} − s_{k,l*_k} + Δ) where the scores hold
/// consecutive groups of `group` entries and positives[k] indexes group k.
template <typename Scalar>
Tensor<Scalar> ranking_hinge(const Tensor<Scalar>& scores, const std::vector<Index>& positives, Index group,
                             double margin) {
  Index n = scores.size();
  if (group < 1 || static_cast<Index>(positives.size()) * group != n) {
    throw ShapeError("ranking loss: " + std::to_string(n) + " scores do not split into " +
                     std::to_string(positives.size()) + " groups of " + std::to_string(group));
  }
  const auto& s = scores.value();
  Scalar total = s.allFinite() ? Scalar(0) : std::numeric_limits<Scalar>::quiet_NaN();
  std::vector<std::pair<Index, Index>> active;  // (negative, positive)
  for (std::size_t k = 0; k < positives.size(); ++k) {
    Index pos = positives[k];
    if (pos < 0 || pos >= group) {
      throw InputError("ranking loss: positive index " + std::to_string(pos) + " outside [0, " +
                       std::to_string(group) + ")");
    }
    Index base = static_cast<Index>(k) * group;
    for (Index l = 0; l < group; ++l) {
      if (l == pos) continue;
      Scalar term = s[base + l] - s[base + pos] + static_cast<Scalar>(margin);
      if (term > Scalar(0)) {
        total += term;
        active.emplace_back(base + l, base + pos);
      }
    }
  }
  auto sn = scores.node();
  return make_op_result<Scalar>(Shape{}, VectorX<Scalar>::Constant(1, total), {&scores},
                                [sn, active](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    auto* gs = detail::grad_target(sn);
    if (gs == nullptr) return;
    for (auto [neg, pos] : active) {
      (*gs)[neg] += g[0];
      (*gs)[pos] -= g[0];
    }
  });
}

/// Σ_{l≠l*} max(0, s_l − s_{l*} + Δ) over a score vector of L entries.
template <typename Scalar>
Tensor<Scalar> ranking_hinge(const Tensor<Scalar>& scores, Index positive, double margin) {
  return ranking_hinge(scores, std::vector<Index>{positive}, scores.size(), margin);
}

template <typename Scalar>
Tensor<Scalar> ranking_loss(const Tensor<Scalar>& scores, Index positive, double margin, double lambda,
                            const ParamList<Scalar>& params) {
  return add(ranking_hinge(scores, positive, margin), weight_penalty(params, lambda));
}

/// Mean over rows of −log softmax(logits)[target], with a stable
/// log-sum-exp: (max − l_t) + log1p(Σ_{j≠argmax} exp(l_j − max)).
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const std::vector<Index>& targets) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(targets.size())) {
    throw ShapeError("cross entropy: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  Index rows = logits.dim(0), v = logits.dim(1);
  auto lm = logits.matrix();
  auto probs = std::make_shared<RowMatrixX<Scalar>>(rows, v);
  Scalar total = 0;
  for (Index r = 0; r < rows; ++r) {
    Index t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= v) {
      throw InputError("cross entropy: target " + std::to_string(t) + " outside vocabulary of " + std::to_string(v));
    }
    Index arg = 0;
    Scalar mx = lm.row(r).maxCoeff(&arg);
    Scalar rest = 0;
    for (Index j = 0; j < v; ++j) {
      Scalar e = std::exp(lm(r, j) - mx);
      (*probs)(r, j) = e;
      if (j != arg) rest += e;
    }
    probs->row(r) /= (Scalar(1) + rest);
    total += (mx - lm(r, t)) + std::log1p(rest);
  }
  total /= static_cast<Scalar>(rows);
  auto ln = logits.node();
  return make_op_result<Scalar>(Shape{}, VectorX<Scalar>::Constant(1, total), {&logits},
                                [ln, probs, targets, rows, v](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    auto* gl = detail::grad_target(ln);
    if (gl == nullptr) return;
    RowMatrixMap<Scalar> gm(gl->data(), rows, v);
    Scalar w = g[0] / static_cast<Scalar>(rows);
    gm += w * (*probs);
    for (Index r = 0; r < rows; ++r) gm(r, targets[static_cast<std::size_t>(r)]) -= w;
  });
}

template <typename Scalar>
Tensor<Scalar> fib_loss(const Tensor<Scalar>& logits, const std::vector<Index>& targets, double lambda,
                        const ParamList<Scalar>& params) {
  return add(softmax_cross_entropy(logits, targets), weight_penalty(params, lambda));
}

// ---------------------------------------------------------------------------
// Optimizer

/// Bias-corrected Adam over a fixed parameter list. Parameters without a
/// gradient this step are treated as having a zero gradient.
template <typename Scalar>
class Adam {
 public:
  Adam(ParamList<Scalar> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      m_.push_back(VectorX<Scalar>::Zero(p.tensor.size()));
      v_.push_back(VectorX<Scalar>::Zero(p.tensor.size()));
    }
  }

  /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
  /// Returns the norm before clipping.
  double clip_global_norm(double max_norm) {
    double sq = 0;
    for (auto& p : params_) {
      if (p.tensor.has_grad()) sq += static_cast<double>(p.tensor.grad().squaredNorm());
    }
    double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
      auto f = static_cast<Scalar>(max_norm / norm);
      for (auto& p : params_) {
        if (p.tensor.has_grad()) p.tensor.grad() *= f;
      }
    }
    return norm;
  }

  void step() {
    ++t_;
    const Scalar b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(beta1_, static_cast<double>(t_)));
    const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(beta2_, static_cast<double>(t_)));
    const Scalar lr = static_cast<Scalar>(lr_), eps = static_cast<Scalar>(eps_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].tensor;
      if (p.has_grad()) {
        const auto& g = p.grad();
        if (g.size() != m_[i].size()) {
          throw ShapeError("adam: gradient of " + params_[i].name + " has " + std::to_string(g.size()) +
                           " entries, parameter has " + std::to_string(m_[i].size()));
        }
        m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
        v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
      } else {
        m_[i] *= b1;
        v_[i] *= b2;
      }
      p.value().array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }
  double learning_rate() const { return lr_; }
  const VectorX<Scalar>& first_moment(std::size_t i) const { return m_[i]; }
  const VectorX<Scalar>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  ParamList<Scalar> params_;
  std::vector<VectorX<Scalar>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop

struct LossRecord {
  Index epoch = 0;
  Index batch = 0;
  double loss = 0.0;
};

struct TrainData {
  const Dataset* data = nullptr;
  const std::vector<McItem>* mc = nullptr;
  const std::vector<FibItem>* fib = nullptr;
};

std::string loss_trace_csv(const std::vector<LossRecord>& trace);

/// Training-mode objective of ranking batches scored in one forward pass
/// (the summed hinges plus the weight penalty).
template <typename Scalar>
Tensor<Scalar> ranking_batch_loss(JsFusion<Scalar>& model, const std::vector<RankingBatch>& batches,
                                  const TrainConfig& cfg, const ParamList<Scalar>& params) {
  if (batches.empty()) throw UsageError("ranking loss over no batches");
  std::vector<const VideoFeatureSequence*> videos;
  std::vector<const WordSequence*> sentences;
  std::vector<Index> positives;
  Index group = batches.front().size();
  for (const auto& b : batches) {
    if (b.size() != group) throw ShapeError("ranking batches of one step must have equal sizes");
    videos.insert(videos.end(), b.videos.begin(), b.videos.end());
    sentences.insert(sentences.end(), b.sentences.begin(), b.sentences.end());
    positives.push_back(b.positive);
  }
  Tensor<Scalar> scores = model.forward(videos, sentences, Mode::train);
  return add(ranking_hinge(scores, positives, group, cfg.margin), weight_penalty(params, cfg.weight_decay));
}

template <typename Scalar>
Tensor<Scalar> ranking_batch_loss(JsFusion<Scalar>& model, const RankingBatch& batch, const TrainConfig& cfg,
                                  const ParamList<Scalar>& params) {
  return ranking_batch_loss(model, std::vector<RankingBatch>{batch}, cfg, params);
}

template <typename Scalar>
Tensor<Scalar> fib_batch_loss(JsFusion<Scalar>& model, const FibBatch& batch, const TrainConfig& cfg,
                              const ParamList<Scalar>& params) {
  Tensor<Scalar> logits = model.forward(batch.videos, batch.sentences, Mode::train);
  return fib_loss(logits, batch.targets, cfg.weight_decay, params);
}

/// Runs cfg.epochs epochs of Adam on the task selected by cfg.task and
/// returns the per-step loss trace. Ranking tasks visit every anchor once per
/// epoch, cfg.anchors_per_step anchors per step. `on_epoch_end(epoch)` runs after each
/// epoch (checkpointing). Single-threaded and deterministic given cfg.seed.
template <typename Scalar>
std::vector<LossRecord> train(JsFusion<Scalar>& model, const TrainData& td, const TrainConfig& cfg,
                              const std::function<void(Index)>& on_epoch_end = {}) {
  cfg.validate();
  if (td.data == nullptr) throw UsageError("train: no dataset");
  const Dataset& data = *td.data;
  if (cfg.task == Task::fib) {
    if (!model.is_fib()) throw ConfigError("train.task = fib needs model.variant = fib");
    if (td.fib == nullptr || td.fib->size() < 2) throw ConfigError("fib training needs at least two items");
  } else {
    if (model.is_fib()) throw ConfigError("train.task = " + to_string(cfg.task) + " needs model.variant = match");
    if (cfg.task == Task::mc && (td.mc == nullptr || td.mc->empty())) {
      throw ConfigError("multiple-choice training needs items");
    }
    if (cfg.task == Task::retrieval && data.size() < cfg.batch_size) {
      throw ConfigError("retrieval training needs at least batch_size = " + std::to_string(cfg.batch_size) +
                        " examples, dataset has " + std::to_string(data.size()));
    }
  }

  Rng rng(cfg.seed);
  model.dropout_rng() = rng.derive(0xD50);
  ParamList<Scalar> params = model.parameters();
  Adam<Scalar> adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<LossRecord> trace;

  auto run_step = [&](Index epoch, Index b, auto&& objective) {
    model.zero_grad();
    GradTape tape;
    Tensor<Scalar> loss = objective();
    double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b));
    }
    backward(loss);
    if (cfg.clip_norm > 0) adam.clip_global_norm(cfg.clip_norm);
    adam.step();
    trace.push_back({epoch, b, value});
  };

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    Index b = 0;
    if (cfg.task == Task::fib) {
      for (const FibBatch& batch : build_fib_batches(data, *td.fib, cfg.batch_size, rng)) {
        if (cfg.batches_per_epoch > 0 && b >= cfg.batches_per_epoch) break;
        run_step(epoch, b++, [&] { return fib_batch_loss(model, batch, cfg, params); });
      }
    } else {
      Index n = cfg.task == Task::mc ? static_cast<Index>(td.mc->size()) : data.size();
      std::vector<Index> order(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      rng.shuffle(order.begin(), order.end());
      for (Index start = 0; start < n; start += cfg.anchors_per_step) {
        if (cfg.batches_per_epoch > 0 && b >= cfg.batches_per_epoch) break;
        std::vector<RankingBatch> group;
        for (Index i = start; i < std::min(n, start + cfg.anchors_per_step); ++i) {
          Index anchor = order[static_cast<std::size_t>(i)];
          group.push_back(cfg.task == Task::mc
                              ? build_mc_batch(data, (*td.mc)[static_cast<std::size_t>(anchor)], rng)
                              : build_retrieval_batch(data, anchor, cfg.batch_size, rng, cfg.mixed_negatives));
        }
        run_step(epoch, b++, [&] { return ranking_batch_loss(model, group, cfg, params); });
      }
    }
    if (on_epoch_end) on_epoch_end(epoch);
  }
  return trace;
}

}  // namespace jsfusion

namespace jsfusion {

/// Reverse-mode vs central-difference gradients of the full training
/// objective (ranking loss for the matching variant, cross-entropy for the
/// fill-in-the-blank variant, both with weight decay) on random data, one
/// entry per parameter group, in train mode with a fixed dropout stream.
/// Groups whose gradient is identically zero (both norms below 1e-9) report
/// a relative error of 0.
template <typename Scalar = double>
std::vector<GradCheckEntry> training_gradient_check(const ModelConfig& config, std::uint64_t seed = 1,
                                                    Scalar eps = Scalar(1e-5)) {
  JsFusion<Scalar> model(config);
  Rng rng(seed);
  Dataset data;
  const bool fib = config.variant == Variant::fib;
  for (Index i = 0; i < 5; ++i) {
    data.ids.push_back("g" + std::to_string(i));
    VideoFeatureSequence v;
    v.features.resize(1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(config.n_max))), config.d_video);
    for (Index k = 0; k < v.features.size(); ++k) v.features.data()[k] = static_cast<float>(rng.normal());
    data.videos.push_back(std::move(v));
    WordSequence s;
    Index len = std::min<Index>(config.m_max, 2 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(config.m_max))));
    for (Index t = 0; t < len; ++t) {
      s.token_ids.push_back(1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(config.vocab_size - 1))));
    }
    if (fib) {
      auto b = static_cast<Index>(rng.below(static_cast<std::uint64_t>(len)));
      s.token_ids[static_cast<std::size_t>(b)] = kBlankId;
      s.blank_position = b;
    }
    data.sentences.push_back(std::move(s));
  }
  TrainConfig tc;
  ParamList<Scalar> params = model.parameters();
  std::function<Tensor<Scalar>()> objective;
  RankingBatch ranking;
  FibBatch fb;
  if (fib) {
    for (Index i = 0; i < data.size(); ++i) {
      fb.videos.push_back(&data.videos[static_cast<std::size_t>(i)]);
      fb.sentences.push_back(&data.sentences[static_cast<std::size_t>(i)]);
      fb.targets.push_back(1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(config.vocab_size - 1))));
    }
    objective = [&] {
      model.dropout_rng() = Rng(seed + 1);
      return fib_batch_loss(model, fb, tc, params);
    };
  } else {
    ranking = build_retrieval_batch(data, 0, 4, rng, 0.5);
    objective = [&] { return ranking_batch_loss(model, ranking, tc, params); };
  }

  model.zero_grad();
  {
    GradTape tape;
    backward(objective());
  }
  std::vector<GradCheckEntry> out;
  for (auto& p : params) {
    VectorX<Scalar> analytic = p.tensor.has_grad() ? VectorX<Scalar>(p.tensor.grad())
                                                   : VectorX<Scalar>::Zero(p.tensor.size());
    VectorX<Scalar> numeric = finite_diff_grad(
        [&] {
          NoGradScope no_grad;
          return objective().item();
        },
        p.tensor, eps);
    GradCheckEntry e;
    e.group = p.name;
    e.analytic_norm = static_cast<double>(analytic.norm());
    e.coordinates = static_cast<long>(analytic.size());
    bool zero = std::max(analytic.norm(), numeric.norm()) < Scalar(1e-9);
    e.relative_error = zero ? 0.0 : static_cast<double>(relative_error(analytic, numeric));
    out.push_back(e);
  }
  return out;
}

}  // namespace jsfusion
