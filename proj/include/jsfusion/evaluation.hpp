#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "jsfusion/dataset.hpp"
#include "jsfusion/model.hpp"

namespace jsfusion {

/// Row k holds the scores of query sentence k against every candidate video;
/// gt[k] is the column of its own video.
struct ScoreMatrix {
  Eigen::MatrixXd scores;
  std::vector<Index> gt;

  void validate() const;
};

/// 1 + #{l : s_l > s_gt} + #{l < gt : s_l = s_gt}.
Index rank_of_gt(const Eigen::Ref<const Eigen::VectorXd>& row, Index gt);
double recall_at_k(const std::vector<Index>& ranks, Index k);
/// Even counts average the two central order statistics.
double median_rank(const std::vector<Index>& ranks);

struct RetrievalMetrics {
  std::map<Index, double> recall_at;
  double median_rank = 0.0;
  Index queries = 0;
  Index pool = 0;
  std::vector<Index> ranks;
};

RetrievalMetrics retrieval_metrics(const ScoreMatrix& m, const std::vector<Index>& ks = {1, 5, 10});

struct AccuracyReport {
  std::string task;
  double accuracy = 0.0;
  Index items = 0;
  std::vector<Index> predictions;
  std::vector<Index> answers;
};

/// Mean of the exact-match indicators.
AccuracyReport accuracy_report(std::string task, std::vector<Index> predictions, std::vector<Index> answers);

std::string metrics_json(const RetrievalMetrics& m);
std::string metrics_json(const AccuracyReport& r);
std::string metrics_table(const RetrievalMetrics& m);
std::string metrics_table(const AccuracyReport& r);

namespace detail {

/// Runs body(i) for i in [0, n) on up to `threads` workers; each index is
/// visited once and results land in caller-owned slots, so the outcome does
/// not depend on scheduling.
template <typename Body>
void parallel_for(Index n, unsigned threads, Body&& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<Index>(threads, std::max<Index>(n, 1)));
  if (threads <= 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Index i = w; i < n; i += threads) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Inference-mode scores; each row is one batched pass of query k against
/// all candidates. `threads` = 0 uses every hardware thread.
template <typename Scalar>
ScoreMatrix score_matrix(JsFusion<Scalar>& model, const std::vector<const WordSequence*>& queries,
                         const std::vector<const VideoFeatureSequence*>& candidates, std::vector<Index> gt,
                         unsigned threads = 1) {
  if (queries.empty() || candidates.empty()) throw InputError("score matrix needs queries and candidates");
  ScoreMatrix m;
  auto k = static_cast<Index>(queries.size()), l = static_cast<Index>(candidates.size());
  m.scores.resize(k, l);
  m.gt = std::move(gt);
  detail::parallel_for(k, threads, [&](Index row) {
    std::vector<Scalar> s = model.score_videos(candidates, *queries[static_cast<std::size_t>(row)]);
    for (Index c = 0; c < l; ++c) m.scores(row, c) = static_cast<double>(s[static_cast<std::size_t>(c)]);
  });
  m.validate();
  return m;
}

/// Retrieval over the pool `subset` of the dataset (every example when empty):
/// each sentence ranks all videos of the pool.
template <typename Scalar>
RetrievalMetrics evaluate_retrieval(JsFusion<Scalar>& model, const Dataset& data, std::vector<Index> subset = {},
                                    unsigned threads = 1) {
  if (subset.empty()) {
    for (Index i = 0; i < data.size(); ++i) subset.push_back(i);
  }
  std::vector<const WordSequence*> queries;
  std::vector<const VideoFeatureSequence*> candidates;
  std::vector<Index> gt;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    Index e = subset[i];
    if (e < 0 || e >= data.size()) throw InputError("retrieval pool refers to example " + std::to_string(e));
    queries.push_back(&data.sentences[static_cast<std::size_t>(e)]);
    candidates.push_back(&data.videos[static_cast<std::size_t>(e)]);
    gt.push_back(static_cast<Index>(i));
  }
  return retrieval_metrics(score_matrix(model, queries, candidates, std::move(gt), threads));
}

template <typename Scalar>
AccuracyReport evaluate_multiple_choice(JsFusion<Scalar>& model, const Dataset& data, const std::vector<McItem>& items,
                                        unsigned threads = 1) {
  validate_mc_items(items, data);
  std::vector<Index> pred(items.size()), answers;
  for (const auto& it : items) answers.push_back(it.answer);
  detail::parallel_for(static_cast<Index>(items.size()), threads, [&](Index i) {
    const McItem& it = items[static_cast<std::size_t>(i)];
    pred[static_cast<std::size_t>(i)] = model.multiple_choice(data.videos[static_cast<std::size_t>(it.video)], it.choices);
  });
  return accuracy_report("multiple_choice", std::move(pred), std::move(answers));
}

template <typename Scalar>
AccuracyReport evaluate_fib(JsFusion<Scalar>& model, const Dataset& data, const std::vector<FibItem>& items,
                            unsigned threads = 1) {
  validate_fib_items(items, data, model.config().vocab_size);
  std::vector<Index> pred(items.size()), answers;
  for (const auto& it : items) answers.push_back(it.target);
  detail::parallel_for(static_cast<Index>(items.size()), threads, [&](Index i) {
    const FibItem& it = items[static_cast<std::size_t>(i)];
    pred[static_cast<std::size_t>(i)] = model.fib_predict(data.videos[static_cast<std::size_t>(it.video)], it.sentence);
  });
  return accuracy_report("fill_in_the_blank", std::move(pred), std::move(answers));
}

}  // namespace jsfusion
