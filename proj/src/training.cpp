#include "jsfusion/training.hpp"

#include <cstdio>

namespace jsfusion {

RankingBatch build_retrieval_batch(const Dataset& data, Index anchor, Index batch_size, Rng& rng, double mixed) {
  Index n = data.size();
  if (anchor < 0 || anchor >= n) throw InputError("retrieval batch: anchor " + std::to_string(anchor) + " out of range");
  if (batch_size < 2 || batch_size > n) {
    throw ConfigError("retrieval batch size " + std::to_string(batch_size) + " needs 2 <= L <= " + std::to_string(n));
  }
  std::vector<Index> others;
  others.reserve(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    if (i != anchor) others.push_back(i);
  }
  // partial Fisher-Yates: the first L-1 slots are a uniform sample
  for (Index k = 0; k < batch_size - 1; ++k) {
    Index j = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - 1 - k)));
    std::swap(others[static_cast<std::size_t>(k)], others[static_cast<std::size_t>(j)]);
  }
  std::vector<Index> picks(others.begin(), others.begin() + (batch_size - 1));
  picks.push_back(anchor);
  rng.shuffle(picks.begin(), picks.end());

  RankingBatch b;
  auto a = static_cast<std::size_t>(anchor);
  for (Index i = 0; i < batch_size; ++i) {
    Index e = picks[static_cast<std::size_t>(i)];
    auto j = static_cast<std::size_t>(e);
    if (e == anchor) {
      b.positive = i;
      b.videos.push_back(&data.videos[a]);
      b.sentences.push_back(&data.sentences[a]);
    } else if (mixed > 0.0 && rng.bernoulli(mixed)) {
      b.videos.push_back(&data.videos[a]);
      b.sentences.push_back(&data.sentences[j]);
    } else {
      b.videos.push_back(&data.videos[j]);
      b.sentences.push_back(&data.sentences[a]);
    }
    b.sources.push_back(e);
  }
  return b;
}

RankingBatch build_mc_batch(const Dataset& data, const McItem& item, Rng& rng) {
  if (item.choices.size() != 5) throw InputError("multiple-choice item " + item.id + " needs 5 choices");
  if (item.video < 0 || item.video >= static_cast<Index>(data.videos.size())) {
    throw InputError("multiple-choice item " + item.id + " refers to a missing video");
  }
  const WordSequence& truth = item.choices[static_cast<std::size_t>(item.answer)];
  std::vector<Index> pool;
  for (Index i = 0; i < data.size(); ++i) {
    const auto& s = data.sentences[static_cast<std::size_t>(i)];
    if (i != item.video && s.token_ids != truth.token_ids) pool.push_back(i);
  }
  if (pool.size() < 5) {
    throw InputError("multiple-choice item " + item.id + ": fewer than 5 other sentences to sample");
  }
  Index pn = static_cast<Index>(pool.size());
  for (Index k = 0; k < 5; ++k) {
    Index j = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(pn - k)));
    std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
  }

  // entries: -1 - c for choice c, otherwise a dataset sentence index
  std::vector<Index> entries;
  for (Index c = 0; c < 5; ++c) entries.push_back(-1 - c);
  entries.insert(entries.end(), pool.begin(), pool.begin() + 5);
  rng.shuffle(entries.begin(), entries.end());

  RankingBatch b;
  const VideoFeatureSequence* video = &data.videos[static_cast<std::size_t>(item.video)];
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Index e = entries[i];
    b.videos.push_back(video);
    if (e < 0) {
      Index c = -1 - e;
      b.sentences.push_back(&item.choices[static_cast<std::size_t>(c)]);
      b.sources.push_back(-1);
      if (c == item.answer) b.positive = static_cast<Index>(i);
    } else {
      b.sentences.push_back(&data.sentences[static_cast<std::size_t>(e)]);
      b.sources.push_back(e);
    }
  }
  return b;
}

std::vector<FibBatch> build_fib_batches(const Dataset& data, const std::vector<FibItem>& items, Index batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError("fill-in-the-blank batch size must be positive");
  for (const auto& it : items) {
    if (it.video < 0 || it.video >= static_cast<Index>(data.videos.size())) {
      throw InputError("fill-in-the-blank item " + it.id + " refers to a missing video");
    }
  }
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());

  std::vector<FibBatch> batches;
  auto step = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < order.size(); start += step) {
    std::size_t end = std::min(order.size(), start + step);
    if (end - start < 2 && !batches.empty()) {
      // a lone trailing item joins the previous batch (batch norm needs two rows)
      for (std::size_t k = start; k < end; ++k) {
        const FibItem& it = items[order[k]];
        batches.back().videos.push_back(&data.videos[static_cast<std::size_t>(it.video)]);
        batches.back().sentences.push_back(&it.sentence);
        batches.back().targets.push_back(it.target);
      }
      break;
    }
    FibBatch b;
    for (std::size_t k = start; k < end; ++k) {
      const FibItem& it = items[order[k]];
      b.videos.push_back(&data.videos[static_cast<std::size_t>(it.video)]);
      b.sentences.push_back(&it.sentence);
      b.targets.push_back(it.target);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::string loss_trace_csv(const std::vector<LossRecord>& trace) {
  std::string out = "epoch,batch,loss\n";
  char buf[64];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g\n", static_cast<long long>(r.epoch),
                  static_cast<long long>(r.batch), r.loss);
    out += buf;
  }
  return out;
}

}  // namespace jsfusion
