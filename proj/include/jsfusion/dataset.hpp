#pragma once

#include <string>
#include <vector>

#include "jsfusion/preprocess.hpp"

namespace jsfusion {

/// Aligned (video, sentence) pairs: sentence i describes video i.
struct Dataset {
  std::vector<std::string> ids;
  std::vector<VideoFeatureSequence> videos;
  std::vector<WordSequence> sentences;
  std::vector<std::string> feature_paths;  // as written in the corpus file, if loaded from one

  Index size() const { return static_cast<Index>(sentences.size()); }

  /// Throws if the pairs do not fit the given maxima and feature width.
  void validate(Index n_max, Index m_max, Index d_video, Index vocab_size) const;
};

/// A video with five candidate sentences, one of them correct.
struct McItem {
  std::string id;
  Index video = 0;  // index into Dataset::videos
  std::vector<WordSequence> choices;
  Index answer = 0;
};

/// A blanked sentence for a video and the removed word.
struct FibItem {
  std::string id;
  Index video = 0;  // index into Dataset::videos
  WordSequence sentence;
  Index target = 0;
};

void validate_mc_items(const std::vector<McItem>& items, const Dataset& data);
void validate_fib_items(const std::vector<FibItem>& items, const Dataset& data, Index vocab_size);

/// Reads a corpus file, encodes its sentences with `vocab` and samples each
/// feature file down to at most `n_max` frames.
Dataset load_dataset(const std::string& corpus_path, const Vocabulary& vocab, Index m_max, Index n_max);

/// Task files refer to videos by feature path; each must belong to `data`.
std::vector<McItem> load_mc_items(const std::string& path, const Dataset& data, const Vocabulary& vocab, Index m_max);
std::vector<FibItem> load_fib_items(const std::string& path, const Dataset& data, const Vocabulary& vocab, Index m_max);

}  // namespace jsfusion
