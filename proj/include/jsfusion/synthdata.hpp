#pragma once

#include <string>
#include <vector>

#include "jsfusion/config.hpp"
#include "jsfusion/dataset.hpp"
#include "jsfusion/preprocess.hpp"

namespace jsfusion {

/// A corpus whose videos are noisy linear images of their sentences' words:
/// every word w emits 1..3 frames P e_w + noise, in sentence order.
struct SynthCorpus {
  Vocabulary vocab;             // BLANK, w001, w002, ...; embeddings hold the latent e_w
  Eigen::MatrixXd projection;   // d_video x d_word
  Dataset data;
  std::vector<std::vector<Index>> frame_words;  // word id behind each frame
};

SynthCorpus generate_corpus(const SynthConfig& cfg);

/// Per example: its own sentence plus four sentences of other examples that
/// differ from it, at a uniformly drawn answer position.
std::vector<McItem> make_multiple_choice(const Dataset& data, Rng& rng, Index count = 0);

struct FibSet {
  std::vector<FibItem> items;
  Index skipped = 0;  // sentences shorter than two words
};

/// `per_sentence` blanks per sentence, each at a uniformly drawn position.
FibSet make_fib(const Dataset& data, Rng& rng, Index per_sentence = 1);

/// Cosine similarity between mean frame and the projected mean word
/// embedding, which needs no training; a sanity baseline for the planted signal.
Eigen::MatrixXd cosine_baseline_scores(const SynthCorpus& corpus);

struct SynthFiles {
  std::string corpus;
  std::string embeddings;
  std::string vocab;
  std::string mc;
  std::string fib;
  std::string manifest;
};

/// Writes corpus + per-video feature files + embeddings + vocabulary + task
/// files + a manifest recording the generator settings under `dir`.
SynthFiles write_synthetic_corpus(const std::string& dir, const DataConfig& names, const SynthCorpus& corpus,
                                  const std::vector<McItem>& mc, const FibSet& fib);

}  // namespace jsfusion
