#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "jsfusion/rng.hpp"
#include "jsfusion/tensor.hpp"

namespace jsfusion {

inline constexpr std::string_view kBlankToken = "<blank>";
inline constexpr Index kBlankId = 0;

/// Word dictionary with one embedding column per entry (E is d x |V|).
/// Index 0 is always the BLANK token.
class Vocabulary {
 public:
  Vocabulary();

  /// BLANK followed by `words` in the given order. Duplicates and the BLANK
  /// spelling itself are rejected.
  static Vocabulary from_words(const std::vector<std::string>& words);

  Index size() const { return static_cast<Index>(words_.size()); }
  const std::string& word(Index id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }
  std::optional<Index> find(std::string_view word) const;

  Index embedding_dim() const { return embeddings_.rows(); }
  const Eigen::MatrixXd& embeddings() const { return embeddings_; }
  Eigen::MatrixXd& embeddings() { return embeddings_; }

  /// N(0, 0.1^2) columns for every word, zeros for BLANK.
  void init_embeddings(Index dim, Rng& rng);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, Index> index_;
  Eigen::MatrixXd embeddings_;
};

/// Lowercases and splits on whitespace.
std::vector<std::string> tokenize(std::string_view sentence);

/// Keeps tokens seen at least `min_count` times (default 4, i.e. more than
/// three occurrences). Order: count descending, then lexicographic.
Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& corpus, Index min_count = 4);

struct EmbeddingLoadReport {
  Index matched = 0;
  Index randomly_initialized = 0;
  std::vector<std::string> warnings;
};

/// Reads "word v1 ... vd" lines. Matching words take the file vector (first
/// occurrence wins); the rest get the random init of init_embeddings; BLANK
/// gets zeros. Throws ParseError / DimensionError with the line number.
EmbeddingLoadReport load_embeddings(const std::string& path, Vocabulary& vocab, Index dim, Rng& rng);

void write_embeddings(const std::string& path, const Vocabulary& vocab);

void write_vocabulary(const std::string& path, const Vocabulary& vocab);
Vocabulary read_vocabulary(const std::string& path);

/// Truncated, indexed sentence, optionally carrying a blank position.
struct WordSequence {
  std::vector<Index> token_ids;
  std::optional<Index> blank_position;

  Index length() const { return static_cast<Index>(token_ids.size()); }
  bool operator==(const WordSequence&) const = default;
};

/// Drops out-of-vocabulary tokens, then keeps the first `m_max`. A BLANK
/// token, if present, sets blank_position.
WordSequence encode_sentence(const std::vector<std::string>& tokens, const Vocabulary& vocab, Index m_max = 40);

std::vector<std::string> decode_sentence(const WordSequence& seq, const Vocabulary& vocab);

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x d_v per-frame descriptors (visual features followed by audio).
struct VideoFeatureSequence {
  FeatureMatrix features;

  Index length() const { return features.rows(); }
  Index dim() const { return features.cols(); }
};

/// floor(i * n_raw / n_max) for i < n_max when n_raw > n_max, else 0..n_raw-1.
std::vector<Index> equidistant_indices(Index n_raw, Index n_max);

VideoFeatureSequence sample_frames(const FeatureMatrix& raw, Index n_max = 40);

/// Feature file: "JSFV", u32 version (1), u32 N, u32 d_v, then N*d_v
/// little-endian IEEE-754 float32 values, row-major.
std::string encode_feature_bytes(const VideoFeatureSequence& seq);
VideoFeatureSequence decode_feature_bytes(std::string_view bytes, const std::string& origin = "<memory>");
void write_feature_file(const std::string& path, const VideoFeatureSequence& seq);
VideoFeatureSequence read_feature_file(const std::string& path);

/// One line of the corpus file: {"id", "sentence", "feature_path"}. The
/// feature path is relative to the corpus file's directory.
struct CorpusRecord {
  std::string id;
  std::string sentence;
  std::string feature_path;
};

/// {"id", "feature_path", "choices": [5 sentences], "answer": index}
struct McRecord {
  std::string id;
  std::string feature_path;
  std::vector<std::string> choices;
  Index answer = 0;
};

/// {"id", "feature_path", "sentence" (contains <blank>), "answer": word}
struct FibRecord {
  std::string id;
  std::string feature_path;
  std::string sentence;
  std::string answer;
};

std::vector<CorpusRecord> read_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records);
std::vector<McRecord> read_mc_file(const std::string& path);
void write_mc_file(const std::string& path, const std::vector<McRecord>& records);
std::vector<FibRecord> read_fib_file(const std::string& path);
void write_fib_file(const std::string& path, const std::vector<FibRecord>& records);

/// `relative` interpreted against the directory holding `anchor_file`.
std::string resolve_relative(const std::string& anchor_file, const std::string& relative);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace jsfusion
