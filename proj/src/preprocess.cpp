#include "jsfusion/preprocess.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace jsfusion {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : words_{std::string(kBlankToken)}, index_{{std::string(kBlankToken), kBlankId}} {}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words) {
    if (w == kBlankToken) throw InputError("vocabulary word list must not contain " + std::string(kBlankToken));
    if (!v.index_.emplace(w, v.size()).second) throw InputError("duplicate vocabulary word '" + w + "'");
    v.words_.push_back(w);
  }
  return v;
}

std::optional<Index> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::init_embeddings(Index dim, Rng& rng) {
  embeddings_.resize(dim, size());
  for (Index j = 0; j < size(); ++j) {
    for (Index i = 0; i < dim; ++i) embeddings_(i, j) = 0.1 * rng.normal();
  }
  embeddings_.col(kBlankId).setZero();
}

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : sentence) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& corpus, Index min_count) {
  if (corpus.empty()) throw InputError("build_vocabulary: empty corpus");
  if (min_count < 1) throw ConfigError("build_vocabulary: min_count must be at least 1");
  std::map<std::string, Index> counts;
  for (const auto& sentence : corpus) {
    for (const auto& tok : sentence) {
      if (tok != kBlankToken) ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, Index>> kept;
  for (auto& [word, n] : counts) {
    if (n >= min_count) kept.emplace_back(word, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [w, n] : kept) words.push_back(w);
  return Vocabulary::from_words(words);
}

EmbeddingLoadReport load_embeddings(const std::string& path, Vocabulary& vocab, Index dim, Rng& rng) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file " + path);
  vocab.init_embeddings(dim, rng);
  std::vector<bool> assigned(static_cast<std::size_t>(vocab.size()), false);
  EmbeddingLoadReport report;
  std::string line;
  long lineno = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    values.clear();
    std::string tok;
    while (ls >> tok) {
      char* end = nullptr;
      double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size() || !std::isfinite(v)) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": malformed value '" + tok + "'");
      }
      values.push_back(v);
    }
    if (static_cast<Index>(values.size()) != dim) {
      throw DimensionError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                           " values, found " + std::to_string(values.size()));
    }
    auto id = vocab.find(word);
    if (!id || *id == kBlankId || assigned[static_cast<std::size_t>(*id)]) continue;
    assigned[static_cast<std::size_t>(*id)] = true;
    vocab.embeddings().col(*id) = Eigen::Map<const Eigen::VectorXd>(values.data(), dim);
    ++report.matched;
  }
  report.randomly_initialized = vocab.size() - 1 - report.matched;
  if (lineno == 0 || report.matched == 0) {
    report.warnings.push_back("embedding file " + path + " matched no vocabulary words; using random init");
    std::cerr << "warning: " << report.warnings.back() << '\n';
  }
  return report;
}

void write_embeddings(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embedding file " + path);
  char buf[40];
  for (Index j = 1; j < vocab.size(); ++j) {
    out << vocab.word(j);
    for (Index i = 0; i < vocab.embedding_dim(); ++i) {
      std::snprintf(buf, sizeof buf, " %.17g", vocab.embeddings()(i, j));
      out << buf;
    }
    out << '\n';
  }
}

void write_vocabulary(const std::string& path, const Vocabulary& vocab) {
  std::ostringstream os;
  for (const auto& w : vocab.words()) os << w << '\n';
  write_text_file(path, os.str());
}

Vocabulary read_vocabulary(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::vector<std::string> words;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      if (line != kBlankToken) throw FormatError(path + ": first vocabulary entry must be " + std::string(kBlankToken));
      first = false;
      continue;
    }
    words.push_back(line);
  }
  if (first) throw FormatError(path + ": empty vocabulary file");
  return Vocabulary::from_words(words);
}

// ---------------------------------------------------------------------------
// Sentences

WordSequence encode_sentence(const std::vector<std::string>& tokens, const Vocabulary& vocab, Index m_max) {
  if (m_max < 1) throw ConfigError("encode_sentence: m_max must be positive");
  WordSequence seq;
  for (const auto& tok : tokens) {
    if (seq.length() == m_max) break;
    auto id = vocab.find(tok);
    if (!id) continue;
    if (*id == kBlankId && !seq.blank_position) seq.blank_position = seq.length();
    seq.token_ids.push_back(*id);
  }
  if (seq.token_ids.empty()) throw InputError("sentence has no in-vocabulary tokens and cannot be encoded");
  return seq;
}

std::vector<std::string> decode_sentence(const WordSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(seq.token_ids.size());
  for (Index id : seq.token_ids) {
    if (id < 0 || id >= vocab.size()) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
    out.push_back(vocab.word(id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frames

std::vector<Index> equidistant_indices(Index n_raw, Index n_max) {
  if (n_raw < 1) throw InputError("sample_frames: video has no frames");
  if (n_max < 1) throw ConfigError("sample_frames: n_max must be positive");
  std::vector<Index> idx;
  if (n_raw <= n_max) {
    for (Index i = 0; i < n_raw; ++i) idx.push_back(i);
  } else {
    for (Index i = 0; i < n_max; ++i) idx.push_back(i * n_raw / n_max);
  }
  return idx;
}

VideoFeatureSequence sample_frames(const FeatureMatrix& raw, Index n_max) {
  auto idx = equidistant_indices(raw.rows(), n_max);
  VideoFeatureSequence out;
  out.features.resize(static_cast<Index>(idx.size()), raw.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.features.row(static_cast<Index>(i)) = raw.row(idx[i]);
  return out;
}

namespace {

constexpr char kFeatureMagic[4] = {'J', 'S', 'F', 'V'};
constexpr std::uint32_t kFeatureVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  return v;
}

[[noreturn]] void format_error(const std::string& origin, std::size_t offset, const std::string& what) {
  throw FormatError(origin + ": " + what + " at byte offset " + std::to_string(offset));
}

}  // namespace

std::string encode_feature_bytes(const VideoFeatureSequence& seq) {
  if (seq.length() < 1 || seq.dim() < 1) throw FormatError("feature sequence must have at least one frame and dimension");
  if (!seq.features.allFinite()) throw FormatError("feature sequence contains non-finite values");
  std::string out(kFeatureMagic, 4);
  put_u32(out, kFeatureVersion);
  put_u32(out, static_cast<std::uint32_t>(seq.length()));
  put_u32(out, static_cast<std::uint32_t>(seq.dim()));
  out.reserve(out.size() + static_cast<std::size_t>(seq.features.size()) * 4);
  const float* data = seq.features.data();
  for (Index i = 0; i < seq.features.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
  return out;
}

VideoFeatureSequence decode_feature_bytes(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < 16) format_error(origin, bytes.size(), "truncated header");
  if (std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) format_error(origin, 0, "bad magic");
  if (get_u32(bytes, 4) != kFeatureVersion) format_error(origin, 4, "unsupported version " + std::to_string(get_u32(bytes, 4)));
  std::uint32_t n = get_u32(bytes, 8);
  std::uint32_t d = get_u32(bytes, 12);
  if (n == 0) format_error(origin, 8, "frame count N = 0");
  if (d == 0) format_error(origin, 12, "feature dimension d_v = 0");
  std::size_t count = static_cast<std::size_t>(n) * d;
  std::size_t expected = 16 + count * 4;
  if (bytes.size() < expected) format_error(origin, bytes.size(), "truncated payload (expected " + std::to_string(expected) + " bytes)");
  if (bytes.size() > expected) format_error(origin, expected, "trailing bytes after payload");
  VideoFeatureSequence seq;
  seq.features.resize(n, d);
  float* data = seq.features.data();
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t off = 16 + 4 * i;
    float v = std::bit_cast<float>(get_u32(bytes, off));
    if (!std::isfinite(v)) format_error(origin, off, "non-finite value");
    data[i] = v;
  }
  return seq;
}

void write_feature_file(const std::string& path, const VideoFeatureSequence& seq) {
  write_text_file(path, encode_feature_bytes(seq));
}

VideoFeatureSequence read_feature_file(const std::string& path) {
  return decode_feature_bytes(read_text_file(path), path);
}

// ---------------------------------------------------------------------------
// Corpus and task files

namespace {

template <typename Fn>
void for_each_json_line(const std::string& path, Fn&& fn) {
  std::istringstream in(read_text_file(path));
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void write_json_lines(const std::string& path, const std::vector<json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_text_file(path, text);
}

}  // namespace

std::vector<CorpusRecord> read_corpus(const std::string& path) {
  std::vector<CorpusRecord> out;
  for_each_json_line(path, [&](const json& j) {
    out.push_back({j.at("id").get<std::string>(), j.at("sentence").get<std::string>(),
                   j.at("feature_path").get<std::string>()});
  });
  return out;
}

void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records) {
  std::vector<json> rows;
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["sentence"] = r.sentence;
    j["feature_path"] = r.feature_path;
    rows.push_back(std::move(j));
  }
  write_json_lines(path, rows);
}

std::vector<McRecord> read_mc_file(const std::string& path) {
  std::vector<McRecord> out;
  for_each_json_line(path, [&](const json& j) {
    McRecord r;
    r.id = j.at("id").get<std::string>();
    r.feature_path = j.at("feature_path").get<std::string>();
    r.choices = j.at("choices").get<std::vector<std::string>>();
    r.answer = j.at("answer").get<Index>();
    out.push_back(std::move(r));
  });
  return out;
}

void write_mc_file(const std::string& path, const std::vector<McRecord>& records) {
  std::vector<json> rows;
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["feature_path"] = r.feature_path;
    j["choices"] = r.choices;
    j["answer"] = r.answer;
    rows.push_back(std::move(j));
  }
  write_json_lines(path, rows);
}

std::vector<FibRecord> read_fib_file(const std::string& path) {
  std::vector<FibRecord> out;
  for_each_json_line(path, [&](const json& j) {
    out.push_back({j.at("id").get<std::string>(), j.at("feature_path").get<std::string>(),
                   j.at("sentence").get<std::string>(), j.at("answer").get<std::string>()});
  });
  return out;
}

void write_fib_file(const std::string& path, const std::vector<FibRecord>& records) {
  std::vector<json> rows;
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["feature_path"] = r.feature_path;
    j["sentence"] = r.sentence;
    j["answer"] = r.answer;
    rows.push_back(std::move(j));
  }
  write_json_lines(path, rows);
}

std::string resolve_relative(const std::string& anchor_file, const std::string& relative) {
  std::filesystem::path rel(relative);
  if (rel.is_absolute()) return relative;
  return (std::filesystem::path(anchor_file).parent_path() / rel).string();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace jsfusion
