#include "jsfusion/dataset.hpp"

#include <unordered_map>

#include "jsfusion/errors.hpp"

namespace jsfusion {

namespace {

void check_sentence(const WordSequence& s, Index m_max, Index vocab_size, const std::string& where) {
  if (s.length() < 1 || s.length() > m_max) {
    throw InputError(where + ": sentence length " + std::to_string(s.length()) + " outside [1, " +
                     std::to_string(m_max) + "]");
  }
  for (Index id : s.token_ids) {
    if (id < 0 || id >= vocab_size) throw InputError(where + ": token id " + std::to_string(id) + " out of range");
  }
  if (s.blank_position && s.token_ids[static_cast<std::size_t>(*s.blank_position)] != kBlankId) {
    throw InputError(where + ": blank position does not hold the blank token");
  }
}

std::unordered_map<std::string, Index> video_lookup(const Dataset& data, const std::string& path) {
  if (data.feature_paths.size() != data.videos.size()) {
    throw InputError(path + ": the dataset was not loaded from a corpus file");
  }
  std::unordered_map<std::string, Index> out;
  for (std::size_t i = 0; i < data.feature_paths.size(); ++i) out.emplace(data.feature_paths[i], static_cast<Index>(i));
  return out;
}

Index find_video(const std::unordered_map<std::string, Index>& lookup, const std::string& feature_path,
                 const std::string& path, const std::string& id) {
  auto it = lookup.find(feature_path);
  if (it == lookup.end()) throw InputError(path + ": item " + id + " refers to " + feature_path + ", which is not in the corpus");
  return it->second;
}

}  // namespace

Dataset load_dataset(const std::string& corpus_path, const Vocabulary& vocab, Index m_max, Index n_max) {
  Dataset d;
  for (const auto& rec : read_corpus(corpus_path)) {
    WordSequence s;
    try {
      s = encode_sentence(tokenize(rec.sentence), vocab, m_max);
    } catch (const InputError& e) {
      throw InputError(corpus_path + ": example " + rec.id + ": " + e.what());
    }
    auto raw = read_feature_file(resolve_relative(corpus_path, rec.feature_path));
    d.ids.push_back(rec.id);
    d.videos.push_back(sample_frames(raw.features, n_max));
    d.sentences.push_back(std::move(s));
    d.feature_paths.push_back(rec.feature_path);
  }
  if (d.size() == 0) throw InputError(corpus_path + ": corpus is empty");
  return d;
}

std::vector<McItem> load_mc_items(const std::string& path, const Dataset& data, const Vocabulary& vocab, Index m_max) {
  auto lookup = video_lookup(data, path);
  std::vector<McItem> items;
  for (const auto& rec : read_mc_file(path)) {
    McItem it;
    it.id = rec.id;
    it.video = find_video(lookup, rec.feature_path, path, rec.id);
    it.answer = rec.answer;
    for (const auto& ch : rec.choices) {
      try {
        it.choices.push_back(encode_sentence(tokenize(ch), vocab, m_max));
      } catch (const InputError& e) {
        throw InputError(path + ": item " + rec.id + ": " + e.what());
      }
    }
    items.push_back(std::move(it));
  }
  validate_mc_items(items, data);
  return items;
}

std::vector<FibItem> load_fib_items(const std::string& path, const Dataset& data, const Vocabulary& vocab, Index m_max) {
  auto lookup = video_lookup(data, path);
  std::vector<FibItem> items;
  for (const auto& rec : read_fib_file(path)) {
    FibItem it;
    it.id = rec.id;
    it.video = find_video(lookup, rec.feature_path, path, rec.id);
    try {
      it.sentence = encode_sentence(tokenize(rec.sentence), vocab, m_max);
    } catch (const InputError& e) {
      throw InputError(path + ": item " + rec.id + ": " + e.what());
    }
    auto answer = tokenize(rec.answer);
    auto target = answer.size() == 1 ? vocab.find(answer[0]) : std::nullopt;
    if (!target || *target == kBlankId) {
      throw InputError(path + ": item " + rec.id + ": answer '" + rec.answer + "' is not in the vocabulary");
    }
    it.target = *target;
    items.push_back(std::move(it));
  }
  validate_fib_items(items, data, vocab.size());
  return items;
}

void Dataset::validate(Index n_max, Index m_max, Index d_video, Index vocab_size) const {
  if (videos.size() != sentences.size() || ids.size() != sentences.size()) {
    throw InputError("dataset has mismatched video/sentence/id counts");
  }
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto& f = videos[i].features;
    if (f.rows() < 1 || f.rows() > n_max) {
      throw InputError(ids[i] + ": video length " + std::to_string(f.rows()) + " outside [1, n_max=" +
                       std::to_string(n_max) + "]");
    }
    if (f.cols() != d_video) {
      throw DimensionError(ids[i] + ": feature width " + std::to_string(f.cols()) + " but d_video = " +
                           std::to_string(d_video));
    }
    if (!f.allFinite()) throw InputError(ids[i] + ": non-finite frame features");
    check_sentence(sentences[i], m_max, vocab_size, ids[i]);
  }
}

void validate_mc_items(const std::vector<McItem>& items, const Dataset& data) {
  for (const auto& item : items) {
    if (item.choices.size() != 5) {
      throw InputError("multiple-choice item " + item.id + " has " + std::to_string(item.choices.size()) +
                       " choices, expected 5");
    }
    if (item.answer < 0 || item.answer >= 5) throw InputError("multiple-choice item " + item.id + " has answer out of range");
    if (item.video < 0 || item.video >= static_cast<Index>(data.videos.size())) {
      throw InputError("multiple-choice item " + item.id + " refers to a missing video");
    }
  }
}

void validate_fib_items(const std::vector<FibItem>& items, const Dataset& data, Index vocab_size) {
  for (const auto& item : items) {
    if (!item.sentence.blank_position) throw InputError("fill-in-the-blank item " + item.id + " has no blank");
    if (item.target <= 0 || item.target >= vocab_size) {
      throw InputError("fill-in-the-blank item " + item.id + " has target id out of range");
    }
    if (item.video < 0 || item.video >= static_cast<Index>(data.videos.size())) {
      throw InputError("fill-in-the-blank item " + item.id + " refers to a missing video");
    }
  }
}

}  // namespace jsfusion
