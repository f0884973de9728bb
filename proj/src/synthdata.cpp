#include "jsfusion/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "json.hpp"

namespace jsfusion {

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::string numbered(const char* prefix, Index i, Index width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*lld", prefix, static_cast<int>(width), static_cast<long long>(i));
  return buf;
}

Index digits(Index n) { return static_cast<Index>(std::to_string(std::max<Index>(n, 1)).size()); }

}  // namespace

SynthCorpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Rng latent_rng = rng.derive(1), proj_rng = rng.derive(2), seq_rng = rng.derive(3), noise_rng = rng.derive(4);

  SynthCorpus c;
  std::vector<std::string> words;
  for (Index w = 1; w <= cfg.vocab_size; ++w) words.push_back(numbered("w", w, digits(cfg.vocab_size)));
  c.vocab = Vocabulary::from_words(words);
  Eigen::MatrixXd& e = c.vocab.embeddings();
  e = Eigen::MatrixXd::Zero(cfg.d_word, c.vocab.size());
  for (Index w = 1; w < c.vocab.size(); ++w) {
    for (Index k = 0; k < cfg.d_word; ++k) e(k, w) = latent_rng.normal();
  }
  c.projection.resize(cfg.d_video, cfg.d_word);
  double s = 1.0 / std::sqrt(static_cast<double>(cfg.d_word));
  for (Index i = 0; i < c.projection.size(); ++i) c.projection.data()[i] = s * proj_rng.normal();
  Eigen::MatrixXd images = c.projection * e;  // column w = P e_w

  auto between = [](Rng& r, Index lo, Index hi) { return lo + static_cast<Index>(r.below(static_cast<std::uint64_t>(hi - lo + 1))); };
  Index width = digits(cfg.corpus_size);
  for (Index i = 0; i < cfg.corpus_size; ++i) {
    WordSequence sentence;
    Index len = between(seq_rng, cfg.min_length, cfg.max_length);
    std::vector<Index> frames;
    for (Index t = 0; t < len; ++t) {
      Index w = 1 + static_cast<Index>(seq_rng.below(static_cast<std::uint64_t>(cfg.vocab_size)));
      sentence.token_ids.push_back(w);
      Index reps = between(seq_rng, cfg.min_frames_per_word, cfg.max_frames_per_word);
      for (Index r = 0; r < reps; ++r) frames.push_back(w);
    }
    VideoFeatureSequence video;
    video.features.resize(static_cast<Index>(frames.size()), cfg.d_video);
    for (std::size_t f = 0; f < frames.size(); ++f) {
      for (Index k = 0; k < cfg.d_video; ++k) {
        double v = images(k, frames[f]) + (cfg.noise > 0 ? cfg.noise * noise_rng.normal() : 0.0);
        video.features(static_cast<Index>(f), k) = static_cast<float>(v);
      }
    }
    c.data.ids.push_back(numbered("ex", i, width));
    c.data.videos.push_back(std::move(video));
    c.data.sentences.push_back(std::move(sentence));
    c.frame_words.push_back(std::move(frames));
  }
  return c;
}

std::vector<McItem> make_multiple_choice(const Dataset& data, Rng& rng, Index count) {
  Index n = data.size();
  if (count <= 0 || count > n) count = n;
  std::vector<McItem> items;
  Index width = digits(count);
  for (Index i = 0; i < count; ++i) {
    const WordSequence& truth = data.sentences[static_cast<std::size_t>(i)];
    std::vector<Index> pool;
    for (Index j = 0; j < n; ++j) {
      if (j != i && data.sentences[static_cast<std::size_t>(j)].token_ids != truth.token_ids) pool.push_back(j);
    }
    if (pool.size() < 4) {
      throw ConfigError("multiple-choice generation needs at least 5 distinct sentences; example " +
                        data.ids[static_cast<std::size_t>(i)] + " has only " + std::to_string(pool.size()) +
                        " other sentences that differ from it");
    }
    auto pn = static_cast<Index>(pool.size());
    for (Index k = 0; k < 4; ++k) {
      Index j = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(pn - k)));
      std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
    }
    McItem it;
    it.id = numbered("mc", i, width);
    it.video = i;
    it.answer = static_cast<Index>(rng.below(5));
    for (Index k = 0, d = 0; k < 5; ++k) {
      it.choices.push_back(k == it.answer ? truth : data.sentences[static_cast<std::size_t>(pool[static_cast<std::size_t>(d++)])]);
    }
    items.push_back(std::move(it));
  }
  return items;
}

FibSet make_fib(const Dataset& data, Rng& rng, Index per_sentence) {
  if (per_sentence < 1) throw ConfigError("data.fib_per_sentence must be at least 1");
  FibSet out;
  Index width = digits(data.size() * per_sentence);
  for (Index i = 0; i < data.size(); ++i) {
    const WordSequence& s = data.sentences[static_cast<std::size_t>(i)];
    if (s.length() < 2) {
      ++out.skipped;
      continue;
    }
    for (Index r = 0; r < per_sentence; ++r) {
      auto pos = static_cast<Index>(rng.below(static_cast<std::uint64_t>(s.length())));
      FibItem it;
      it.id = numbered("fib", static_cast<Index>(out.items.size()), width);
      it.video = i;
      it.sentence = s;
      it.target = s.token_ids[static_cast<std::size_t>(pos)];
      it.sentence.token_ids[static_cast<std::size_t>(pos)] = kBlankId;
      it.sentence.blank_position = pos;
      out.items.push_back(std::move(it));
    }
  }
  return out;
}

Eigen::MatrixXd cosine_baseline_scores(const SynthCorpus& corpus) {
  const Dataset& d = corpus.data;
  Index n = d.size();
  std::vector<Eigen::VectorXd> text(static_cast<std::size_t>(n)), video(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto& s = d.sentences[static_cast<std::size_t>(i)];
    Eigen::VectorXd m = Eigen::VectorXd::Zero(corpus.vocab.embedding_dim());
    for (Index w : s.token_ids) m += corpus.vocab.embeddings().col(w);
    text[static_cast<std::size_t>(i)] = (corpus.projection * m).normalized();
    Eigen::VectorXd f = d.videos[static_cast<std::size_t>(i)].features.cast<double>().colwise().mean().transpose();
    video[static_cast<std::size_t>(i)] = f.normalized();
  }
  Eigen::MatrixXd scores(n, n);
  for (Index q = 0; q < n; ++q) {
    for (Index v = 0; v < n; ++v) scores(q, v) = text[static_cast<std::size_t>(q)].dot(video[static_cast<std::size_t>(v)]);
  }
  return scores;
}

SynthFiles write_synthetic_corpus(const std::string& dir, const DataConfig& names, const SynthCorpus& corpus,
                                  const std::vector<McItem>& mc, const FibSet& fib) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "features");
  SynthFiles files;
  auto at = [&](const std::string& name) { return (fs::path(dir) / name).string(); };
  files.corpus = at(names.corpus);
  files.embeddings = at(names.embeddings);
  files.vocab = at(names.vocab.empty() ? "vocab.txt" : names.vocab);
  files.mc = at(names.mc);
  files.fib = at(names.fib);
  files.manifest = at("manifest.json");

  const Dataset& d = corpus.data;
  std::vector<std::string> feature_paths;
  std::vector<CorpusRecord> records;
  for (Index i = 0; i < d.size(); ++i) {
    std::string rel = "features/" + d.ids[static_cast<std::size_t>(i)] + ".jsfv";
    write_feature_file(at(rel), d.videos[static_cast<std::size_t>(i)]);
    feature_paths.push_back(rel);
    records.push_back({d.ids[static_cast<std::size_t>(i)], join(decode_sentence(d.sentences[static_cast<std::size_t>(i)], corpus.vocab)), rel});
  }
  write_corpus(files.corpus, records);
  write_embeddings(files.embeddings, corpus.vocab);
  write_vocabulary(files.vocab, corpus.vocab);

  std::vector<McRecord> mc_records;
  for (const auto& it : mc) {
    McRecord r{it.id, feature_paths[static_cast<std::size_t>(it.video)], {}, it.answer};
    for (const auto& ch : it.choices) r.choices.push_back(join(decode_sentence(ch, corpus.vocab)));
    mc_records.push_back(std::move(r));
  }
  write_mc_file(files.mc, mc_records);

  std::vector<FibRecord> fib_records;
  for (const auto& it : fib.items) {
    fib_records.push_back({it.id, feature_paths[static_cast<std::size_t>(it.video)],
                           join(decode_sentence(it.sentence, corpus.vocab)), corpus.vocab.word(it.target)});
  }
  write_fib_file(files.fib, fib_records);

  const SynthConfig& s = names.synth;
  nlohmann::ordered_json m;
  m["seed"] = s.seed;
  m["corpus_size"] = d.size();
  m["vocab_size"] = s.vocab_size;
  m["min_length"] = s.min_length;
  m["max_length"] = s.max_length;
  m["min_frames_per_word"] = s.min_frames_per_word;
  m["max_frames_per_word"] = s.max_frames_per_word;
  m["d_word"] = s.d_word;
  m["d_video"] = s.d_video;
  m["noise"] = s.noise;
  m["mc_items"] = mc.size();
  m["fib_items"] = fib.items.size();
  m["fib_skipped"] = fib.skipped;
  m["files"] = {{"corpus", names.corpus}, {"embeddings", names.embeddings}, {"vocab", fs::path(files.vocab).filename().string()},
                {"mc", names.mc}, {"fib", names.fib}};
  write_text_file(files.manifest, m.dump(2) + "\n");
  return files;
}

}  // namespace jsfusion
