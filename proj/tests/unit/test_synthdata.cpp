#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "json.hpp"
#include "jsfusion/evaluation.hpp"
#include "jsfusion/synthdata.hpp"

using namespace jsfusion;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.vocab_size = 30;
  c.min_length = 2;
  c.max_length = 6;
  c.d_word = 8;
  c.d_video = 12;
  c.noise = 0.05;
  c.corpus_size = 40;
  c.m_max = 8;
  c.n_max = 18;
  c.seed = 7;
  return c;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("jsfusion_synth_" + name);
  fs::remove_all(p);
  return p;
}

Dataset five_examples() {
  Dataset d;
  for (Index i = 0; i < 5; ++i) {
    d.ids.push_back("e" + std::to_string(i));
    d.sentences.push_back({{i + 1, i + 2}, std::nullopt});
    VideoFeatureSequence v;
    v.features = FeatureMatrix::Zero(1, 2);
    d.videos.push_back(v);
  }
  return d;
}

}  // namespace

TEST_CASE("generated corpus respects its configuration") {
  auto cfg = small_config();
  auto c = generate_corpus(cfg);
  REQUIRE(c.data.size() == 40);
  CHECK(c.vocab.size() == 31);
  CHECK(c.vocab.embeddings().col(kBlankId).isZero());
  CHECK_NOTHROW(c.data.validate(cfg.n_max, cfg.m_max, cfg.d_video, c.vocab.size()));
  for (Index i = 0; i < c.data.size(); ++i) {
    Index len = c.data.sentences[i].length();
    Index frames = c.data.videos[i].length();
    CHECK(len >= 2);
    CHECK(len <= 6);
    CHECK(frames >= len);
    CHECK(frames <= 3 * len);
    CHECK(static_cast<Index>(c.frame_words[i].size()) == frames);
  }
}

TEST_CASE("noiseless frames of the same word are identical") {
  auto cfg = small_config();
  cfg.noise = 0.0;
  auto c = generate_corpus(cfg);
  std::map<Index, Eigen::RowVectorXf> seen;
  Index checked = 0;
  for (Index i = 0; i < c.data.size(); ++i) {
    for (std::size_t f = 0; f < c.frame_words[i].size(); ++f) {
      Eigen::RowVectorXf row = c.data.videos[i].features.row(static_cast<Index>(f));
      auto [it, fresh] = seen.emplace(c.frame_words[i][f], row);
      if (!fresh) {
        CHECK(it->second == row);
        ++checked;
      }
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("frame noise has the configured spread") {
  auto cfg = small_config();
  cfg.noise = 0.3;
  cfg.corpus_size = 200;
  auto c = generate_corpus(cfg);
  Eigen::MatrixXd images = c.projection * c.vocab.embeddings();
  double sq = 0;
  Index n = 0;
  for (Index i = 0; i < c.data.size(); ++i) {
    for (std::size_t f = 0; f < c.frame_words[i].size(); ++f) {
      Eigen::VectorXd diff = c.data.videos[i].features.row(static_cast<Index>(f)).cast<double>().transpose() -
                             images.col(c.frame_words[i][f]);
      sq += diff.squaredNorm();
      n += diff.size();
    }
  }
  CHECK(std::sqrt(sq / static_cast<double>(n)) == doctest::Approx(0.3).epsilon(0.03));
}

TEST_CASE("generation is deterministic in the seed") {
  auto cfg = small_config();
  auto a = generate_corpus(cfg), b = generate_corpus(cfg);
  CHECK(a.data.sentences == b.data.sentences);
  for (Index i = 0; i < a.data.size(); ++i) CHECK(a.data.videos[i].features == b.data.videos[i].features);
  CHECK(a.vocab.embeddings() == b.vocab.embeddings());
  cfg.seed = 8;
  auto c = generate_corpus(cfg);
  CHECK(c.data.sentences != a.data.sentences);
}

TEST_CASE("generator validation") {
  auto cfg = small_config();
  cfg.n_max = 17;  // 6 words x 3 frames = 18 frames
  CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
  cfg = small_config();
  cfg.noise = -0.1;
  CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
  cfg = small_config();
  cfg.max_length = 9;
  CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
}

TEST_CASE("raw-feature cosine matching beats chance") {
  auto cfg = small_config();
  auto c = generate_corpus(cfg);
  ScoreMatrix m;
  m.scores = cosine_baseline_scores(c);
  for (Index i = 0; i < c.data.size(); ++i) m.gt.push_back(i);
  auto r = retrieval_metrics(m);
  // chance: R@1 = 1/40, MedR = 20.5
  CHECK(r.recall_at[1] > 0.5);
  CHECK(r.median_rank <= 2.0);
}

TEST_CASE("multiple-choice items") {
  Rng rng(1);
  Dataset five = five_examples();
  auto items = make_multiple_choice(five, rng);
  REQUIRE(items.size() == 5);
  for (const auto& it : items) {
    REQUIRE(it.choices.size() == 5);
    CHECK(it.choices[it.answer] == five.sentences[it.video]);
    std::set<std::vector<Index>> got;
    for (const auto& ch : it.choices) got.insert(ch.token_ids);
    std::set<std::vector<Index>> all;
    for (const auto& s : five.sentences) all.insert(s.token_ids);
    CHECK(got == all);
  }

  auto c = generate_corpus(small_config());
  c.data.sentences[3] = c.data.sentences[0];  // a duplicated caption is never a distractor
  Rng r1(5), r2(5);
  auto a = make_multiple_choice(c.data, r1), b = make_multiple_choice(c.data, r2);
  std::vector<int> answer_hist(5, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].choices == b[i].choices);
    CHECK(a[i].answer == b[i].answer);
    ++answer_hist[a[i].answer];
    for (Index k = 0; k < 5; ++k) {
      if (k != a[i].answer) CHECK(a[i].choices[k].token_ids != a[i].choices[a[i].answer].token_ids);
    }
  }
  CHECK(make_multiple_choice(c.data, r1, 20).size() == 20);

  Dataset four = five;
  four.sentences[4] = four.sentences[0];
  CHECK_THROWS_AS(make_multiple_choice(four, rng), ConfigError);
}

TEST_CASE("fill-in-the-blank items") {
  Dataset d;
  d.ids = {"a", "b", "c"};
  d.sentences = {{{4, 9}, std::nullopt}, {{7}, std::nullopt}, {{1, 2, 3, 4, 5}, std::nullopt}};
  d.videos.resize(3);
  Rng rng(2);
  auto fib = make_fib(d, rng, 1);
  CHECK(fib.skipped == 1);
  REQUIRE(fib.items.size() == 2);
  for (const auto& it : fib.items) {
    REQUIRE(it.sentence.blank_position);
    Index p = *it.sentence.blank_position;
    const auto& orig = d.sentences[it.video];
    CHECK(it.sentence.token_ids[p] == kBlankId);
    CHECK(it.target == orig.token_ids[p]);
    for (Index t = 0; t < orig.length(); ++t) {
      if (t != p) CHECK(it.sentence.token_ids[t] == orig.token_ids[t]);
    }
  }
  CHECK(*fib.items[0].sentence.blank_position < 2);

  // blank position frequencies over 10^4 draws on a length-5 sentence
  Dataset one;
  one.ids = {"x"};
  one.sentences = {d.sentences[2]};
  one.videos.resize(1);
  auto many = make_fib(one, rng, 10000);
  std::vector<double> counts(5, 0.0);
  for (const auto& it : many.items) counts[*it.sentence.blank_position] += 1;
  double chi2 = 0;
  for (double c : counts) chi2 += (c - 2000.0) * (c - 2000.0) / 2000.0;
  CHECK(chi2 < 18.47);  // chi-square, 4 degrees of freedom, p = 0.001
  CHECK_THROWS_AS(make_fib(one, rng, 0), ConfigError);
}

TEST_CASE("written corpus loads back identically") {
  auto cfg = small_config();
  auto c = generate_corpus(cfg);
  Rng rng(3);
  auto mc = make_multiple_choice(c.data, rng, 10);
  auto fib = make_fib(c.data, rng);
  DataConfig names;
  names.synth = cfg;
  fs::path dir = scratch("roundtrip");
  auto files = write_synthetic_corpus(dir.string(), names, c, mc, fib);

  Vocabulary vocab = read_vocabulary(files.vocab);
  CHECK(vocab.words() == c.vocab.words());
  Dataset d = load_dataset(files.corpus, vocab, cfg.m_max, cfg.n_max);
  REQUIRE(d.size() == c.data.size());
  CHECK(d.ids == c.data.ids);
  CHECK(d.sentences == c.data.sentences);
  for (Index i = 0; i < d.size(); ++i) CHECK(d.videos[i].features == c.data.videos[i].features);

  auto mc2 = load_mc_items(files.mc, d, vocab, cfg.m_max);
  REQUIRE(mc2.size() == mc.size());
  for (std::size_t i = 0; i < mc.size(); ++i) {
    CHECK(mc2[i].video == mc[i].video);
    CHECK(mc2[i].answer == mc[i].answer);
    CHECK(mc2[i].choices == mc[i].choices);
  }
  auto fib2 = load_fib_items(files.fib, d, vocab, cfg.m_max);
  REQUIRE(fib2.size() == fib.items.size());
  for (std::size_t i = 0; i < fib2.size(); ++i) {
    CHECK(fib2[i].sentence == fib.items[i].sentence);
    CHECK(fib2[i].target == fib.items[i].target);
  }

  auto manifest = nlohmann::json::parse(read_text_file(files.manifest));
  CHECK(manifest["seed"] == 7);
  CHECK(manifest["fib_items"] == fib.items.size());

  fs::path again = scratch("roundtrip2");
  auto files2 = write_synthetic_corpus(again.string(), names, c, mc, fib);
  CHECK(read_text_file(files.corpus) == read_text_file(files2.corpus));
  CHECK(read_text_file(files.embeddings) == read_text_file(files2.embeddings));
  CHECK(read_text_file((dir / "features" / (c.data.ids[5] + ".jsfv")).string()) ==
        read_text_file((again / "features" / (c.data.ids[5] + ".jsfv")).string()));

  // a task file naming a video outside the corpus
  write_text_file((dir / "bad_mc.jsonl").string(),
                  R"({"id":"m","feature_path":"features/none.jsfv","choices":["w01","w02","w03","w04","w05"],"answer":0})" "\n");
  CHECK_THROWS_AS(load_mc_items((dir / "bad_mc.jsonl").string(), d, vocab, cfg.m_max), InputError);
  write_text_file((dir / "bad_fib.jsonl").string(),
                  R"({"id":"f","feature_path":"features/ex00.jsfv","sentence":"w01 <blank>","answer":"nope"})" "\n");
  CHECK_THROWS_AS(load_fib_items((dir / "bad_fib.jsonl").string(), d, vocab, cfg.m_max), InputError);
  fs::remove_all(dir);
  fs::remove_all(again);
}
