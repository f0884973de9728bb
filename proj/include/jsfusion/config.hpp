#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "jsfusion/errors.hpp"
#include "jsfusion/tensor.hpp"

namespace jsfusion {

enum class Variant { match, fib };
enum class Task { retrieval, mc, fib };

std::string to_string(Variant v);
std::string to_string(Task t);

/// Every layer width of the model plus the options that change its
/// structure. Defaults are the matching model of the reference layer table;
/// fill_in_blank() applies the deeper FIB widths.
struct ModelConfig {
  Variant variant = Variant::match;
  Index n_max = 40;
  Index m_max = 40;
  Index vocab_size = 2;
  Index d_word = 300;
  Index d_video = 2176;
  Index lstm_hidden = 512;
  Index d_cnn = 2048;
  Index cnn_kernel = 3;
  Index d_d1 = 512;
  Index d_d2 = 512;
  Index d_d3 = 512;
  Index d_d4 = 512;
  Index conv_kernel = 3;
  std::array<Index, 3> conv_channels{256, 256, 256};
  std::array<Index, 3> conv_strides{1, 1, 2};
  Index d_d5 = 256;
  Index d_d6 = 256;
  Index d_d7 = 128;
  Index d_d8 = 1;
  double dropout = 0.0;
  bool gating = true;
  bool fib_skip_embedding_only = false;
  double bn_momentum = 0.99;
  double bn_eps = 1e-5;
  std::uint64_t init_seed = 1;

  static ModelConfig matching();
  static ModelConfig fill_in_blank(Index vocab_size);
  /// 6x6 tensor, widths of at most 8 and 2x2 decoder kernels (3x3 kernels
  /// would underflow a 6x6 input by the third stage).
  static ModelConfig tiny(Variant variant, Index vocab_size = 20);

  Index word_feature_width() const { return 2 * lstm_hidden + d_word; }
  Index video_feature_width() const { return d_cnn + d_video; }

  struct Extent {
    Index rows = 0;
    Index cols = 0;
    Index channels = 0;
  };
  /// Extents of J(0)..J(3). Throws ConfigError on underflow.
  std::array<Extent, 4> stage_schedule() const;

  void validate() const;

  template <typename Self, typename Visitor>
  static void visit(Self& c, Visitor&& v) {
    v("variant", c.variant);
    v("n_max", c.n_max);
    v("m_max", c.m_max);
    v("vocab_size", c.vocab_size);
    v("d_word", c.d_word);
    v("d_video", c.d_video);
    v("lstm_hidden", c.lstm_hidden);
    v("d_cnn", c.d_cnn);
    v("cnn_kernel", c.cnn_kernel);
    v("d_d1", c.d_d1);
    v("d_d2", c.d_d2);
    v("d_d3", c.d_d3);
    v("d_d4", c.d_d4);
    v("conv_kernel", c.conv_kernel);
    v("conv_channels", c.conv_channels);
    v("conv_strides", c.conv_strides);
    v("d_d5", c.d_d5);
    v("d_d6", c.d_d6);
    v("d_d7", c.d_d7);
    v("d_d8", c.d_d8);
    v("dropout", c.dropout);
    v("gating", c.gating);
    v("fib_skip_embedding_only", c.fib_skip_embedding_only);
    v("bn_momentum", c.bn_momentum);
    v("bn_eps", c.bn_eps);
    v("init_seed", c.init_seed);
  }
};

struct TrainConfig {
  Task task = Task::retrieval;
  Index batch_size = 10;
  double margin = 10.0;
  double weight_decay = 0.0005;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index epochs = 1;
  std::uint64_t seed = 1;
  double clip_norm = 0.0;
  Index batches_per_epoch = 0;
  Index checkpoint_every = 0;
  // probability that a retrieval negative keeps the anchor video and swaps
  // in another sentence instead of keeping the anchor sentence
  double mixed_negatives = 0.5;
  // ranking groups (anchor + its L-1 negatives) per optimizer step
  Index anchors_per_step = 1;

  void validate() const;

  template <typename Self, typename Visitor>
  static void visit(Self& c, Visitor&& v) {
    v("task", c.task);
    v("batch_size", c.batch_size);
    v("margin", c.margin);
    v("weight_decay", c.weight_decay);
    v("learning_rate", c.learning_rate);
    v("beta1", c.beta1);
    v("beta2", c.beta2);
    v("adam_eps", c.adam_eps);
    v("epochs", c.epochs);
    v("seed", c.seed);
    v("clip_norm", c.clip_norm);
    v("batches_per_epoch", c.batches_per_epoch);
    v("checkpoint_every", c.checkpoint_every);
    v("mixed_negatives", c.mixed_negatives);
    v("anchors_per_step", c.anchors_per_step);
  }
};

/// Parameters of the planted-alignment generator.
struct SynthConfig {
  Index vocab_size = 50;
  Index min_length = 3;
  Index max_length = 8;
  Index min_frames_per_word = 1;
  Index max_frames_per_word = 3;
  Index d_word = 300;
  Index d_video = 2176;
  double noise = 0.05;
  Index corpus_size = 200;
  Index m_max = 40;
  Index n_max = 40;
  std::uint64_t seed = 1;

  void validate() const;
};

/// File locations and preprocessing knobs used by the command-line tool,
/// plus the generator parameters under the same section.
struct DataConfig {
  std::string dir = "data";
  std::string corpus = "corpus.jsonl";
  std::string embeddings = "embeddings.txt";
  std::string mc = "mc.jsonl";
  std::string fib = "fib.jsonl";
  std::string vocab;
  std::string checkpoint;
  Index min_count = 4;
  Index pool_size = 1000;
  Index example = 0;
  Index mc_items = 0;
  Index fib_per_sentence = 1;
  SynthConfig synth;

  template <typename Self, typename Visitor>
  static void visit(Self& c, Visitor&& v) {
    v("dir", c.dir);
    v("corpus", c.corpus);
    v("embeddings", c.embeddings);
    v("mc", c.mc);
    v("fib", c.fib);
    v("vocab", c.vocab);
    v("checkpoint", c.checkpoint);
    v("min_count", c.min_count);
    v("pool_size", c.pool_size);
    v("example", c.example);
    v("mc_items", c.mc_items);
    v("fib_per_sentence", c.fib_per_sentence);
    v("synth_vocab_size", c.synth.vocab_size);
    v("synth_min_length", c.synth.min_length);
    v("synth_max_length", c.synth.max_length);
    v("synth_min_frames_per_word", c.synth.min_frames_per_word);
    v("synth_max_frames_per_word", c.synth.max_frames_per_word);
    v("synth_d_word", c.synth.d_word);
    v("synth_d_video", c.synth.d_video);
    v("synth_noise", c.synth.noise);
    v("synth_corpus_size", c.synth.corpus_size);
    v("synth_m_max", c.synth.m_max);
    v("synth_n_max", c.synth.n_max);
    v("synth_seed", c.synth.seed);
  }
};

/// Sectioned key-value configuration: [model], [train], [data].
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  /// Sets "section.key" from its text form. Unknown keys are rejected.
  void set(const std::string& dotted_key, const std::string& value);

  /// Reads the flat INI-style text format (comments with '#' or ';').
  void merge_text(const std::string& text, const std::string& origin = "<config>");
  void merge_file(const std::string& path);

  /// Canonical text form; merge_text(to_text()) reproduces this config.
  std::string to_text() const;
};

/// Section-less key=value text for one ModelConfig (checkpoint header).
std::string model_config_to_text(const ModelConfig& config);
ModelConfig model_config_from_text(const std::string& text);

}  // namespace jsfusion
