#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jsfusion/chd.hpp"
#include "jsfusion/config.hpp"
#include "jsfusion/encoders.hpp"
#include "jsfusion/jst.hpp"

namespace jsfusion {

/// Intermediate tensors of one forward pass, for shape walks and
/// attention/gate dumps.
template <typename Scalar>
struct ForwardTrace {
  Tensor<Scalar> word_features;   // [B*M, 2H + d]
  Tensor<Scalar> video_features;  // [B*N, d_cnn + d_v]
  Tensor<Scalar> word_proj;       // [B*M, d_D1]
  Tensor<Scalar> video_proj;      // [B*N, d_D1]
  Tensor<Scalar> joint;           // [B, N, M, d_D4]
  std::optional<Tensor<Scalar>> alpha;
  typename HierarchicalDecoder<Scalar>::Trace decoder;
  std::optional<Tensor<Scalar>> skip;
  Tensor<Scalar> output;          // [B, d_D8]
};

/// The full network: encoders, D1 projections, JST, CHD and the output
/// head. The matching variant emits one score per (video, sentence) pair;
/// the fill-in-the-blank variant emits |V| logits and adds the blank's D1w
/// feature to the D7 output.
template <typename Scalar = double>
class JsFusion {
 public:
  explicit JsFusion(const ModelConfig& config) : config_(config), dropout_rng_(config.init_seed ^ 0x9E3779B97F4A7C15ull) {
    config_.validate();
    Rng rng(config_.init_seed);
    const auto& c = config_;
    words_ = WordEncoder<Scalar>(c.vocab_size, c.d_word, c.lstm_hidden, rng);
    video_ = VideoEncoder<Scalar>(c.d_video, c.d_cnn, c.cnn_kernel, rng);
    d1w_ = Dense<Scalar>(c.word_feature_width(), c.d_d1, rng, true, true, c.bn_momentum, c.bn_eps);
    d1v_ = Dense<Scalar>(c.video_feature_width(), c.d_d1, rng, true, true, c.bn_momentum, c.bn_eps);
    jst_ = JointTensorBuilder<Scalar>(c.d_d1, c.d_d2, c.d_d3, c.d_d4, c.gating, rng, c.bn_momentum, c.bn_eps);
    chd_ = HierarchicalDecoder<Scalar>(c.conv_kernel, c.d_d4, c.conv_channels, c.conv_strides,
                                       {c.d_d5, c.d_d6, c.d_d7, c.d_d8}, c.gating, c.dropout, rng, c.bn_momentum,
                                       c.bn_eps);
  }

  const ModelConfig& config() const { return config_; }
  bool is_fib() const { return config_.variant == Variant::fib; }

  /// Outputs [B, d_D8] for B aligned (video, sentence) pairs.
  Tensor<Scalar> forward(const VideoBatch<Scalar>& vb, const WordBatch& wb, Mode mode,
                         ForwardTrace<Scalar>* trace = nullptr) {
    if (vb.batch != wb.batch) {
      throw ShapeError("video batch of " + std::to_string(vb.batch) + " vs sentence batch of " +
                       std::to_string(wb.batch));
    }
    if (vb.steps != config_.n_max || wb.steps != config_.m_max) {
      throw ShapeError("batches padded to " + std::to_string(vb.steps) + "x" + std::to_string(wb.steps) +
                       " but model expects n_max x m_max = " + std::to_string(config_.n_max) + "x" +
                       std::to_string(config_.m_max));
    }
    Index batch = vb.batch;
    std::vector<Index> blank_rows;
    if (is_fib()) {
      for (Index b = 0; b < batch; ++b) {
        const auto& pos = wb.blank_positions[static_cast<std::size_t>(b)];
        if (!pos) throw InputError("fill-in-the-blank input " + std::to_string(b) + " has no blank token");
        blank_rows.push_back(b * wb.steps + *pos);
      }
    }

    Tensor<Scalar> embedded;
    Tensor<Scalar> xw = words_(wb, &embedded);
    Tensor<Scalar> pw = d1w_(xw, mode);
    Tensor<Scalar> xv = video_(vb);
    Tensor<Scalar> pv = d1v_(xv, mode);
    auto jst = jst_(pv, pw, batch, mode);

    ForwardTrace<Scalar> local;
    ForwardTrace<Scalar>& tr = trace ? *trace : local;
    Tensor<Scalar> pooled = chd_.decode(jst.joint, trace ? &tr.decoder : nullptr);

    std::optional<Tensor<Scalar>> skip;
    if (is_fib()) {
      std::span<const Index> rows(blank_rows);
      if (config_.fib_skip_embedding_only) {
        Tensor<Scalar> context = Tensor<Scalar>::zeros({batch, 2 * config_.lstm_hidden});
        skip = d1w_(concat_cols<Scalar>({context, gather_rows(embedded, rows)}), mode, false);
      } else {
        skip = gather_rows(pw, rows);
      }
    }
    Tensor<Scalar> out = chd_.head(pooled, mode, dropout_rng_, skip ? &*skip : nullptr, trace ? &tr.decoder : nullptr);
    if (trace) {
      tr.word_features = xw;
      tr.video_features = xv;
      tr.word_proj = pw;
      tr.video_proj = pv;
      tr.joint = jst.joint;
      tr.alpha = jst.alpha;
      tr.skip = skip;
      tr.output = out;
    }
    return out;
  }

  Tensor<Scalar> forward(const std::vector<const VideoFeatureSequence*>& videos,
                         const std::vector<const WordSequence*>& sentences, Mode mode,
                         ForwardTrace<Scalar>* trace = nullptr) {
    return forward(make_video_batch<Scalar>(videos, config_.n_max, config_.d_video),
                   make_word_batch(sentences, config_.m_max, config_.vocab_size), mode, trace);
  }

  /// Inference-mode compatibility score of one pair.
  Scalar match_score(const VideoFeatureSequence& video, const WordSequence& sentence) {
    require_variant(Variant::match, "match_score");
    NoGradScope no_grad;
    return forward({&video}, {&sentence}, Mode::infer).item();
  }

  /// Inference-mode scores of `video` against each sentence.
  std::vector<Scalar> score_sentences(const VideoFeatureSequence& video, const std::vector<const WordSequence*>& sentences) {
    require_variant(Variant::match, "score_sentences");
    NoGradScope no_grad;
    std::vector<const VideoFeatureSequence*> videos(sentences.size(), &video);
    auto out = forward(videos, sentences, Mode::infer);
    return {out.value().data(), out.value().data() + out.size()};
  }

  /// Inference-mode scores of `sentence` against each video.
  std::vector<Scalar> score_videos(const std::vector<const VideoFeatureSequence*>& videos, const WordSequence& sentence) {
    require_variant(Variant::match, "score_videos");
    NoGradScope no_grad;
    std::vector<const WordSequence*> sentences(videos.size(), &sentence);
    auto out = forward(videos, sentences, Mode::infer);
    return {out.value().data(), out.value().data() + out.size()};
  }

  /// Index of the highest-scoring of exactly five choices (lowest index on ties).
  Index multiple_choice(const VideoFeatureSequence& video, const std::vector<WordSequence>& choices) {
    if (choices.size() != 5) {
      throw InputError("multiple choice needs exactly 5 choices, got " + std::to_string(choices.size()));
    }
    std::vector<const WordSequence*> ptrs;
    for (const auto& c : choices) ptrs.push_back(&c);
    return argmax_first(score_sentences(video, ptrs));
  }

  VectorX<Scalar> fib_logits(const VideoFeatureSequence& video, const WordSequence& sentence) {
    require_variant(Variant::fib, "fib_logits");
    NoGradScope no_grad;
    return forward({&video}, {&sentence}, Mode::infer).value();
  }

  Index fib_predict(const VideoFeatureSequence& video, const WordSequence& sentence) {
    VectorX<Scalar> logits = fib_logits(video, sentence);
    return argmax_first(std::vector<Scalar>(logits.data(), logits.data() + logits.size()));
  }

  ParamList<Scalar> parameters() {
    ParamList<Scalar> params;
    BufferList<Scalar> buffers;
    collect(params, buffers);
    return params;
  }

  BufferList<Scalar> buffers() {
    ParamList<Scalar> params;
    BufferList<Scalar> buffers;
    collect(params, buffers);
    return buffers;
  }

  Index parameter_count() {
    Index n = 0;
    for (auto& p : parameters()) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  void set_embeddings(const Eigen::MatrixXd& e) { words_.set_embeddings(e); }

  Rng& dropout_rng() { return dropout_rng_; }

  WordEncoder<Scalar>& word_encoder() { return words_; }
  VideoEncoder<Scalar>& video_encoder() { return video_; }
  Dense<Scalar>& d1_word() { return d1w_; }
  Dense<Scalar>& d1_video() { return d1v_; }
  JointTensorBuilder<Scalar>& jst() { return jst_; }
  HierarchicalDecoder<Scalar>& decoder() { return chd_; }

  template <typename T>
  static Index argmax_first(const std::vector<T>& v) {
    Index best = 0;
    for (Index i = 1; i < static_cast<Index>(v.size()); ++i) {
      if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
  }

 private:
  void require_variant(Variant v, const char* op) const {
    if (config_.variant != v) {
      throw UsageError(std::string(op) + " needs the " + to_string(v) + " variant, model is " +
                       to_string(config_.variant));
    }
  }

  void collect(ParamList<Scalar>& params, BufferList<Scalar>& buffers) {
    words_.collect("word", params);
    video_.collect("video.cnn", params);
    d1w_.collect("d1w", params, buffers);
    d1v_.collect("d1v", params, buffers);
    jst_.collect("jst", params, buffers);
    chd_.collect("chd", params, buffers);
  }

  ModelConfig config_;
  Rng dropout_rng_;
  WordEncoder<Scalar> words_;
  VideoEncoder<Scalar> video_;
  Dense<Scalar> d1w_, d1v_;
  JointTensorBuilder<Scalar> jst_;
  HierarchicalDecoder<Scalar> chd_;
};

// ---------------------------------------------------------------------------
// Checkpoints: "JSFM", u32 version, u32 length + model config text,
// u32 blob count, then per blob u32 name length + name, u32 rank,
// u64 dims, f64 payload. All little-endian.

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'J', 'S', 'F', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    need(sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(origin_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated checkpoint");
  }

  std::string_view bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename Scalar>
std::string encode_checkpoint(JsFusion<Scalar>& model) {
  std::string out(detail::kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, detail::kCheckpointVersion);
  std::string cfg = model_config_to_text(model.config());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  auto params = model.parameters();
  auto buffers = model.buffers();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size() + buffers.size()));
  auto blob = [&](const std::string& name, const Shape& shape, const VectorX<Scalar>& values) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (Index d : shape) detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < values.size(); ++i) detail::put_le<double>(out, static_cast<double>(values[i]));
  };
  for (auto& p : params) blob(p.name, p.tensor.shape(), p.tensor.value());
  for (auto& b : buffers) blob(b.name, Shape{b.values->size()}, *b.values);
  return out;
}

template <typename Scalar>
JsFusion<Scalar> decode_checkpoint(std::string_view bytes, const std::string& origin = "<memory>") {
  detail::ByteReader in(bytes, origin);
  if (in.get_string(4) != std::string(detail::kCheckpointMagic, 4)) in.fail("bad checkpoint magic");
  auto version = in.get<std::uint32_t>();
  if (version != detail::kCheckpointVersion) in.fail("unsupported checkpoint version " + std::to_string(version));
  auto cfg_len = in.get<std::uint32_t>();
  JsFusion<Scalar> model(model_config_from_text(in.get_string(cfg_len)));

  std::map<std::string, std::pair<Shape, VectorX<Scalar>*>> slots;
  for (auto& p : model.parameters()) slots[p.name] = {p.tensor.shape(), &p.tensor.value()};
  for (auto& b : model.buffers()) slots[b.name] = {Shape{b.values->size()}, b.values};

  auto count = in.get<std::uint32_t>();
  std::map<std::string, bool> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.get_string(in.get<std::uint32_t>());
    auto it = slots.find(name);
    if (it == slots.end()) in.fail("unknown checkpoint blob '" + name + "'");
    if (seen[name]) in.fail("duplicate checkpoint blob '" + name + "'");
    seen[name] = true;
    auto rank = in.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Index>(in.get<std::uint64_t>()));
    if (shape != it->second.first) {
      throw DimensionError(origin + ": blob '" + name + "' has shape " + shape_string(shape) + " but the model expects " +
                           shape_string(it->second.first));
    }
    VectorX<Scalar>& dst = *it->second.second;
    for (Index k = 0; k < dst.size(); ++k) dst[k] = static_cast<Scalar>(in.get<double>());
  }
  if (seen.size() != slots.size()) {
    for (auto& [name, slot] : slots) {
      if (!seen.count(name)) in.fail("checkpoint is missing blob '" + name + "'");
    }
  }
  if (!in.done()) in.fail("trailing bytes after checkpoint");
  return model;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, JsFusion<Scalar>& model) {
  write_text_file(path, encode_checkpoint(model));
}

template <typename Scalar = double>
JsFusion<Scalar> load_checkpoint(const std::string& path) {
  return decode_checkpoint<Scalar>(read_text_file(path), path);
}

/// Plain-text (P2) grayscale image of values in [lo, hi].
inline void write_pgm(const std::string& path, const Eigen::MatrixXd& values, double lo = 0.0, double hi = 1.0) {
  std::string text = "P2\n" + std::to_string(values.cols()) + " " + std::to_string(values.rows()) + "\n255\n";
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) {
      double u = (values(r, c) - lo) / (hi - lo);
      int level = static_cast<int>(std::lround(255.0 * std::clamp(u, 0.0, 1.0)));
      text += std::to_string(level);
      text += c + 1 == values.cols() ? '\n' : ' ';
    }
  }
  write_text_file(path, text);
}

}  // namespace jsfusion
