#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "jsfusion/layers.hpp"
#include "jsfusion/preprocess.hpp"

namespace jsfusion {

/// LSTM recurrence over precomputed input projections.
/// `pre` is [B*T, 4H] in (b,t) row order holding x_t·W_x + b with gate
/// blocks ordered i, f, g, o; `wh` is [H, 4H]. Initial states are zero.
/// With `reverse` the scan runs t = T-1 .. 0. Returns h as [B*T, H].
template <typename Scalar>
Tensor<Scalar> lstm_recurrence(const Tensor<Scalar>& pre, const Tensor<Scalar>& wh, Index batch, bool reverse) {
  detail::require_rank("lstm", pre.shape(), 2);
  detail::require_rank("lstm", wh.shape(), 2);
  Index h = wh.dim(0);
  if (wh.dim(1) != 4 * h || pre.dim(1) != 4 * h) {
    throw ShapeError("lstm: recurrent weights " + shape_string(wh.shape()) + " and projections " +
                     shape_string(pre.shape()) + " disagree on 4*hidden");
  }
  if (batch <= 0 || pre.dim(0) % batch != 0) {
    throw ShapeError("lstm: " + std::to_string(pre.dim(0)) + " rows not divisible by batch " + std::to_string(batch));
  }
  Index steps = pre.dim(0) / batch;
  using Mat = RowMatrixX<Scalar>;

  struct Cache {
    std::vector<Mat> gates;  // activated i,f,g,o per processing step, [B,4H]
    std::vector<Mat> cell;   // c after each step
    std::vector<Mat> hidden; // h after each step
  };
  auto cache = std::make_shared<Cache>();
  ConstRowMatrixMap<Scalar> p(pre.value().data(), batch * steps, 4 * h);
  ConstRowMatrixMap<Scalar> w(wh.value().data(), h, 4 * h);
  Mat out(batch * steps, h);
  Mat hprev = Mat::Zero(batch, h);
  Mat cprev = Mat::Zero(batch, h);
  for (Index s = 0; s < steps; ++s) {
    Index t = reverse ? steps - 1 - s : s;
    Mat z(batch, 4 * h);
    for (Index b = 0; b < batch; ++b) z.row(b) = p.row(b * steps + t);
    z.noalias() += hprev * w;
    for (Index b = 0; b < batch; ++b) {
      for (Index j = 0; j < 4 * h; ++j) {
        z(b, j) = (j >= 2 * h && j < 3 * h) ? std::tanh(z(b, j)) : detail::stable_sigmoid(z(b, j));
      }
    }
    Mat c = z.middleCols(h, h).cwiseProduct(cprev) + z.leftCols(h).cwiseProduct(z.middleCols(2 * h, h));
    Mat hn = z.rightCols(h).cwiseProduct(c.unaryExpr([](Scalar v) { return std::tanh(v); }));
    for (Index b = 0; b < batch; ++b) out.row(b * steps + t) = hn.row(b);
    cache->gates.push_back(std::move(z));
    cache->cell.push_back(c);
    cache->hidden.push_back(hn);
    hprev = std::move(hn);
    cprev = std::move(c);
  }

  auto pn = pre.node();
  auto wn = wh.node();
  return make_op_result<Scalar>(
      Shape{batch * steps, h}, detail::flatten(std::move(out)), {&pre, &wh},
      [pn, wn, cache, batch, steps, h, reverse](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
        ConstRowMatrixMap<Scalar> gm(g.data(), batch * steps, h);
        ConstRowMatrixMap<Scalar> w(wn->value.data(), h, 4 * h);
        auto* gp = detail::grad_target(pn);
        auto* gw = detail::grad_target(wn);
        Mat dh_next = Mat::Zero(batch, h);
        Mat dc_next = Mat::Zero(batch, h);
        Mat dz(batch, 4 * h);
        for (Index s = steps - 1; s >= 0; --s) {
          Index t = reverse ? steps - 1 - s : s;
          const Mat& a = cache->gates[s];
          const Mat& c = cache->cell[s];
          Mat dh = dh_next;
          for (Index b = 0; b < batch; ++b) dh.row(b) += gm.row(b * steps + t);
          auto i = a.leftCols(h).array();
          auto f = a.middleCols(h, h).array();
          auto gg = a.middleCols(2 * h, h).array();
          auto o = a.rightCols(h).array();
          Mat tc = c.unaryExpr([](Scalar v) { return std::tanh(v); });
          Mat dc = dc_next;
          dc.array() += dh.array() * o * (Scalar(1) - tc.array().square());
          if (s > 0) {
            dz.middleCols(h, h).array() = dc.array() * cache->cell[s - 1].array() * f * (Scalar(1) - f);
          } else {
            dz.middleCols(h, h).setZero();
          }
          dz.leftCols(h).array() = dc.array() * gg * i * (Scalar(1) - i);
          dz.middleCols(2 * h, h).array() = dc.array() * i * (Scalar(1) - gg.square());
          dz.rightCols(h).array() = dh.array() * tc.array() * o * (Scalar(1) - o);
          dc_next = (dc.array() * f).matrix();
          if (gp) {
            RowMatrixMap<Scalar> gpm(gp->data(), batch * steps, 4 * h);
            for (Index b = 0; b < batch; ++b) gpm.row(b * steps + t) += dz.row(b);
          }
          if (s > 0) {
            if (gw) RowMatrixMap<Scalar>(gw->data(), h, 4 * h).noalias() += cache->hidden[s - 1].transpose() * dz;
            dh_next.noalias() = dz * w.transpose();
          }
        }
      });
}

/// Input projection and recurrent weights of one LSTM direction.
template <typename Scalar>
struct LstmParams {
  Tensor<Scalar> wx;    // [D, 4H]
  Tensor<Scalar> wh;    // [H, 4H]
  Tensor<Scalar> bias;  // [4H], forget block initialised to 1

  LstmParams() = default;
  LstmParams(Index input, Index hidden, Rng& rng) {
    double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
    wx = uniform_tensor<Scalar>({input, 4 * hidden}, limit, rng);
    wh = uniform_tensor<Scalar>({hidden, 4 * hidden}, limit, rng);
    bias = Tensor<Scalar>::zeros({4 * hidden}, true);
    bias.value().segment(hidden, hidden).setOnes();
  }

  Index hidden() const { return wh.dim(0); }

  Tensor<Scalar> run(const Tensor<Scalar>& x, Index batch, bool reverse) const {
    return lstm_recurrence(affine(x, wx, bias), wh, batch, reverse);
  }

  void collect(const std::string& prefix, ParamList<Scalar>& params) {
    params.push_back({prefix + ".wx", wx, true});
    params.push_back({prefix + ".wh", wh, true});
    params.push_back({prefix + ".bias", bias, false});
  }
};

/// Word ids padded to a fixed length with -1 (a zero embedding row), in
/// (b,t) order, plus the blank position of each sentence when present.
struct WordBatch {
  Index batch = 0;
  Index steps = 0;
  std::vector<Index> ids;
  std::vector<std::optional<Index>> blank_positions;
};

/// Frame features zero-padded to a fixed length, rows in (b,n) order.
template <typename Scalar>
struct VideoBatch {
  Index batch = 0;
  Index steps = 0;
  Tensor<Scalar> frames;  // [B*N, d_v]
};

inline WordBatch make_word_batch(const std::vector<const WordSequence*>& sentences, Index m_max, Index vocab_size) {
  if (sentences.empty()) throw InputError("empty sentence batch");
  WordBatch wb;
  wb.batch = static_cast<Index>(sentences.size());
  wb.steps = m_max;
  wb.ids.assign(static_cast<std::size_t>(wb.batch * m_max), -1);
  for (Index b = 0; b < wb.batch; ++b) {
    const WordSequence& s = *sentences[static_cast<std::size_t>(b)];
    if (s.length() < 1 || s.length() > m_max) {
      throw InputError("sentence length " + std::to_string(s.length()) + " outside [1, m_max=" +
                       std::to_string(m_max) + "]");
    }
    for (Index t = 0; t < s.length(); ++t) {
      Index id = s.token_ids[static_cast<std::size_t>(t)];
      if (id < 0 || id >= vocab_size) {
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(vocab_size));
      }
      wb.ids[static_cast<std::size_t>(b * m_max + t)] = id;
    }
    wb.blank_positions.push_back(s.blank_position);
  }
  return wb;
}

template <typename Scalar>
VideoBatch<Scalar> make_video_batch(const std::vector<const VideoFeatureSequence*>& videos, Index n_max, Index d_v) {
  if (videos.empty()) throw InputError("empty video batch");
  VideoBatch<Scalar> vb;
  vb.batch = static_cast<Index>(videos.size());
  vb.steps = n_max;
  RowMatrixX<Scalar> m = RowMatrixX<Scalar>::Zero(vb.batch * n_max, d_v);
  for (Index b = 0; b < vb.batch; ++b) {
    const auto& f = videos[static_cast<std::size_t>(b)]->features;
    if (f.cols() != d_v) {
      throw ShapeError("video feature width d_video=" + std::to_string(f.cols()) + " but model expects " +
                       std::to_string(d_v));
    }
    if (f.rows() < 1 || f.rows() > n_max) {
      throw InputError("video length " + std::to_string(f.rows()) + " outside [1, n_max=" + std::to_string(n_max) + "]");
    }
    m.middleRows(b * n_max, f.rows()) = f.template cast<Scalar>();
  }
  vb.frames = Tensor<Scalar>::from_matrix(m);
  return vb;
}

/// Embedding lookup followed by a bidirectional LSTM; produces
/// x_w = [h_fwd, h_bwd, w] per step, [B*M, 2H + d].
template <typename Scalar>
struct WordEncoder {
  Tensor<Scalar> embedding;  // [|V|, d], row i is word i
  LstmParams<Scalar> forward;
  LstmParams<Scalar> backward;

  WordEncoder() = default;
  WordEncoder(Index vocab, Index dim, Index hidden, Rng& rng)
      : forward(dim, hidden, rng), backward(dim, hidden, rng) {
    embedding = Tensor<Scalar>::zeros({vocab, dim}, true);
    for (Index i = 1; i < vocab; ++i) {
      for (Index j = 0; j < dim; ++j) embedding.value()[i * dim + j] = static_cast<Scalar>(0.1 * rng.normal());
    }
  }

  /// Copies columns of a d x |V| embedding matrix into the table.
  void set_embeddings(const Eigen::MatrixXd& e) {
    if (e.rows() != embedding.dim(1) || e.cols() != embedding.dim(0)) {
      throw ShapeError("embedding matrix " + std::to_string(e.rows()) + "x" + std::to_string(e.cols()) +
                       " does not match d_word x vocab_size = " + std::to_string(embedding.dim(1)) + "x" +
                       std::to_string(embedding.dim(0)));
    }
    embedding.matrix() = e.transpose().template cast<Scalar>();
  }

  Tensor<Scalar> embed(const WordBatch& wb) const { return gather_rows(embedding, std::span<const Index>(wb.ids)); }

  Tensor<Scalar> operator()(const WordBatch& wb, Tensor<Scalar>* embedded = nullptr) const {
    Tensor<Scalar> w = embed(wb);
    if (embedded) *embedded = w;
    Tensor<Scalar> hf = forward.run(w, wb.batch, false);
    Tensor<Scalar> hb = backward.run(w, wb.batch, true);
    return concat_cols<Scalar>({hf, hb, w});
  }

  void collect(const std::string& prefix, ParamList<Scalar>& params) {
    params.push_back({prefix + ".embedding", embedding, true});
    forward.collect(prefix + ".lstm_fwd", params);
    backward.collect(prefix + ".lstm_bwd", params);
  }
};

/// One temporal convolution (odd kernel, same-length zero padding, tanh)
/// over the frame axis; produces x_v = [h_cnn, v] per step, [B*N, d_cnn + d_v].
template <typename Scalar>
struct VideoEncoder {
  Tensor<Scalar> kernel;  // [k, 1, d_v, d_cnn]
  Tensor<Scalar> bias;    // [d_cnn]

  VideoEncoder() = default;
  VideoEncoder(Index d_video, Index d_cnn, Index width, Rng& rng)
      : kernel(uniform_tensor<Scalar>({width, 1, d_video, d_cnn}, glorot_limit(width * d_video, d_cnn), rng)),
        bias(Tensor<Scalar>::zeros({d_cnn}, true)) {}

  Index d_video() const { return kernel.dim(2); }
  Index d_cnn() const { return kernel.dim(3); }

  Tensor<Scalar> operator()(const VideoBatch<Scalar>& vb) const {
    if (vb.frames.dim(1) != d_video()) {
      throw ShapeError("video encoder expects d_video=" + std::to_string(d_video()) + ", got frames " +
                       shape_string(vb.frames.shape()));
    }
    Index half = (kernel.dim(0) - 1) / 2;
    Tensor<Scalar> x = reshape(vb.frames, {vb.batch, vb.steps, 1, d_video()});
    Tensor<Scalar> h = tanh(conv2d(pad_height(x, half, half), kernel, 1, bias));
    return concat_cols<Scalar>({reshape(h, {vb.batch * vb.steps, d_cnn()}), vb.frames});
  }

  void collect(const std::string& prefix, ParamList<Scalar>& params) {
    params.push_back({prefix + ".kernel", kernel, true});
    params.push_back({prefix + ".bias", bias, false});
  }
};

}  // namespace jsfusion
