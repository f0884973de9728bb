#pragma once

#include <optional>
#include <string>

#include "jsfusion/layers.hpp"

namespace jsfusion {

/// Joint Semantic Tensor builder: t = D1v(x_v) ⊙ D1w(x_w) for every
/// (frame, word) cell, alpha = σ(wᵀ D2(t) + b), gamma = D4(D3(t)),
/// J = alpha · gamma.
template <typename Scalar>
struct JointTensorBuilder {
  Dense<Scalar> d2, d3, d4;
  Tensor<Scalar> attention_w;     // [d_D2, 1]
  Tensor<Scalar> attention_bias;  // [1]
  bool gating = true;

  struct Output {
    Tensor<Scalar> joint;  // [B, N, M, d_D4]
    std::optional<Tensor<Scalar>> alpha;  // [B*N*M, 1]; absent without gating
  };

  JointTensorBuilder() = default;
  JointTensorBuilder(Index d1, Index w2, Index w3, Index w4, bool gating_, Rng& rng, double momentum, double eps)
      : d3(d1, w3, rng, true, true, momentum, eps), d4(w3, w4, rng, true, true, momentum, eps), gating(gating_) {
    if (gating) {
      d2 = Dense<Scalar>(d1, w2, rng, true, true, momentum, eps);
      attention_w = uniform_tensor<Scalar>({w2, 1}, glorot_limit(w2, 1), rng);
      attention_bias = Tensor<Scalar>::zeros({1}, true);
    }
  }

  /// alpha for fused cells t [rows, d_D1].
  Tensor<Scalar> attention(const Tensor<Scalar>& t, Mode mode) {
    return sigmoid(affine(d2(t, mode), attention_w, attention_bias));
  }

  Tensor<Scalar> representation(const Tensor<Scalar>& t, Mode mode) { return d4(d3(t, mode), mode); }

  Output operator()(const Tensor<Scalar>& video_proj, const Tensor<Scalar>& word_proj, Index batch, Mode mode) {
    Index n = video_proj.dim(0) / batch;
    Index m = word_proj.dim(0) / batch;
    Tensor<Scalar> t = pairwise_product(video_proj, word_proj, batch);
    Output out;
    Tensor<Scalar> gamma = representation(t, mode);
    if (gating) {
      out.alpha = attention(t, mode);
      gamma = gate_channels(gamma, *out.alpha);
    }
    out.joint = reshape(gamma, {batch, n, m, d4.out_features()});
    return out;
  }

  void collect(const std::string& prefix, ParamList<Scalar>& params, BufferList<Scalar>& buffers) {
    d3.collect(prefix + ".d3", params, buffers);
    d4.collect(prefix + ".d4", params, buffers);
    if (gating) {
      d2.collect(prefix + ".d2", params, buffers);
      params.push_back({prefix + ".attention_w", attention_w, true});
      params.push_back({prefix + ".attention_bias", attention_bias, false});
    }
  }
};

}  // namespace jsfusion
