#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "jsfusion/layers.hpp"

namespace jsfusion {

/// J(k) = Convk(J(k-1)) · σ(ConvGk(J(k-1))), the gate broadcast over channels.
template <typename Scalar>
struct ConvGateStage {
  Tensor<Scalar> kernel, bias;            // [k,k,C_in,C_out], [C_out]
  Tensor<Scalar> gate_kernel, gate_bias;  // [k,k,C_in,1], [1]
  Index stride = 1;
  bool gating = true;

  struct Output {
    Tensor<Scalar> joint;
    std::optional<Tensor<Scalar>> gate;  // [B, H', W', 1]
  };

  ConvGateStage() = default;
  ConvGateStage(Index width, Index c_in, Index c_out, Index stride_, bool gating_, Rng& rng)
      : kernel(uniform_tensor<Scalar>({width, width, c_in, c_out}, glorot_limit(width * width * c_in, c_out), rng)),
        bias(Tensor<Scalar>::zeros({c_out}, true)),
        stride(stride_),
        gating(gating_) {
    if (gating) {
      gate_kernel = uniform_tensor<Scalar>({width, width, c_in, 1}, glorot_limit(width * width * c_in, 1), rng);
      gate_bias = Tensor<Scalar>::zeros({1}, true);
    }
  }

  Output operator()(const Tensor<Scalar>& j) const {
    Output out;
    out.joint = conv2d(j, kernel, stride, bias);
    if (gating) {
      out.gate = sigmoid(conv2d(j, gate_kernel, stride, gate_bias));
      out.joint = gate_channels(out.joint, *out.gate);
    }
    return out;
  }

  void collect(const std::string& prefix, ParamList<Scalar>& params) {
    params.push_back({prefix + ".kernel", kernel, true});
    params.push_back({prefix + ".bias", bias, false});
    if (gating) {
      params.push_back({prefix + ".gate_kernel", gate_kernel, true});
      params.push_back({prefix + ".gate_bias", gate_bias, false});
    }
  }
};

/// Three conv-gating stages, full-extent mean pooling, then D5..D7 (tanh,
/// batch-norm) and the affine output layer D8.
template <typename Scalar>
struct HierarchicalDecoder {
  std::array<ConvGateStage<Scalar>, 3> stages;
  Dense<Scalar> d5, d6, d7, d8;
  double dropout_rate = 0.0;

  struct Trace {
    std::array<Tensor<Scalar>, 3> stage_outputs;
    std::array<std::optional<Tensor<Scalar>>, 3> gates;
    Tensor<Scalar> pooled;  // [B, C]
    Tensor<Scalar> d7_out;  // [B, d_D7] (before the skip addition)
  };

  HierarchicalDecoder() = default;
  HierarchicalDecoder(Index width, Index c0, const std::array<Index, 3>& channels, const std::array<Index, 3>& strides,
                      const std::array<Index, 4>& head, bool gating, double dropout, Rng& rng, double momentum,
                      double eps)
      : dropout_rate(dropout) {
    Index c = c0;
    for (std::size_t k = 0; k < 3; ++k) {
      stages[k] = ConvGateStage<Scalar>(width, c, channels[k], strides[k], gating, rng);
      c = channels[k];
    }
    d5 = Dense<Scalar>(c, head[0], rng, true, true, momentum, eps);
    d6 = Dense<Scalar>(head[0], head[1], rng, true, true, momentum, eps);
    d7 = Dense<Scalar>(head[1], head[2], rng, true, true, momentum, eps);
    d8 = Dense<Scalar>(head[2], head[3], rng, false, false);
  }

  /// J_out [B, C] from J(0) [B, N, M, C0].
  Tensor<Scalar> decode(const Tensor<Scalar>& j0, Trace* trace = nullptr) const {
    Tensor<Scalar> j = j0;
    for (std::size_t k = 0; k < 3; ++k) {
      auto st = stages[k](j);
      j = st.joint;
      if (trace) {
        trace->stage_outputs[k] = st.joint;
        trace->gates[k] = st.gate;
      }
    }
    Tensor<Scalar> pooled = reshape(mean_pool(j, {j.dim(1), j.dim(2)}), {j.dim(0), j.dim(3)});
    if (trace) trace->pooled = pooled;
    return pooled;
  }

  /// D5..D7 with dropout on each layer input. When `skip` is given it is
  /// added to the D7 output before D8.
  Tensor<Scalar> head(const Tensor<Scalar>& pooled, Mode mode, Rng& rng, const Tensor<Scalar>* skip = nullptr,
                      Trace* trace = nullptr) {
    Tensor<Scalar> h = d5(dropout(pooled, dropout_rate, mode, rng), mode);
    h = d6(dropout(h, dropout_rate, mode, rng), mode);
    h = d7(dropout(h, dropout_rate, mode, rng), mode);
    if (trace) trace->d7_out = h;
    if (skip) h = add(h, *skip);
    return d8(h, mode);
  }

  void collect(const std::string& prefix, ParamList<Scalar>& params, BufferList<Scalar>& buffers) {
    for (std::size_t k = 0; k < 3; ++k) stages[k].collect(prefix + ".stage" + std::to_string(k + 1), params);
    d5.collect(prefix + ".d5", params, buffers);
    d6.collect(prefix + ".d6", params, buffers);
    d7.collect(prefix + ".d7", params, buffers);
    d8.collect(prefix + ".d8", params, buffers);
  }
};

}  // namespace jsfusion
