#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "jsfusion/ops.hpp"
#include "jsfusion/rng.hpp"

namespace jsfusion {

/// A trainable tensor with its checkpoint name. `decayed` marks the weights
/// that enter the L2 penalty (biases and batch-norm affine terms do not).
template <typename Scalar>
struct NamedParam {
  std::string name;
  Tensor<Scalar> tensor;
  bool decayed = false;
};

/// Non-trainable state saved alongside parameters (batch-norm running stats).
template <typename Scalar>
struct NamedBuffer {
  std::string name;
  VectorX<Scalar>* values = nullptr;
};

template <typename Scalar>
using ParamList = std::vector<NamedParam<Scalar>>;

template <typename Scalar>
using BufferList = std::vector<NamedBuffer<Scalar>>;

template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, double limit, Rng& rng) {
  Index n = shape_size(shape);
  VectorX<Scalar> v(n);
  for (Index i = 0; i < n; ++i) v[i] = static_cast<Scalar>(rng.uniform(-limit, limit));
  return Tensor<Scalar>(std::move(shape), std::move(v), true);
}

/// Glorot-uniform bound for a map with the given fan-in and fan-out.
inline double glorot_limit(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

/// Fully connected layer y = act(BN(x·W)) or, without normalization,
/// act(x·W + b). The batch-norm shift takes the place of the bias, which
/// would be cancelled by the mean subtraction. `normalize` and `activate`
/// default on; the output layer D8 turns both off.
template <typename Scalar>
struct Dense {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;  // only without normalization
  BatchNorm<Scalar> bn;
  bool normalize = true;
  bool activate = true;

  Dense() = default;
  Dense(Index in, Index out, Rng& rng, bool normalize_ = true, bool activate_ = true, double momentum = 0.99,
        double eps = 1e-5)
      : weight(uniform_tensor<Scalar>({in, out}, glorot_limit(in, out), rng)), normalize(normalize_), activate(activate_) {
    if (normalize) {
      bn = BatchNorm<Scalar>(out, static_cast<Scalar>(momentum), static_cast<Scalar>(eps));
    } else {
      bias = Tensor<Scalar>::zeros({out}, true);
    }
  }

  Index in_features() const { return weight.dim(0); }
  Index out_features() const { return weight.dim(1); }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x, Mode mode, bool update_stats = true) {
    if (x.rank() != 2 || x.dim(1) != in_features()) {
      throw ShapeError("dense layer expects width " + std::to_string(in_features()) + ", got input " +
                       shape_string(x.shape()));
    }
    Tensor<Scalar> y = normalize ? batch_norm(matmul(x, weight), bn, mode, update_stats) : affine(x, weight, bias);
    if (activate) y = tanh(y);
    return y;
  }

  void collect(const std::string& prefix, ParamList<Scalar>& params, BufferList<Scalar>& buffers) {
    params.push_back({prefix + ".weight", weight, true});
    if (normalize) {
      params.push_back({prefix + ".bn_scale", bn.scale, false});
      params.push_back({prefix + ".bn_shift", bn.shift, false});
      buffers.push_back({prefix + ".bn_running_mean", &bn.running_mean});
      buffers.push_back({prefix + ".bn_running_var", &bn.running_var});
    } else {
      params.push_back({prefix + ".bias", bias, false});
    }
  }
};

}  // namespace jsfusion
