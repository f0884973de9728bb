#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "jsfusion/tensor.hpp"

namespace jsfusion {

/// Central-difference estimate of d f / d param, one coordinate at a time:
/// (f(p + eps e_i) - f(p - eps e_i)) / (2 eps). `f` re-evaluates the
/// objective from the current parameter values and must be deterministic.
/// Parameter values are restored exactly afterwards.
template <typename Scalar, typename Fn>
VectorX<Scalar> finite_diff_grad(Fn&& f, Tensor<Scalar>& param, Scalar eps) {
  VectorX<Scalar>& values = param.value();
  VectorX<Scalar> estimate(values.size());
  for (Index i = 0; i < values.size(); ++i) {
    const Scalar saved = values[i];
    values[i] = saved + eps;
    const Scalar up = static_cast<Scalar>(f());
    values[i] = saved - eps;
    const Scalar down = static_cast<Scalar>(f());
    values[i] = saved;
    estimate[i] = (up - down) / (Scalar(2) * eps);
  }
  return estimate;
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||). Two zero vectors
/// compare equal.
template <typename Scalar>
Scalar relative_error(const VectorX<Scalar>& a, const VectorX<Scalar>& b) {
  Scalar denom = std::max(a.norm(), b.norm());
  if (denom == Scalar(0)) return Scalar(0);
  return (a - b).norm() / denom;
}

struct GradCheckEntry {
  std::string group;
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  long coordinates = 0;
};

}  // namespace jsfusion
