#pragma once

#include <algorithm>
#include <vector>

#include "jsfusion/gradcheck.hpp"
#include "jsfusion/ops.hpp"
#include "jsfusion/rng.hpp"

namespace testing_support {

using jsfusion::Index;
using jsfusion::Shape;
using Tensor = jsfusion::Tensor<double>;

inline Tensor random_tensor(Shape shape, jsfusion::Rng& rng, bool requires_grad = true, double spread = 1.0) {
  Index n = jsfusion::shape_size(shape);
  jsfusion::VectorX<double> v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(-spread, spread);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// sum(t ⊙ r) for a fixed random r, so every output coordinate carries a
/// distinct adjoint.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed = 99) {
  jsfusion::Rng rng(seed);
  Tensor r = random_tensor(t.shape(), rng, false);
  return jsfusion::sum(jsfusion::hadamard(t, r));
}

/// Largest norm-wise relative error between reverse-mode and central
/// finite-difference gradients over `params`.
template <typename Build>
double max_grad_error(std::vector<Tensor> params, Build build, double eps = 1e-5) {
  for (auto& p : params) p.zero_grad();
  {
    jsfusion::GradTape tape;
    Tensor loss = build();
    jsfusion::backward(loss);
  }
  double worst = 0.0;
  for (auto& p : params) {
    jsfusion::VectorX<double> analytic = p.grad();
    auto numeric = jsfusion::finite_diff_grad(
        [&]() {
          jsfusion::NoGradScope no_grad;
          return build().item();
        },
        p, eps);
    worst = std::max(worst, jsfusion::relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace testing_support
