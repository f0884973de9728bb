#include <doctest.h>

#include <cmath>

#include "jsfusion/chd.hpp"
#include "jsfusion/config.hpp"
#include "test_support.hpp"

using namespace jsfusion;
using testing_support::max_grad_error;
using testing_support::random_tensor;
using testing_support::weighted_sum;

namespace {

HierarchicalDecoder<double> make_decoder(Rng& rng, Index c0 = 2, bool gating = true) {
  return HierarchicalDecoder<double>(3, c0, {4, 3, 5}, {1, 1, 2}, {6, 5, 4, 1}, gating, 0.0, rng, 0.99, 1e-5);
}

}  // namespace

TEST_CASE("zero gate logits halve the convolution output") {
  Rng rng(1);
  ConvGateStage<double> st(3, 2, 4, 1, true, rng);
  st.gate_kernel.value().setZero();
  Tensor<double> j = random_tensor({2, 6, 5, 2}, rng, false);
  auto out = st(j);
  Tensor<double> conv = conv2d(j, st.kernel, 1, st.bias);
  CHECK(out.joint.value() == 0.5 * conv.value());
  CHECK((out.gate->value().array() == 0.5).all());
}

TEST_CASE("strongly negative gate logits suppress the stage output") {
  Rng rng(2);
  ConvGateStage<double> st(3, 2, 4, 1, true, rng);
  st.gate_kernel.value().setZero();
  st.gate_bias.value().setConstant(-20.0);
  Tensor<double> j = random_tensor({1, 5, 5, 2}, rng, false);
  auto out = st(j);
  Tensor<double> conv = conv2d(j, st.kernel, 1, st.bias);
  const double s = 1.0 / (1.0 + std::exp(20.0));
  CHECK(s < 2.1e-9);
  for (Index i = 0; i < conv.size(); ++i) {
    CHECK(std::abs(out.joint.value()[i]) <= s * std::abs(conv.value()[i]) * (1 + 1e-12));
    CHECK(out.joint.value()[i] == doctest::Approx(s * conv.value()[i]).epsilon(1e-12));
  }
}

TEST_CASE("gates lie in (0,1) and never amplify the convolution") {
  Rng rng(3);
  ConvGateStage<double> st(3, 3, 4, 2, true, rng);
  Tensor<double> j = random_tensor({2, 9, 7, 3}, rng, false, 2.0);
  auto out = st(j);
  Tensor<double> conv = conv2d(j, st.kernel, 2, st.bias);
  CHECK((out.gate->value().array() > 0.0).all());
  CHECK((out.gate->value().array() < 1.0).all());
  CHECK((out.joint.value().array().abs() <= conv.value().array().abs()).all());
  CHECK(out.joint.shape() == Shape{2, 4, 3, 4});
  CHECK(out.gate->shape() == Shape{2, 4, 3, 1});
}

TEST_CASE("stage extents follow 40 -> 38 -> 36 -> 17") {
  Rng rng(4);
  HierarchicalDecoder<double> dec(3, 2, {2, 2, 3}, {1, 1, 2}, {4, 4, 4, 1}, true, 0.0, rng, 0.99, 1e-5);
  typename HierarchicalDecoder<double>::Trace tr;
  Tensor<double> pooled = dec.decode(random_tensor({1, 40, 40, 2}, rng, false), &tr);
  CHECK(tr.stage_outputs[0].shape() == Shape{1, 38, 38, 2});
  CHECK(tr.stage_outputs[1].shape() == Shape{1, 36, 36, 2});
  CHECK(tr.stage_outputs[2].shape() == Shape{1, 17, 17, 3});
  CHECK(pooled.shape() == Shape{1, 3});
}

TEST_CASE("zero joint tensor with zero biases decodes to zero") {
  Rng rng(5);
  auto dec = make_decoder(rng);
  CHECK(dec.decode(Tensor<double>::zeros({2, 8, 8, 2})).value().isZero(0.0));
}

TEST_CASE("decoder gradients match finite differences on an 8x8 input") {
  Rng rng(6);
  auto dec = make_decoder(rng);
  Tensor<double> j0 = random_tensor({2, 8, 8, 2}, rng, true);
  ParamList<double> params;
  BufferList<double> buffers;
  dec.collect("chd", params, buffers);
  std::vector<Tensor<double>> conv_params{j0};
  for (auto& p : params) {
    if (p.name.find("stage") != std::string::npos) conv_params.push_back(p.tensor);
  }
  CHECK(conv_params.size() == 1 + 3 * 4);
  CHECK(max_grad_error(conv_params, [&] { return sum(dec.decode(j0)); }) < 1e-4);
  CHECK(max_grad_error(conv_params, [&] { return weighted_sum(dec.decode(j0)); }) < 1e-6);
}

TEST_CASE("head gradients match finite differences in both modes") {
  Rng rng(7);
  auto dec = make_decoder(rng);
  Tensor<double> pooled = random_tensor({4, 5}, rng, true);
  ParamList<double> params;
  BufferList<double> buffers;
  dec.collect("chd", params, buffers);
  std::vector<Tensor<double>> ts{pooled};
  for (auto& p : params) ts.push_back(p.tensor);
  Rng drop(0);
  for (Mode mode : {Mode::train, Mode::infer}) {
    CHECK(max_grad_error(ts, [&] { return weighted_sum(dec.head(pooled, mode, drop)); }) < 1e-6);
  }
}

TEST_CASE("score head: zero case, purity and output-layer linearity") {
  Rng rng(8);
  auto dec = make_decoder(rng);
  Rng drop(0);
  Tensor<double> pooled = random_tensor({3, 5}, rng, false);
  Tensor<double> s1 = dec.head(pooled, Mode::infer, drop);
  Tensor<double> s2 = dec.head(pooled, Mode::infer, drop);
  CHECK(s1.shape() == Shape{3, 1});
  CHECK(s1.value() == s2.value());

  const double c = 0.37;
  Tensor<double> skip = Tensor<double>::from_matrix(
      Eigen::MatrixXd(Eigen::MatrixXd::Ones(3, 1) * (c * dec.d8.weight.matrix().transpose())));
  Tensor<double> shifted = dec.head(pooled, Mode::infer, drop, &skip);
  double expect = c * dec.d8.weight.value().squaredNorm();
  for (Index i = 0; i < 3; ++i) CHECK(shifted.value()[i] - s1.value()[i] == doctest::Approx(expect).epsilon(1e-12));

  for (Dense<double>* d : {&dec.d5, &dec.d6, &dec.d7, &dec.d8}) d->weight.value().setZero();
  CHECK(dec.head(Tensor<double>::zeros({3, 5}), Mode::train, drop).value().isZero(0.0));
  CHECK(dec.head(Tensor<double>::zeros({3, 5}), Mode::infer, drop).value().isZero(0.0));
}

TEST_CASE("gating ablation drops gate parameters") {
  Rng rng(9);
  auto dec = make_decoder(rng, 2, false);
  ParamList<double> params;
  BufferList<double> buffers;
  dec.collect("chd", params, buffers);
  for (auto& p : params) CHECK(p.name.find("gate") == std::string::npos);
  typename HierarchicalDecoder<double>::Trace tr;
  Tensor<double> j0 = random_tensor({1, 8, 8, 2}, rng, false);
  dec.decode(j0, &tr);
  CHECK_FALSE(tr.gates[0].has_value());
  CHECK(tr.stage_outputs[0].value() == conv2d(j0, dec.stages[0].kernel, 1, dec.stages[0].bias).value());
}

TEST_CASE("head widths and dropout only in training") {
  Rng rng(10);
  HierarchicalDecoder<double> dec(3, 2, {4, 3, 5}, {1, 1, 2}, {6, 5, 4, 7}, true, 0.5, rng, 0.99, 1e-5);
  Rng drop(1);
  Tensor<double> pooled = random_tensor({4, 5}, rng, false);
  CHECK(dec.head(pooled, Mode::infer, drop).shape() == Shape{4, 7});
  Tensor<double> a = dec.head(pooled, Mode::infer, drop);
  Tensor<double> b = dec.head(pooled, Mode::infer, drop);
  CHECK(a.value() == b.value());
  Rng d1(3), d2(3), d3(4);
  CHECK(dec.head(pooled, Mode::train, d1).value() == dec.head(pooled, Mode::train, d2).value());
  CHECK(dec.head(pooled, Mode::train, d1).value() != dec.head(pooled, Mode::train, d3).value());
}
