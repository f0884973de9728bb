#include <doctest.h>

#include <cmath>

#include "jsfusion/encoders.hpp"
#include "jsfusion/model.hpp"
#include "test_support.hpp"

using namespace jsfusion;
using testing_support::max_grad_error;
using testing_support::random_tensor;
using testing_support::weighted_sum;

namespace {

using Mat = Eigen::MatrixXd;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Straight-line LSTM over one sequence x [T, D], column-vector convention.
Mat reference_lstm(const Mat& x, const Mat& wx, const Mat& wh, const Eigen::VectorXd& b, bool reverse) {
  Index steps = x.rows(), h = wh.rows();
  Mat out(steps, h);
  Eigen::VectorXd hp = Eigen::VectorXd::Zero(h), cp = Eigen::VectorXd::Zero(h);
  for (Index s = 0; s < steps; ++s) {
    Index t = reverse ? steps - 1 - s : s;
    Eigen::VectorXd z = wx.transpose() * x.row(t).transpose() + wh.transpose() * hp + b;
    Eigen::VectorXd c(h), hn(h);
    for (Index k = 0; k < h; ++k) {
      double i = sig(z[k]), f = sig(z[h + k]), g = std::tanh(z[2 * h + k]), o = sig(z[3 * h + k]);
      c[k] = f * cp[k] + i * g;
      hn[k] = o * std::tanh(c[k]);
    }
    out.row(t) = hn.transpose();
    hp = hn;
    cp = c;
  }
  return out;
}

WordBatch ids_batch(std::vector<std::vector<Index>> rows, Index steps) {
  WordBatch wb;
  wb.batch = static_cast<Index>(rows.size());
  wb.steps = steps;
  for (auto& r : rows) {
    r.resize(static_cast<std::size_t>(steps), -1);
    wb.ids.insert(wb.ids.end(), r.begin(), r.end());
    wb.blank_positions.push_back(std::nullopt);
  }
  return wb;
}

}  // namespace

TEST_CASE("lstm recurrence matches a straight-line reference") {
  Rng rng(1);
  const Index batch = 3, steps = 5, d = 4, h = 3;
  LstmParams<double> p(d, h, rng);
  Tensor<double> x = random_tensor({batch * steps, d}, rng, false);
  for (bool reverse : {false, true}) {
    Tensor<double> out = p.run(x, batch, reverse);
    REQUIRE(out.shape() == Shape{batch * steps, h});
    for (Index b = 0; b < batch; ++b) {
      Mat xb = x.matrix().middleRows(b * steps, steps);
      Mat ref = reference_lstm(xb, p.wx.matrix(), p.wh.matrix(), p.bias.value(), reverse);
      CHECK((out.matrix().middleRows(b * steps, steps) - ref).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
}

TEST_CASE("lstm forget bias starts at one and other biases at zero") {
  Rng rng(2);
  LstmParams<double> p(3, 4, rng);
  CHECK(p.bias.value().segment(0, 4).isZero());
  CHECK(p.bias.value().segment(4, 4).isOnes());
  CHECK(p.bias.value().segment(8, 8).isZero());
}

TEST_CASE("zero embeddings and zero parameters give zero hidden states") {
  Rng rng(3);
  WordEncoder<double> enc(6, 4, 5, rng);
  enc.embedding.value().setZero();
  for (auto* l : {&enc.forward, &enc.backward}) {
    l->wx.value().setZero();
    l->wh.value().setZero();
    l->bias.value().setZero();
  }
  auto wb = ids_batch({{1, 2, 3}, {4}}, 6);
  Tensor<double> out = enc(wb);
  CHECK(out.shape() == Shape{12, 2 * 5 + 4});
  CHECK(out.value().isZero(0.0));
}

TEST_CASE("backward direction equals forward direction over the reversed sequence") {
  Rng rng(4);
  const Index d = 3, h = 4;
  LstmParams<double> p(d, h, rng);
  Tensor<double> x = random_tensor({3, d}, rng, false);
  Mat rev = x.matrix().colwise().reverse();
  Tensor<double> xr = Tensor<double>::from_matrix(rev);
  Mat bwd = p.run(x, 1, true).matrix();
  Mat fwd_rev = p.run(xr, 1, false).matrix();
  CHECK((bwd - Mat(fwd_rev.colwise().reverse())).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lstm gradients match finite differences (T=4, hidden=5)") {
  Rng rng(5);
  LstmParams<double> p(3, 5, rng);
  Tensor<double> x = random_tensor({2 * 4, 3}, rng, true);
  for (bool reverse : {false, true}) {
    double err = max_grad_error({p.wx, p.wh, p.bias, x}, [&] { return sum(p.run(x, 2, reverse)); });
    CHECK(err < 1e-4);
    double werr = max_grad_error({p.wx, p.wh, p.bias, x}, [&] { return weighted_sum(p.run(x, 2, reverse)); });
    CHECK(werr < 1e-6);
  }
}

TEST_CASE("word encoder output layout and padding rows") {
  Rng rng(6);
  WordEncoder<double> enc(5, 3, 2, rng);
  auto wb = ids_batch({{1, 4}}, 4);
  Tensor<double> emb;
  Tensor<double> out = enc(wb, &emb);
  REQUIRE(out.shape() == Shape{4, 2 * 2 + 3});
  // trailing block is the embedding itself; padded steps embed to zero
  CHECK((out.matrix().rightCols(3).row(1) - enc.embedding.matrix().row(4)).norm() == 0.0);
  CHECK(out.matrix().rightCols(3).row(3).isZero(0.0));
  CHECK(enc.embedding.matrix().row(0).isZero(0.0));
}

TEST_CASE("word encoder gradients reach the embeddings") {
  Rng rng(7);
  WordEncoder<double> enc(6, 3, 2, rng);
  auto wb = ids_batch({{1, 2, 5}, {3, 1}}, 4);
  ParamList<double> params;
  enc.collect("w", params);
  std::vector<Tensor<double>> ts;
  for (auto& p : params) ts.push_back(p.tensor);
  CHECK(max_grad_error(ts, [&] { return weighted_sum(enc(wb)); }) < 1e-6);
}

TEST_CASE("video encoder with zero parameters passes frames through") {
  Rng rng(8);
  VideoEncoder<double> enc(3, 4, 3, rng);
  enc.kernel.value().setZero();
  VideoBatch<double> vb{2, 5, random_tensor({10, 3}, rng, false)};
  Tensor<double> out = enc(vb);
  REQUIRE(out.shape() == Shape{10, 7});
  CHECK(out.matrix().leftCols(4).isZero(0.0));
  CHECK(out.matrix().rightCols(3) == vb.frames.matrix());
}

TEST_CASE("video encoder receptive field spans frames t-1..t+1") {
  Rng rng(9);
  VideoEncoder<double> enc(3, 4, 3, rng);
  const Index steps = 7;
  VideoBatch<double> vb{1, steps, random_tensor({steps, 3}, rng, false)};
  Mat base = enc(vb).matrix().leftCols(4);
  for (Index n = 0; n < steps; ++n) {
    VideoBatch<double> pert{1, steps, vb.frames.clone()};
    pert.frames.matrix().row(n).array() += 0.5;
    Mat moved = enc(pert).matrix().leftCols(4);
    for (Index t = 0; t < steps; ++t) {
      bool changed = (moved.row(t) - base.row(t)).norm() > 0.0;
      CHECK(changed == (std::abs(t - n) <= 1));
    }
  }
}

TEST_CASE("video encoder gradients match finite differences") {
  Rng rng(10);
  VideoEncoder<double> enc(3, 4, 3, rng);
  VideoBatch<double> vb{2, 4, random_tensor({8, 3}, rng, true)};
  CHECK(max_grad_error({enc.kernel, enc.bias, vb.frames}, [&] { return weighted_sum(enc(vb)); }) < 1e-6);
  VideoBatch<double> wrong{1, 4, random_tensor({4, 5}, rng, false)};
  CHECK_THROWS_AS(enc(wrong), ShapeError);
}

TEST_CASE("encodings of one example do not depend on other examples") {
  Rng rng(11);
  WordEncoder<double> wenc(8, 3, 2, rng);
  VideoEncoder<double> venc(3, 4, 3, rng);
  auto wb = ids_batch({{1, 2, 3}, {4, 5}}, 4);
  auto wb2 = ids_batch({{1, 2, 3}, {7, 7, 6, 1}}, 4);
  Mat a = wenc(wb).matrix().topRows(4), b = wenc(wb2).matrix().topRows(4);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

  VideoBatch<double> vb{2, 4, random_tensor({8, 3}, rng, false)};
  VideoBatch<double> vb2{2, 4, vb.frames.clone()};
  vb2.frames.matrix().bottomRows(4).setRandom();
  CHECK((venc(vb).matrix().topRows(4) - venc(vb2).matrix().topRows(4)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("D1 projection widths and the zero case") {
  ModelConfig c;
  CHECK(c.d_d1 == 512);
  CHECK(ModelConfig::fill_in_blank(100).d_d1 == 1024);

  Rng rng(12);
  Dense<double> d1(7, 5, rng);
  d1.weight.value().setZero();
  Tensor<double> x = random_tensor({6, 7}, rng, false);
  CHECK(d1(x, Mode::train).value().isZero(0.0));
  CHECK(d1(x, Mode::infer).value().isZero(0.0));
  CHECK_THROWS_AS(d1(random_tensor({6, 3}, rng, false), Mode::infer), ShapeError);
}

TEST_CASE("batch builders pad and validate") {
  WordSequence s{{1, 2}, std::nullopt};
  auto wb = make_word_batch({&s}, 4, 3);
  CHECK(wb.ids == std::vector<Index>{1, 2, -1, -1});
  WordSequence bad{{5}, std::nullopt};
  CHECK_THROWS_AS(make_word_batch({&bad}, 4, 3), InputError);

  VideoFeatureSequence v;
  v.features = FeatureMatrix::Constant(2, 3, 1.5f);
  auto vb = make_video_batch<double>({&v}, 4, 3);
  CHECK(vb.frames.shape() == Shape{4, 3});
  CHECK(vb.frames.matrix().topRows(2).isConstant(1.5));
  CHECK(vb.frames.matrix().bottomRows(2).isZero(0.0));
  CHECK_THROWS_AS(make_video_batch<double>({&v}, 4, 5), ShapeError);
  CHECK_THROWS_AS(make_video_batch<double>({&v}, 1, 3), InputError);
}
