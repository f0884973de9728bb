#pragma once

#include <cmath>
#include <cstring>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "jsfusion/rng.hpp"
#include "jsfusion/tensor.hpp"

namespace jsfusion {

enum class Mode { train, infer };

namespace detail {

template <typename Scalar>
using NodePtr = std::shared_ptr<TensorNode<Scalar>>;

template <typename Scalar>
bool tracking(std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (Tape::current() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

/// Gradient buffer of `node` if adjoints should flow into it, else null.
template <typename Scalar>
VectorX<Scalar>* grad_target(const NodePtr<Scalar>& node) {
  return node->requires_grad ? &node->grad_buffer() : nullptr;
}

inline void require_rank(const char* op, const Shape& shape, std::size_t rank) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(shape));
  }
}

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
VectorX<Scalar> flatten(RowMatrixX<Scalar>&& m) {
  return Eigen::Map<VectorX<Scalar>>(m.data(), m.size());
}

}  // namespace detail

/// Builds an op output and, when any input requires grad under an active
/// tape, registers `adjoint(grad_out, out_value)`. The adjoint is skipped at
/// replay if no gradient reached the output. Fused operations outside this
/// header (losses, recurrent cells) are written against this hook.
template <typename Scalar, typename Fn>
Tensor<Scalar> make_op_result(Shape shape, VectorX<Scalar> value,
                              std::initializer_list<const Tensor<Scalar>*> inputs, Fn&& adjoint) {
  bool track = detail::tracking<Scalar>(inputs);
  Tensor<Scalar> out(std::move(shape), std::move(value), track);
  if (track) {
    auto out_node = out.node();
    Tape::current()->record([out_node, fn = std::forward<Fn>(adjoint)]() {
      if (out_node->grad.size() == 0) return;
      fn(out_node->grad, out_node->value);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_rank("matmul", a.shape(), 2);
  detail::require_rank("matmul", b.shape(), 2);
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  RowMatrixX<Scalar> c = a.matrix() * b.matrix();
  auto an = a.node();
  auto bn = b.node();
  return make_op_result<Scalar>(Shape{a.dim(0), b.dim(1)}, detail::flatten(std::move(c)), {&a, &b},
                                [an, bn](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    Index m = an->shape[0], k = an->shape[1], n = bn->shape[1];
    ConstRowMatrixMap<Scalar> gm(g.data(), m, n);
    if (auto* ga = detail::grad_target(an)) {
      RowMatrixMap<Scalar>(ga->data(), m, k).noalias() +=
          gm * ConstRowMatrixMap<Scalar>(bn->value.data(), k, n).transpose();
    }
    if (auto* gb = detail::grad_target(bn)) {
      RowMatrixMap<Scalar>(gb->data(), k, n).noalias() +=
          ConstRowMatrixMap<Scalar>(an->value.data(), m, k).transpose() * gm;
    }
  });
}

/// x·W + b with b added to every row: the dense-layer primitive.
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  detail::require_rank("affine", x.shape(), 2);
  detail::require_rank("affine", w.shape(), 2);
  if (x.dim(1) != w.dim(0)) {
    throw ShapeError("affine: input " + shape_string(x.shape()) + " does not match weights " +
                     shape_string(w.shape()));
  }
  if (b.size() != w.dim(1)) {
    throw ShapeError("affine: bias " + shape_string(b.shape()) + " does not match weights " +
                     shape_string(w.shape()));
  }
  RowMatrixX<Scalar> y = x.matrix() * w.matrix();
  y.rowwise() += b.value().transpose();
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_op_result<Scalar>(Shape{x.dim(0), w.dim(1)}, detail::flatten(std::move(y)), {&x, &w, &b},
                                [xn, wn, bn](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    Index r = xn->shape[0], k = xn->shape[1], n = wn->shape[1];
    ConstRowMatrixMap<Scalar> gm(g.data(), r, n);
    if (auto* gx = detail::grad_target(xn)) {
      RowMatrixMap<Scalar>(gx->data(), r, k).noalias() +=
          gm * ConstRowMatrixMap<Scalar>(wn->value.data(), k, n).transpose();
    }
    if (auto* gw = detail::grad_target(wn)) {
      RowMatrixMap<Scalar>(gw->data(), k, n).noalias() +=
          ConstRowMatrixMap<Scalar>(xn->value.data(), r, k).transpose() * gm;
    }
    if (auto* gb = detail::grad_target(bn)) {
      *gb += gm.colwise().sum().transpose();
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("add", a.shape(), b.shape());
  auto an = a.node();
  auto bn = b.node();
  return make_op_result<Scalar>(a.shape(), a.value() + b.value(), {&a, &b},
                                [an, bn](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    if (auto* ga = detail::grad_target(an)) *ga += g;
    if (auto* gb = detail::grad_target(bn)) *gb += g;
  });
}

template <typename Scalar>
Tensor<Scalar> hadamard(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("hadamard", a.shape(), b.shape());
  auto an = a.node();
  auto bn = b.node();
  return make_op_result<Scalar>(a.shape(), a.value().cwiseProduct(b.value()), {&a, &b},
                                [an, bn](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    if (auto* ga = detail::grad_target(an)) *ga += g.cwiseProduct(bn->value);
    if (auto* gb = detail::grad_target(bn)) *gb += g.cwiseProduct(an->value);
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  auto an = a.node();
  return make_op_result<Scalar>(a.shape(), a.value() * factor, {&a},
                                [an, factor](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    if (auto* ga = detail::grad_target(an)) *ga += g * factor;
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  VectorX<Scalar> y = a.value().unaryExpr([](Scalar x) { return detail::stable_sigmoid(x); });
  auto an = a.node();
  return make_op_result<Scalar>(a.shape(), std::move(y), {&a},
                                [an](const VectorX<Scalar>& g, const VectorX<Scalar>& y) {
    if (auto* ga = detail::grad_target(an)) {
      *ga += (g.array() * y.array() * (Scalar(1) - y.array())).matrix();
    }
  });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a) {
  VectorX<Scalar> y = a.value().array().tanh().matrix();
  auto an = a.node();
  return make_op_result<Scalar>(a.shape(), std::move(y), {&a},
                                [an](const VectorX<Scalar>& g, const VectorX<Scalar>& y) {
    if (auto* ga = detail::grad_target(an)) {
      *ga += (g.array() * (Scalar(1) - y.array().square())).matrix();
    }
  });
}

enum class ElementwiseOp { add, hadamard, sigmoid, tanh, scale };

/// Single dispatch point over the elementwise family. Binary ops need `b`;
/// `factor` is used only by scale.
template <typename Scalar>
Tensor<Scalar> elementwise(ElementwiseOp op, const Tensor<Scalar>& a,
                           const std::optional<Tensor<Scalar>>& b = std::nullopt, Scalar factor = Scalar(1)) {
  auto need_b = [&]() -> const Tensor<Scalar>& {
    if (!b) throw UsageError("elementwise: binary op without second operand");
    return *b;
  };
  switch (op) {
    case ElementwiseOp::add: return add(a, need_b());
    case ElementwiseOp::hadamard: return hadamard(a, need_b());
    case ElementwiseOp::sigmoid: return sigmoid(a);
    case ElementwiseOp::tanh: return tanh(a);
    case ElementwiseOp::scale: return scale(a, factor);
  }
  throw UsageError("elementwise: unknown op");
}

// ---------------------------------------------------------------------------
// Structural

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  auto an = a.node();
  return make_op_result<Scalar>(std::move(shape), a.value(), {&a},
                                [an](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    if (auto* ga = detail::grad_target(an)) *ga += g;
  });
}

/// Column-wise concatenation of rank-2 tensors with equal row counts.
template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Index rows = -1, cols = 0;
  for (const auto& p : parts) {
    detail::require_rank("concat_cols", p.shape(), 2);
    if (rows >= 0 && p.dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(parts.front().shape()) + " vs " +
                       shape_string(p.shape()));
    }
    rows = p.dim(0);
    cols += p.dim(1);
  }
  RowMatrixX<Scalar> out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.dim(1)) = p.matrix();
    offset += p.dim(1);
  }
  bool track = false;
  if (Tape::current() != nullptr) {
    for (const auto& p : parts) track = track || p.requires_grad();
  }
  Tensor<Scalar> result(Shape{rows, cols}, detail::flatten(std::move(out)), track);
  if (track) {
    std::vector<detail::NodePtr<Scalar>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto out_node = result.node();
    Tape::current()->record([out_node, nodes, rows, cols]() {
      if (out_node->grad.size() == 0) return;
      ConstRowMatrixMap<Scalar> g(out_node->grad.data(), rows, cols);
      Index off = 0;
      for (const auto& n : nodes) {
        Index c = n->shape[1];
        if (auto* gp = detail::grad_target(n)) {
          RowMatrixMap<Scalar>(gp->data(), rows, c) += g.middleCols(off, c);
        }
        off += c;
      }
    });
  }
  return result;
}

/// Row lookup into a [V x d] table. Id -1 yields a zero row (padding) that
/// receives no gradient.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& table, std::span<const Index> ids) {
  detail::require_rank("gather_rows", table.shape(), 2);
  Index vocab = table.dim(0), width = table.dim(1);
  auto n = static_cast<Index>(ids.size());
  if (n == 0) throw ShapeError("gather_rows: empty index list");
  RowMatrixX<Scalar> out = RowMatrixX<Scalar>::Zero(n, width);
  auto tm = table.matrix();
  for (Index i = 0; i < n; ++i) {
    Index id = ids[static_cast<std::size_t>(i)];
    if (id == -1) continue;
    if (id < 0 || id >= vocab) {
      throw InputError("gather_rows: id " + std::to_string(id) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    out.row(i) = tm.row(id);
  }
  std::vector<Index> kept(ids.begin(), ids.end());
  auto tn = table.node();
  return make_op_result<Scalar>(Shape{n, width}, detail::flatten(std::move(out)), {&table},
                                [tn, kept = std::move(kept), width](const VectorX<Scalar>& g,
                                                                    const VectorX<Scalar>&) {
    auto* gt = detail::grad_target(tn);
    if (gt == nullptr) return;
    RowMatrixMap<Scalar> gm(gt->data(), tn->shape[0], width);
    ConstRowMatrixMap<Scalar> go(g.data(), static_cast<Index>(kept.size()), width);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (kept[i] >= 0) gm.row(kept[i]) += go.row(static_cast<Index>(i));
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  auto an = a.node();
  return make_op_result<Scalar>(Shape{}, VectorX<Scalar>::Constant(1, a.value().sum()), {&a},
                                [an](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    if (auto* ga = detail::grad_target(an)) ga->array() += g[0];
  });
}

template <typename Scalar>
Tensor<Scalar> sum_squares(const Tensor<Scalar>& a) {
  auto an = a.node();
  return make_op_result<Scalar>(Shape{}, VectorX<Scalar>::Constant(1, a.value().squaredNorm()), {&a},
                                [an](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    if (auto* ga = detail::grad_target(an)) *ga += Scalar(2) * g[0] * an->value;
  });
}

// ---------------------------------------------------------------------------
// Spatial

namespace detail {

struct Spatial {
  Index batch, height, width, channels;
  bool batched;
};

inline Spatial spatial_of(const char* op, const Shape& s) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw ShapeError(std::string(op) + ": expected [H,W,C] or [B,H,W,C], got " + shape_string(s));
}

inline Shape spatial_shape(const Spatial& sp, Index h, Index w, Index c) {
  return sp.batched ? Shape{sp.batch, h, w, c} : Shape{h, w, c};
}

}  // namespace detail

inline Index conv_output_extent(Index input, Index kernel, Index stride) {
  return (input - kernel) / stride + 1;
}

/// Valid (unpadded) 2-D cross-correlation. Input [H,W,C] or [B,H,W,C],
/// kernels [kh,kw,C,C'], bias [C']. Lowered to im2col + GEMM.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels, Index stride,
                      const Tensor<Scalar>& bias) {
  auto sp = detail::spatial_of("conv2d", input.shape());
  detail::require_rank("conv2d kernels", kernels.shape(), 4);
  Index kh = kernels.dim(0), kw = kernels.dim(1), cin = kernels.dim(2), cout = kernels.dim(3);
  if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
  if (cin != sp.channels) {
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + " has " + std::to_string(sp.channels) +
                     " channels but kernels " + shape_string(kernels.shape()) + " expect " +
                     std::to_string(cin));
  }
  if (sp.height < kh || sp.width < kw) {
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + " smaller than kernel " +
                     shape_string(kernels.shape()));
  }
  if (bias.size() != cout) {
    throw ShapeError("conv2d: bias " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(cout) + " output channels");
  }
  Index ho = conv_output_extent(sp.height, kh, stride);
  Index wo = conv_output_extent(sp.width, kw, stride);
  Index rows = sp.batch * ho * wo;
  Index patch = kh * kw * cin;
  Index seg = kw * cin;

  // patches(row=(b,i,j), col=(di,dj,c)); each (di) slab is contiguous in x.
  auto patches = std::make_shared<RowMatrixX<Scalar>>(rows, patch);
  const Scalar* x = input.value().data();
  for (Index b = 0; b < sp.batch; ++b) {
    for (Index i = 0; i < ho; ++i) {
      for (Index j = 0; j < wo; ++j) {
        Scalar* dst = patches->row((b * ho + i) * wo + j).data();
        for (Index di = 0; di < kh; ++di) {
          const Scalar* src = x + ((b * sp.height + i * stride + di) * sp.width + j * stride) * cin;
          std::memcpy(dst + di * seg, src, sizeof(Scalar) * static_cast<std::size_t>(seg));
        }
      }
    }
  }
  ConstRowMatrixMap<Scalar> kmat(kernels.value().data(), patch, cout);
  RowMatrixX<Scalar> y = (*patches) * kmat;
  y.rowwise() += bias.value().transpose();

  auto xn = input.node();
  auto kn = kernels.node();
  auto bn = bias.node();
  return make_op_result<Scalar>(
      detail::spatial_shape(sp, ho, wo, cout), detail::flatten(std::move(y)), {&input, &kernels, &bias},
      [xn, kn, bn, patches, sp, kh, stride, ho, wo, rows, patch, seg, cin, cout](const VectorX<Scalar>& g,
                                                                                 const VectorX<Scalar>&) {
        ConstRowMatrixMap<Scalar> gm(g.data(), rows, cout);
        if (auto* gk = detail::grad_target(kn)) {
          RowMatrixMap<Scalar>(gk->data(), patch, cout).noalias() += patches->transpose() * gm;
        }
        if (auto* gb = detail::grad_target(bn)) *gb += gm.colwise().sum().transpose();
        if (auto* gx = detail::grad_target(xn)) {
          RowMatrixX<Scalar> gp = gm * ConstRowMatrixMap<Scalar>(kn->value.data(), patch, cout).transpose();
          Scalar* dx = gx->data();
          for (Index b = 0; b < sp.batch; ++b) {
            for (Index i = 0; i < ho; ++i) {
              for (Index j = 0; j < wo; ++j) {
                const Scalar* src = gp.row((b * ho + i) * wo + j).data();
                for (Index di = 0; di < kh; ++di) {
                  Scalar* dst = dx + ((b * sp.height + i * stride + di) * sp.width + j * stride) * cin;
                  for (Index e = 0; e < seg; ++e) dst[e] += src[di * seg + e];
                }
              }
            }
          }
        }
      });
}

/// Zero rows inserted before/after along the H axis of [B,H,W,C].
template <typename Scalar>
Tensor<Scalar> pad_height(const Tensor<Scalar>& input, Index before, Index after) {
  detail::require_rank("pad_height", input.shape(), 4);
  Index b = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  Index hp = h + before + after;
  Index slab = w * c;
  VectorX<Scalar> out = VectorX<Scalar>::Zero(b * hp * slab);
  for (Index n = 0; n < b; ++n) {
    out.segment((n * hp + before) * slab, h * slab) = input.value().segment(n * h * slab, h * slab);
  }
  auto xn = input.node();
  return make_op_result<Scalar>(Shape{b, hp, w, c}, std::move(out), {&input},
                                [xn, b, h, hp, before, slab](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    if (auto* gx = detail::grad_target(xn)) {
      for (Index n = 0; n < b; ++n) {
        gx->segment(n * h * slab, h * slab) += g.segment((n * hp + before) * slab, h * slab);
      }
    }
  });
}

/// Channelwise mean over the full spatial extent; `window` must equal it.
template <typename Scalar>
Tensor<Scalar> mean_pool(const Tensor<Scalar>& input, std::pair<Index, Index> window) {
  auto sp = detail::spatial_of("mean_pool", input.shape());
  if (window.first != sp.height || window.second != sp.width) {
    throw ShapeError("mean_pool: window " + std::to_string(window.first) + "x" + std::to_string(window.second) +
                     " must equal input extent " + shape_string(input.shape()));
  }
  Index area = sp.height * sp.width;
  ConstRowMatrixMap<Scalar> x(input.value().data(), sp.batch * area, sp.channels);
  RowMatrixX<Scalar> out(sp.batch, sp.channels);
  for (Index b = 0; b < sp.batch; ++b) {
    out.row(b) = x.middleRows(b * area, area).colwise().sum() / static_cast<Scalar>(area);
  }
  auto xn = input.node();
  return make_op_result<Scalar>(detail::spatial_shape(sp, 1, 1, sp.channels), detail::flatten(std::move(out)),
                                {&input}, [xn, sp, area](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    auto* gx = detail::grad_target(xn);
    if (gx == nullptr) return;
    RowMatrixMap<Scalar> gxm(gx->data(), sp.batch * area, sp.channels);
    ConstRowMatrixMap<Scalar> gm(g.data(), sp.batch, sp.channels);
    for (Index b = 0; b < sp.batch; ++b) {
      gxm.middleRows(b * area, area).rowwise() += gm.row(b) / static_cast<Scalar>(area);
    }
  });
}

// ---------------------------------------------------------------------------
// Fusion primitives

/// Outer Hadamard fusion of two row sets per batch item:
/// out[(b,n,m),:] = video[(b,n),:] ⊙ words[(b,m),:].
template <typename Scalar>
Tensor<Scalar> pairwise_product(const Tensor<Scalar>& video, const Tensor<Scalar>& words, Index batch) {
  detail::require_rank("pairwise_product", video.shape(), 2);
  detail::require_rank("pairwise_product", words.shape(), 2);
  if (video.dim(1) != words.dim(1)) {
    throw ShapeError("pairwise_product: width mismatch " + shape_string(video.shape()) + " vs " +
                     shape_string(words.shape()));
  }
  if (batch <= 0 || video.dim(0) % batch != 0 || words.dim(0) % batch != 0) {
    throw ShapeError("pairwise_product: rows not divisible by batch " + std::to_string(batch));
  }
  Index n = video.dim(0) / batch, m = words.dim(0) / batch, c = video.dim(1);
  auto v = video.matrix();
  auto w = words.matrix();
  RowMatrixX<Scalar> out(batch * n * m, c);
  for (Index b = 0; b < batch; ++b) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < m; ++j) {
        out.row((b * n + i) * m + j) = v.row(b * n + i).cwiseProduct(w.row(b * m + j));
      }
    }
  }
  auto vn = video.node();
  auto wn = words.node();
  return make_op_result<Scalar>(Shape{batch * n * m, c}, detail::flatten(std::move(out)), {&video, &words},
                                [vn, wn, batch, n, m, c](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    ConstRowMatrixMap<Scalar> gm(g.data(), batch * n * m, c);
    ConstRowMatrixMap<Scalar> v(vn->value.data(), batch * n, c);
    ConstRowMatrixMap<Scalar> w(wn->value.data(), batch * m, c);
    auto* gv = detail::grad_target(vn);
    auto* gw = detail::grad_target(wn);
    for (Index b = 0; b < batch; ++b) {
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < m; ++j) {
          auto gr = gm.row((b * n + i) * m + j);
          if (gv) RowMatrixMap<Scalar>(gv->data(), batch * n, c).row(b * n + i) += gr.cwiseProduct(w.row(b * m + j));
          if (gw) RowMatrixMap<Scalar>(gw->data(), batch * m, c).row(b * m + j) += gr.cwiseProduct(v.row(b * n + i));
        }
      }
    }
  });
}

/// Multiplies every channel of a row by that row's single gate value:
/// x [..., C] times gate [..., 1], same leading extents.
template <typename Scalar>
Tensor<Scalar> gate_channels(const Tensor<Scalar>& x, const Tensor<Scalar>& gate) {
  if (x.rank() == 0 || gate.rank() != x.rank() || gate.shape().back() != 1 ||
      !std::equal(x.shape().begin(), x.shape().end() - 1, gate.shape().begin())) {
    throw ShapeError("gate_channels: gate " + shape_string(gate.shape()) + " does not match " +
                     shape_string(x.shape()));
  }
  Index rows = gate.size(), c = x.shape().back();
  RowMatrixX<Scalar> out = x.matrix();
  out.array().colwise() *= gate.value().array();
  auto xn = x.node();
  auto gn = gate.node();
  return make_op_result<Scalar>(x.shape(), detail::flatten(std::move(out)), {&x, &gate},
                                [xn, gn, rows, c](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    ConstRowMatrixMap<Scalar> gm(g.data(), rows, c);
    if (auto* gx = detail::grad_target(xn)) {
      RowMatrixMap<Scalar>(gx->data(), rows, c).array() += gm.array().colwise() * gn->value.array();
    }
    if (auto* gg = detail::grad_target(gn)) {
      *gg += gm.cwiseProduct(ConstRowMatrixMap<Scalar>(xn->value.data(), rows, c)).rowwise().sum();
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and regularization

/// Per-feature batch normalization state. Running statistics follow an
/// exponential moving average with the given decay.
template <typename Scalar>
struct BatchNorm {
  Tensor<Scalar> scale;
  Tensor<Scalar> shift;
  VectorX<Scalar> running_mean;
  VectorX<Scalar> running_var;
  Scalar momentum = Scalar(0.99);
  Scalar eps = Scalar(1e-5);

  BatchNorm() = default;
  explicit BatchNorm(Index features, Scalar momentum_ = Scalar(0.99), Scalar eps_ = Scalar(1e-5))
      : scale(Tensor<Scalar>::constant({features}, Scalar(1), true)),
        shift(Tensor<Scalar>::zeros({features}, true)),
        running_mean(VectorX<Scalar>::Zero(features)),
        running_var(VectorX<Scalar>::Ones(features)),
        momentum(momentum_),
        eps(eps_) {}

  Index features() const { return scale.size(); }
};

/// x [B x D]. Train mode normalizes with batch statistics (biased variance)
/// and, if `update_stats`, folds them into the running averages (unbiased
/// variance). Infer mode uses the running statistics.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, BatchNorm<Scalar>& bn, Mode mode, bool update_stats = true) {
  detail::require_rank("batch_norm", x.shape(), 2);
  Index rows = x.dim(0), d = x.dim(1);
  if (d != bn.features()) {
    throw ShapeError("batch_norm: input " + shape_string(x.shape()) + " vs " + std::to_string(bn.features()) +
                     " features");
  }
  auto xm = x.matrix();
  VectorX<Scalar> mean, inv_std;
  if (mode == Mode::train) {
    if (rows < 2) throw ConfigError("batch_norm: train mode needs a batch of at least 2 rows");
    mean = xm.colwise().mean().transpose();
    VectorX<Scalar> var = (xm.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose() /
                          static_cast<Scalar>(rows);
    inv_std = (var.array() + bn.eps).rsqrt().matrix();
    if (update_stats) {
      Scalar unbias = static_cast<Scalar>(rows) / static_cast<Scalar>(rows - 1);
      bn.running_mean = bn.momentum * bn.running_mean + (Scalar(1) - bn.momentum) * mean;
      bn.running_var = bn.momentum * bn.running_var + (Scalar(1) - bn.momentum) * unbias * var;
    }
  } else {
    mean = bn.running_mean;
    inv_std = (bn.running_var.array() + bn.eps).rsqrt().matrix();
  }
  auto normalized = std::make_shared<RowMatrixX<Scalar>>(
      (xm.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array());
  RowMatrixX<Scalar> y = normalized->array().rowwise() * bn.scale.value().transpose().array();
  y.rowwise() += bn.shift.value().transpose();

  auto xn = x.node();
  auto sn = bn.scale.node();
  auto hn = bn.shift.node();
  return make_op_result<Scalar>(x.shape(), detail::flatten(std::move(y)), {&x, &bn.scale, &bn.shift},
                                [xn, sn, hn, normalized, inv_std, rows, d, mode](const VectorX<Scalar>& g,
                                                                                 const VectorX<Scalar>&) {
    ConstRowMatrixMap<Scalar> gm(g.data(), rows, d);
    if (auto* gs = detail::grad_target(sn)) *gs += gm.cwiseProduct(*normalized).colwise().sum().transpose();
    if (auto* gh = detail::grad_target(hn)) *gh += gm.colwise().sum().transpose();
    auto* gx = detail::grad_target(xn);
    if (gx == nullptr) return;
    RowMatrixX<Scalar> gxh = gm.array().rowwise() * sn->value.transpose().array();
    RowMatrixMap<Scalar> gxm(gx->data(), rows, d);
    if (mode == Mode::infer) {
      gxm.array() += gxh.array().rowwise() * inv_std.transpose().array();
      return;
    }
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum_g = gxh.colwise().sum();
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum_gx = gxh.cwiseProduct(*normalized).colwise().sum();
    Scalar inv_rows = Scalar(1) / static_cast<Scalar>(rows);
    RowMatrixX<Scalar> centered = (gxh * static_cast<Scalar>(rows)).rowwise() - sum_g;
    centered.array() -= normalized->array().rowwise() * sum_gx.array();
    gxm.array() += (centered.array().rowwise() * inv_std.transpose().array()) * inv_rows;
  });
}

/// Inverted dropout: survivors are rescaled by 1/(1-rate) at train time so
/// that infer mode is the identity.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return x;
  auto keep_scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  VectorX<Scalar> mask(x.size());
  for (Index i = 0; i < x.size(); ++i) mask[i] = rng.uniform() < rate ? Scalar(0) : keep_scale;
  auto xn = x.node();
  return make_op_result<Scalar>(x.shape(), x.value().cwiseProduct(mask), {&x},
                                [xn, mask](const VectorX<Scalar>& g, const VectorX<Scalar>&) {
    if (auto* gx = detail::grad_target(xn)) *gx += g.cwiseProduct(mask);
  });
}

}  // namespace jsfusion
