#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hisem/tensor.hpp"

// Differentiable tensor operations. Binary elementwise ops require identical
// shapes, except that either operand may be a one-element scalar tensor.
// Everything else that looks like broadcasting (row bias, row scaling) is a
// named op so shape intent stays explicit at the call site.

namespace hisem {

// -- shape ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);
/// Same values, cut from the tape.
Tensor detach(const Tensor& x);

// -- linear algebra ---------------------------------------------------------

/// [m x k] . [k x n] -> [m x n]. Each output entry is reduced in ascending k,
/// independently of the other rows, so a row's result does not depend on
/// which other rows are in the batch.
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m x n] + bias[n] added to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x . w (+ b when defined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

// -- elementwise ------------------------------------------------------------

enum class ElementwiseOp { kAdd, kSub, kMul, kAbs, kRelu, kSigmoid, kSilu, kScale };

/// Generic dispatcher. Binary ops need `y`; kScale multiplies by `factor`.
/// The gradient of abs at exactly 0 is 0.
Tensor elementwise(ElementwiseOp op, const Tensor& x, const Tensor* y = nullptr,
                   Real factor = 1.0);

Tensor add(const Tensor& x, const Tensor& y);
Tensor sub(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& x, const Tensor& y);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor scale(const Tensor& x, Real factor);
Tensor add_scalar(const Tensor& x, Real value);
/// 1 - x
Tensor one_minus(const Tensor& x);

// -- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Column means of a matrix: [m x n] -> [1 x n].
Tensor mean_rows(const Tensor& x);
/// Divides each row by its sum.
Tensor normalize_rows(const Tensor& x);

// -- structure --------------------------------------------------------------

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// base with `rows[r]` added into row `index[r]`.
Tensor index_add_rows(const Tensor& base, std::span<const std::size_t> index, const Tensor& rows);
/// Row i of x multiplied by w[i]; w has m entries.
Tensor scale_rows(const Tensor& x, const Tensor& w);
Tensor select_column(const Tensor& x, std::size_t col);
/// Vector of L entries -> [L x L] diagonal matrix.
Tensor diag(const Tensor& v);

// -- neural network primitives ---------------------------------------------

/// Stable softmax over the last axis.
Tensor softmax_lastdim(const Tensor& x);
/// Row-wise softmax of a square matrix restricted to columns j <= i.
Tensor causal_softmax(const Tensor& x);
/// Normalises over the last axis, then gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);
/// 3x3 convolution, stride 1, zero padding 1.
/// x: [H x W x C], w: [3 x 3 x C x C'], b: [C'] -> [H x W x C'].
Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b);
/// Mean token cross-entropy of [M x V] logits; targets < 0 are ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

struct TopK {
  std::vector<std::size_t> indices;
  std::vector<Real> values;
};

/// The k largest entries in descending value order; ties go to the lower
/// index.
TopK top_k(std::span<const Real> scores, std::size_t k);

}  // namespace hisem
