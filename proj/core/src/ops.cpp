#include "hisem/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace hisem {

namespace {

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(x.shape()));
  }
}

std::vector<Real> copy_values(const Tensor& x) { return {x.values().begin(), x.values().end()}; }

Real sigmoid_scalar(Real v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  Real e = std::exp(v);
  return e / (1.0 + e);
}

// C[m x n] += A[m x k] . B[k x n]
void gemm_acc(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* __restrict crow = c + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const Real av = a[i * k + t];
      const Real* __restrict brow = b + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return make_op_result(std::move(shape), copy_values(x), {x}, [x](const Tensor& out) {
    accumulate_grad(x, out.grad_view());
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<Real> v(m * n);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j * m + i] = xv[i * n + j];
  return make_op_result({n, m}, std::move(v), {x}, [x, m, n](const Tensor& out) {
    if (!x.requires_grad()) return;
    auto g = out.grad_view();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
  });
}

Tensor detach(const Tensor& x) { return Tensor(x.shape(), copy_values(x)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  std::vector<Real> c(m * n, 0.0);
  gemm_acc(a.values().data(), b.values().data(), c.data(), m, k, n);
  return make_op_result({m, n}, std::move(c), {a, b}, [a, b, m, k, n](const Tensor& out) {
    const Real* g = out.grad_view().data();
    if (a.requires_grad()) {
      Real* ga = a.mutable_grad().data();
      const Real* bv = b.values().data();
      for (std::size_t i = 0; i < m; ++i) {
        const Real* grow = g + i * n;
        for (std::size_t t = 0; t < k; ++t) {
          const Real* brow = bv + t * n;
          Real acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + t] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      Real* gb = b.mutable_grad().data();
      const Real* av = a.values().data();
      for (std::size_t i = 0; i < m; ++i) {
        const Real* grow = g + i * n;
        for (std::size_t t = 0; t < k; ++t) {
          const Real s = av[i * k + t];
          Real* __restrict gbrow = gb + t * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match " +
                         to_string(x.shape()));
  }
  std::vector<Real> v = copy_values(x);
  auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] += bv[j];
  return make_op_result({m, n}, std::move(v), {x, bias}, [x, bias, m, n](const Tensor& out) {
    auto g = out.grad_view();
    accumulate_grad(x, g);
    if (bias.requires_grad()) {
      auto gb = bias.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

Tensor elementwise(ElementwiseOp op, const Tensor& x, const Tensor* y, Real factor) {
  switch (op) {
    case ElementwiseOp::kAdd:
    case ElementwiseOp::kSub:
    case ElementwiseOp::kMul: {
      if (y == nullptr) throw std::invalid_argument("elementwise: binary op needs a second operand");
      const Tensor& yy = *y;
      const bool x_scalar = x.numel() == 1 && yy.numel() != 1;
      const bool y_scalar = yy.numel() == 1 && !x_scalar && x.shape() != yy.shape();
      if (!x_scalar && !y_scalar && x.shape() != yy.shape()) {
        throw DimensionError("elementwise: shape mismatch " + to_string(x.shape()) + " vs " +
                             to_string(yy.shape()));
      }
      const Shape shape = x_scalar ? yy.shape() : x.shape();
      const std::size_t n = numel_of(shape);
      auto xv = x.values();
      auto yv = yy.values();
      auto xa = [&](std::size_t i) { return x_scalar ? xv[0] : xv[i]; };
      auto ya = [&](std::size_t i) { return y_scalar ? yv[0] : yv[i]; };
      std::vector<Real> v(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (op == ElementwiseOp::kAdd) v[i] = xa(i) + ya(i);
        else if (op == ElementwiseOp::kSub) v[i] = xa(i) - ya(i);
        else v[i] = xa(i) * ya(i);
      }
      Tensor yc = yy;
      return make_op_result(shape, std::move(v), {x, yc},
                            [x, yc, op, x_scalar, y_scalar, n](const Tensor& out) {
        auto g = out.grad_view();
        auto xv = x.values();
        auto yv = yc.values();
        if (x.requires_grad()) {
          auto gx = x.mutable_grad();
          for (std::size_t i = 0; i < n; ++i) {
            Real d = g[i];
            if (op == ElementwiseOp::kMul) d *= y_scalar ? yv[0] : yv[i];
            gx[x_scalar ? 0 : i] += d;
          }
        }
        if (yc.requires_grad()) {
          auto gy = yc.mutable_grad();
          for (std::size_t i = 0; i < n; ++i) {
            Real d = g[i];
            if (op == ElementwiseOp::kSub) d = -d;
            if (op == ElementwiseOp::kMul) d *= x_scalar ? xv[0] : xv[i];
            gy[y_scalar ? 0 : i] += d;
          }
        }
      });
    }
    case ElementwiseOp::kAbs:
    case ElementwiseOp::kRelu:
    case ElementwiseOp::kSigmoid:
    case ElementwiseOp::kSilu:
    case ElementwiseOp::kScale: {
      const std::size_t n = x.numel();
      auto xv = x.values();
      std::vector<Real> v(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Real a = xv[i];
        switch (op) {
          case ElementwiseOp::kAbs: v[i] = std::fabs(a); break;
          case ElementwiseOp::kRelu: v[i] = a > 0 ? a : 0.0; break;
          case ElementwiseOp::kSigmoid: v[i] = sigmoid_scalar(a); break;
          case ElementwiseOp::kSilu: v[i] = a * sigmoid_scalar(a); break;
          default: v[i] = a * factor; break;
        }
      }
      return make_op_result(x.shape(), std::move(v), {x}, [x, op, factor, n](const Tensor& out) {
        if (!x.requires_grad()) return;
        auto g = out.grad_view();
        auto xv = x.values();
        auto ov = out.values();
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const Real a = xv[i];
          Real d = 0.0;
          switch (op) {
            case ElementwiseOp::kAbs: d = a > 0 ? 1.0 : (a < 0 ? -1.0 : 0.0); break;
            case ElementwiseOp::kRelu: d = a > 0 ? 1.0 : 0.0; break;
            case ElementwiseOp::kSigmoid: d = ov[i] * (1.0 - ov[i]); break;
            case ElementwiseOp::kSilu: {
              const Real s = sigmoid_scalar(a);
              d = s * (1.0 + a * (1.0 - s));
              break;
            }
            default: d = factor; break;
          }
          gx[i] += g[i] * d;
        }
      });
    }
  }
  throw std::invalid_argument("elementwise: unsupported op id " +
                              std::to_string(static_cast<int>(op)));
}

Tensor add(const Tensor& x, const Tensor& y) { return elementwise(ElementwiseOp::kAdd, x, &y); }
Tensor sub(const Tensor& x, const Tensor& y) { return elementwise(ElementwiseOp::kSub, x, &y); }
Tensor mul(const Tensor& x, const Tensor& y) { return elementwise(ElementwiseOp::kMul, x, &y); }
Tensor abs(const Tensor& x) { return elementwise(ElementwiseOp::kAbs, x); }
Tensor relu(const Tensor& x) { return elementwise(ElementwiseOp::kRelu, x); }
Tensor sigmoid(const Tensor& x) { return elementwise(ElementwiseOp::kSigmoid, x); }
Tensor silu(const Tensor& x) { return elementwise(ElementwiseOp::kSilu, x); }
Tensor scale(const Tensor& x, Real factor) {
  return elementwise(ElementwiseOp::kScale, x, nullptr, factor);
}

Tensor add_scalar(const Tensor& x, Real value) {
  std::vector<Real> v = copy_values(x);
  for (auto& e : v) e += value;
  return make_op_result(x.shape(), std::move(v), {x}, [x](const Tensor& out) {
    accumulate_grad(x, out.grad_view());
  });
}

Tensor one_minus(const Tensor& x) { return add_scalar(scale(x, -1.0), 1.0); }

Tensor sum(const Tensor& x) {
  Real s = 0.0;
  for (Real v : x.values()) s += v;
  return make_op_result({1}, {s}, {x}, [x](const Tensor& out) {
    if (!x.requires_grad()) return;
    const Real g = out.grad_view()[0];
    for (auto& e : x.mutable_grad()) e += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<Real>(x.numel())); }

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<Real> v(n, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j] += xv[i * n + j];
  const Real inv = 1.0 / static_cast<Real>(m);
  for (auto& e : v) e *= inv;
  return make_op_result({1, n}, std::move(v), {x}, [x, m, n, inv](const Tensor& out) {
    if (!x.requires_grad()) return;
    auto g = out.grad_view();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] * inv;
  });
}

Tensor normalize_rows(const Tensor& x) {
  require_rank(x, 2, "normalize_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto xv = x.values();
  std::vector<Real> sums(m, 0.0);
  std::vector<Real> v(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) sums[i] += xv[i * n + j];
    if (sums[i] == 0.0) throw std::domain_error("normalize_rows: row " + std::to_string(i) + " sums to 0");
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = xv[i * n + j] / sums[i];
  }
  return make_op_result({m, n}, std::move(v), {x}, [x, m, n, sums](const Tensor& out) {
    if (!x.requires_grad()) return;
    auto g = out.grad_view();
    auto y = out.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < m; ++i) {
      Real dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += (g[i * n + j] - dot) / sums[i];
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  if (b.dim(0) != m) {
    throw DimensionError("concat_cols: row counts differ for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  std::vector<Real> v(m * (p + q));
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.begin() + i * p, p, v.begin() + i * (p + q));
    std::copy_n(bv.begin() + i * q, q, v.begin() + i * (p + q) + p);
  }
  return make_op_result({m, p + q}, std::move(v), {a, b}, [a, b, m, p, q](const Tensor& out) {
    auto g = out.grad_view();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().dim(1);
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != n) {
      throw DimensionError("concat_rows: column counts differ, " + to_string(parts.front().shape()) +
                           " vs " + to_string(p.shape()));
    }
    m += p.dim(0);
  }
  std::vector<Real> v;
  v.reserve(m * n);
  for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  return make_op_result({m, n}, std::move(v), parts, [parts](const Tensor& out) {
    auto g = out.grad_view();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      }
      offset += p.numel();
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<Real> v(idx.size() * n);
  auto xv = x.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) {
      throw DimensionError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                           to_string(x.shape()));
    }
    std::copy_n(xv.begin() + idx[r] * n, n, v.begin() + r * n);
  }
  const std::size_t k = idx.size();
  return make_op_result({k, n}, std::move(v), {x}, [x, idx, n](const Tensor& out) {
    if (!x.requires_grad()) return;
    auto g = out.grad_view();
    auto gx = x.mutable_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) gx[idx[r] * n + j] += g[r * n + j];
  });
}

Tensor index_add_rows(const Tensor& base, std::span<const std::size_t> index, const Tensor& rows) {
  require_rank(base, 2, "index_add_rows");
  require_rank(rows, 2, "index_add_rows");
  const std::size_t m = base.dim(0), n = base.dim(1);
  if (rows.dim(1) != n || rows.dim(0) != index.size()) {
    throw DimensionError("index_add_rows: rows " + to_string(rows.shape()) + " do not fit base " +
                         to_string(base.shape()) + " with " + std::to_string(index.size()) +
                         " indices");
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<Real> v = copy_values(base);
  auto rv = rows.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) throw DimensionError("index_add_rows: index out of range");
    for (std::size_t j = 0; j < n; ++j) v[idx[r] * n + j] += rv[r * n + j];
  }
  return make_op_result({m, n}, std::move(v), {base, rows}, [base, rows, idx, n](const Tensor& out) {
    auto g = out.grad_view();
    accumulate_grad(base, g);
    if (rows.requires_grad()) {
      auto gr = rows.mutable_grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) gr[r * n + j] += g[idx[r] * n + j];
    }
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& w) {
  require_rank(x, 2, "scale_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (w.numel() != m) {
    throw DimensionError("scale_rows: weights " + to_string(w.shape()) + " do not match " +
                         to_string(x.shape()));
  }
  std::vector<Real> v(m * n);
  auto xv = x.values();
  auto wv = w.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = xv[i * n + j] * wv[i];
  return make_op_result({m, n}, std::move(v), {x, w}, [x, w, m, n](const Tensor& out) {
    auto g = out.grad_view();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      auto wv = w.values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * wv[i];
    }
    if (w.requires_grad()) {
      auto gw = w.mutable_grad();
      auto xv = x.values();
      for (std::size_t i = 0; i < m; ++i) {
        Real acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * xv[i * n + j];
        gw[i] += acc;
      }
    }
  });
}

Tensor select_column(const Tensor& x, std::size_t col) {
  require_rank(x, 2, "select_column");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (col >= n) throw DimensionError("select_column: column out of range for " + to_string(x.shape()));
  std::vector<Real> v(m);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) v[i] = xv[i * n + col];
  return make_op_result({m, 1}, std::move(v), {x}, [x, m, n, col](const Tensor& out) {
    if (!x.requires_grad()) return;
    auto g = out.grad_view();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < m; ++i) gx[i * n + col] += g[i];
  });
}

Tensor diag(const Tensor& v) {
  const std::size_t l = v.numel();
  std::vector<Real> d(l * l, 0.0);
  auto vv = v.values();
  for (std::size_t i = 0; i < l; ++i) d[i * l + i] = vv[i];
  return make_op_result({l, l}, std::move(d), {v}, [v, l](const Tensor& out) {
    if (!v.requires_grad()) return;
    auto g = out.grad_view();
    auto gv = v.mutable_grad();
    for (std::size_t i = 0; i < l; ++i) gv[i] += g[i * l + i];
  });
}

namespace {

// Softmax over the first `width(i)` columns of each row; the rest are zero.
template <typename WidthFn>
Tensor masked_row_softmax(const Tensor& x, std::size_t rows, std::size_t n, WidthFn width) {
  auto xv = x.values();
  std::vector<Real> v(rows * n, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t w = width(i);
    const Real* row = xv.data() + i * n;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < w; ++j) mx = std::max(mx, row[j]);
    Real s = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      v[i * n + j] = std::exp(row[j] - mx);
      s += v[i * n + j];
    }
    for (std::size_t j = 0; j < w; ++j) v[i * n + j] /= s;
  }
  return make_op_result(x.shape(), std::move(v), {x}, [x, rows, n, width](const Tensor& out) {
    if (!x.requires_grad()) return;
    auto g = out.grad_view();
    auto y = out.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t w = width(i);
      Real dot = 0.0;
      for (std::size_t j = 0; j < w; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < w; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  return masked_row_softmax(x, rows, n, [n](std::size_t) { return n; });
}

Tensor causal_softmax(const Tensor& x) {
  require_rank(x, 2, "causal_softmax");
  const std::size_t n = x.dim(0);
  if (x.dim(1) != n) throw DimensionError("causal_softmax: needs a square matrix, got " + to_string(x.shape()));
  return masked_row_softmax(x, n, n, [](std::size_t i) { return i + 1; });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine " + to_string(gamma.shape()) + "/" +
                         to_string(beta.shape()) + " does not match " + to_string(x.shape()));
  }
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<Real> xhat(rows * d), inv_std(rows), v(rows * d);
  for (std::size_t i = 0; i < rows; ++i) {
    const Real* row = xv.data() + i * d;
    Real mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<Real>(d);
    Real var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      v[i * d + j] = gv[j] * xhat[i * d + j] + bv[j];
    }
  }
  return make_op_result(x.shape(), std::move(v), {x, gamma, beta},
                        [x, gamma, beta, rows, d, xhat, inv_std](const Tensor& out) {
    auto g = out.grad_view();
    auto gv = gamma.values();
    if (gamma.requires_grad()) {
      auto gg = gamma.mutable_grad();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
    }
    if (beta.requires_grad()) {
      auto gb = beta.mutable_grad();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
    }
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      const Real inv_d = 1.0 / static_cast<Real>(d);
      for (std::size_t i = 0; i < rows; ++i) {
        Real mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const Real dxh = g[i * d + j] * gv[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat[i * d + j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const Real dxh = g[i * d + j] * gv[j];
          gx[i * d + j] += inv_std[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
        }
      }
    }
  });
}

Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 3, "conv3x3");
  require_rank(w, 4, "conv3x3");
  const std::size_t h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  if (w.dim(0) != 3 || w.dim(1) != 3 || w.dim(2) != c) {
    throw DimensionError("conv3x3: kernel " + to_string(w.shape()) + " does not fit input " +
                         to_string(x.shape()));
  }
  const std::size_t co = w.dim(3);
  if (b.numel() != co) {
    throw DimensionError("conv3x3: bias " + to_string(b.shape()) + " does not match " +
                         std::to_string(co) + " output channels");
  }
  auto xv = x.values();
  auto kv = w.values();
  auto bv = b.values();
  std::vector<Real> v(h * wd * co);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < wd; ++xx) {
      Real* __restrict orow = v.data() + (y * wd + xx) * co;
      std::copy(bv.begin(), bv.end(), orow);
      for (int dy = 0; dy < 3; ++dy) {
        const long sy = static_cast<long>(y) + dy - 1;
        if (sy < 0 || sy >= static_cast<long>(h)) continue;
        for (int dx = 0; dx < 3; ++dx) {
          const long sx = static_cast<long>(xx) + dx - 1;
          if (sx < 0 || sx >= static_cast<long>(wd)) continue;
          const Real* in = xv.data() + (static_cast<std::size_t>(sy) * wd + static_cast<std::size_t>(sx)) * c;
          const Real* tap = kv.data() + static_cast<std::size_t>(dy * 3 + dx) * c * co;
          for (std::size_t ci = 0; ci < c; ++ci) {
            const Real a = in[ci];
            const Real* __restrict krow = tap + ci * co;
            for (std::size_t o = 0; o < co; ++o) orow[o] += a * krow[o];
          }
        }
      }
    }
  }
  return make_op_result({h, wd, co}, std::move(v), {x, w, b},
                        [x, w, b, h, wd, c, co](const Tensor& out) {
    const Real* g = out.grad_view().data();
    auto xv = x.values();
    auto kv = w.values();
    Real* gx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
    Real* gw = w.requires_grad() ? w.mutable_grad().data() : nullptr;
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t p = 0; p < h * wd; ++p)
        for (std::size_t o = 0; o < co; ++o) gb[o] += g[p * co + o];
    }
    if (gx == nullptr && gw == nullptr) return;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < wd; ++xx) {
        const Real* grow = g + (y * wd + xx) * co;
        for (int dy = 0; dy < 3; ++dy) {
          const long sy = static_cast<long>(y) + dy - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (int dx = 0; dx < 3; ++dx) {
            const long sx = static_cast<long>(xx) + dx - 1;
            if (sx < 0 || sx >= static_cast<long>(wd)) continue;
            const std::size_t in_off =
                (static_cast<std::size_t>(sy) * wd + static_cast<std::size_t>(sx)) * c;
            const std::size_t tap_off = static_cast<std::size_t>(dy * 3 + dx) * c * co;
            for (std::size_t ci = 0; ci < c; ++ci) {
              const Real* krow = kv.data() + tap_off + ci * co;
              if (gx != nullptr) {
                Real acc = 0.0;
                for (std::size_t o = 0; o < co; ++o) acc += grow[o] * krow[o];
                gx[in_off + ci] += acc;
              }
              if (gw != nullptr) {
                const Real a = xv[in_off + ci];
                Real* __restrict gwrow = gw + tap_off + ci * co;
                for (std::size_t o = 0; o < co; ++o) gwrow[o] += a * grow[o];
              }
            }
          }
        }
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t m = logits.dim(0), v = logits.dim(1);
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         to_string(logits.shape()) + " logits");
  }
  auto lv = logits.values();
  std::vector<Real> probs(m * v, 0.0);
  std::vector<int> tgt(targets.begin(), targets.end());
  Real total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tgt[i] < 0) continue;
    if (static_cast<std::size_t>(tgt[i]) >= v) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(tgt[i]) +
                              " outside vocabulary of " + std::to_string(v));
    }
    const Real* row = lv.data() + i * v;
    const Real mx = *std::max_element(row, row + v);
    Real s = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - mx);
      s += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= s;
    total += -(row[tgt[i]] - mx - std::log(s));
    ++count;
  }
  const Real inv = count ? 1.0 / static_cast<Real>(count) : 0.0;
  return make_op_result({1}, {total * inv}, {logits},
                        [logits, probs, tgt, m, v, inv](const Tensor& out) {
    if (!logits.requires_grad()) return;
    const Real g = out.grad_view()[0] * inv;
    auto gl = logits.mutable_grad();
    for (std::size_t i = 0; i < m; ++i) {
      if (tgt[i] < 0) continue;
      for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += g * probs[i * v + j];
      gl[i * v + static_cast<std::size_t>(tgt[i])] -= g;
    }
  });
}

TopK top_k(std::span<const Real> scores, std::size_t k) {
  if (k == 0 || k > scores.size()) {
    throw std::invalid_argument("top_k: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  TopK out;
  out.indices.assign(order.begin(), order.begin() + static_cast<long>(k));
  for (auto i : out.indices) out.values.push_back(scores[i]);
  return out;
}

}  // namespace hisem
