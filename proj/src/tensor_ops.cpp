#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mlec/rng.hpp"
#include "tensor_node.hpp"

namespace mlec {

using detail::make_result;
using detail::wants_grad;
using Node = Tensor::Node;

namespace {

// ---- GEMM kernels (fixed accumulation order: increasing inner index) ----------

// Every kernel accumulates each output element over its reduction index in
// increasing order, one multiply and one add at a time. Working on four output
// rows at once only changes which elements are in flight together, so results
// match the plain triple loop bit for bit on any instruction set.
#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
#define MLEC_KERNEL __attribute__((target_clones("avx2", "default")))
#else
#define MLEC_KERNEL
#endif

// C[m x n] += A[m x k] . B[k x n]
MLEC_KERNEL void gemm_acc(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
                          std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      const double x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = brow[j];
        c0[j] += x0 * bv;
        c1[j] += x1 * bv;
        c2[j] += x2 * bv;
        c3[j] += x3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k x n] += A[m x k]^T . G[m x n]
MLEC_KERNEL void gemm_tn_acc(const double* __restrict a, const double* __restrict g, double* __restrict c, std::size_t m,
                             std::size_t k, std::size_t n) {
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    double* c0 = c + p * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    for (std::size_t i = 0; i < m; ++i) {
      const double* grow = g + i * n;
      const double* arow = a + i * k + p;
      const double x0 = arow[0], x1 = arow[1], x2 = arow[2], x3 = arow[3];
      for (std::size_t j = 0; j < n; ++j) {
        const double gv = grow[j];
        c0[j] += x0 * gv;
        c1[j] += x1 * gv;
        c2[j] += x2 * gv;
        c3[j] += x3 * gv;
      }
    }
  }
  for (; p < k; ++p) {
    double* crow = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      const double* grow = g + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

// C[m x k] += G[m x n] . B[k x n]^T
void gemm_nt_acc(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_acc(g, bt.data(), c, m, n, k);
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape without_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

// ---- Elementwise helpers --------------------------------------------------------

template <class Fwd, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  const bool a_scalar = a.rank() == 0 && b.rank() != 0;
  const bool b_scalar = b.rank() == 0 && a.rank() != 0;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);

  return make_result(out_shape, std::move(out), {a, b}, [=](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    const auto& g = self.grad;
    if (wants_grad(A)) {
      auto& ga = A->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = a_scalar ? 0 : i, ib = b_scalar ? 0 : i;
        ga[ia] += g[i] * da(A->value[ia], B->value[ib]);
      }
    }
    if (wants_grad(B)) {
      auto& gb = B->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = a_scalar ? 0 : i, ib = b_scalar ? 0 : i;
        gb[ib] += g[i] * db(A->value[ia], B->value[ib]);
      }
    }
  });
}

// `deriv(x, y)` is dy/dx given input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    auto& X = *self.inputs[0];
    auto& gx = X.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(X.value[i], self.value[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

// ---- Linear algebra ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) gemm_nt_acc(self.grad.data(), B.value.data(), A.grad_buffer().data(), m, k, n);
    if (B.requires_grad) gemm_tn_acc(A.value.data(), self.grad.data(), B.grad_buffer().data(), m, k, n);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    throw ShapeError("bmm: shape mismatch " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  }
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_acc(a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n, m, k, n);
  }
  return make_result({batch, m, n}, std::move(out), {a, b}, [batch, m, k, n](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    for (std::size_t i = 0; i < batch; ++i) {
      const double* g = self.grad.data() + i * m * n;
      if (A.requires_grad) gemm_nt_acc(g, B.value.data() + i * k * n, A.grad_buffer().data() + i * m * k, m, k, n);
      if (B.requires_grad) gemm_tn_acc(A.value.data() + i * m * k, g, B.grad_buffer().data() + i * k * n, m, k, n);
    }
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("transpose: expected rank 2 or 3, got " + shape_str(x.shape()));
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = xv[b * r * c + i * c + j];
  return make_result(out_shape, std::move(out), {x}, [batch, r, c](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
  });
}

// ---- Elementwise ------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw std::domain_error("log of non-positive value " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_rowwise");
  if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    throw ShapeError("add_rowwise: " + shape_str(x.shape()) + " + bias " + shape_str(bias.shape()));
  }
  const std::size_t n = bias.dim(0), rows = x.numel() / n;
  const auto xv = x.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] + bv[j];
  return make_result(x.shape(), std::move(out), {x, bias}, [rows, n](Node& self) {
    if (wants_grad(self.inputs[0])) {
      auto& gx = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    }
    if (wants_grad(self.inputs[1])) {
      auto& gb = self.inputs[1]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[r * n + j];
    }
  });
}

// ---- Reductions -----------------------------------------------------------------

Tensor sum(const Tensor& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis, "sum");
  const auto xv = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.extent + e) * s.inner + i];
  return make_result(without_axis(x.shape(), axis), std::move(out), {x}, [s](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis, "mean");
  if (s.extent == 0) throw ShapeError("mean: empty axis");
  return scale(sum(x, axis), 1.0 / static_cast<double>(s.extent));
}

Tensor max(const Tensor& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis, "max");
  if (s.extent == 0) throw ShapeError("max: empty axis");
  const auto xv = x.data();
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner, 0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      double best_v = xv[o * s.extent * s.inner + i];
      for (std::size_t e = 1; e < s.extent; ++e) {
        const double v = xv[(o * s.extent + e) * s.inner + i];
        if (v > best_v) {
          best_v = v;
          best = e;
        }
      }
      out[o * s.inner + i] = best_v;
      arg[o * s.inner + i] = best;
    }
  }
  return make_result(without_axis(x.shape(), axis), std::move(out), {x}, [s, arg](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i)
        gx[(o * s.extent + arg[o * s.inner + i]) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

Tensor sum_all(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {x}, [](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (double& g : gx) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor masked_mean(const Tensor& x, const Tensor& mask) {
  require_rank(x, 3, "masked_mean");
  require_rank(mask, 2, "masked_mean");
  const std::size_t B = x.dim(0), T = x.dim(1), H = x.dim(2);
  if (mask.dim(0) != B || mask.dim(1) != T) {
    throw ShapeError("masked_mean: mask " + shape_str(mask.shape()) + " vs input " + shape_str(x.shape()));
  }
  const auto xv = x.data();
  const auto mv = mask.data();
  std::vector<double> inv_count(B);
  std::vector<double> out(B * H, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    double count = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      if (mv[b * T + t] == 0.0) continue;
      count += 1.0;
      for (std::size_t h = 0; h < H; ++h) out[b * H + h] += xv[(b * T + t) * H + h];
    }
    if (count == 0.0) throw std::invalid_argument("masked_mean: row " + std::to_string(b) + " is fully masked");
    inv_count[b] = 1.0 / count;
    for (std::size_t h = 0; h < H; ++h) out[b * H + h] *= inv_count[b];
  }
  return make_result({B, H}, std::move(out), {x, mask}, [B, T, H, inv_count](Node& self) {
    if (!wants_grad(self.inputs[0])) return;
    auto& gx = self.inputs[0]->grad_buffer();
    const auto& mv = self.inputs[1]->value;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t) {
        if (mv[b * T + t] == 0.0) continue;
        for (std::size_t h = 0; h < H; ++h) gx[(b * T + t) * H + h] += self.grad[b * H + h] * inv_count[b];
      }
  });
}

// ---- Normalization and probability ----------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis, const Tensor& mask) {
  const auto s = split_at(x.shape(), axis, "softmax");
  const bool masked = mask.defined();
  if (masked && mask.shape() != x.shape()) {
    throw ShapeError("softmax: mask " + shape_str(mask.shape()) + " vs input " + shape_str(x.shape()));
  }
  const auto xv = x.data();
  std::vector<double> out(xv.size(), 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t e) { return (o * s.extent + e) * s.inner + i; };
      auto live = [&](std::size_t e) { return !masked || mask.data()[at(e)] != 0.0; };
      double peak = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (std::size_t e = 0; e < s.extent; ++e) {
        if (!live(e)) continue;
        any = true;
        peak = std::max(peak, xv[at(e)]);
      }
      if (!any) throw std::invalid_argument("softmax: fully masked slice");
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        if (!live(e)) continue;
        out[at(e)] = std::exp(xv[at(e)] - peak);
        total += out[at(e)];
      }
      for (std::size_t e = 0; e < s.extent; ++e) {
        if (live(e)) out[at(e)] /= total;
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) {
          const auto k = (o * s.extent + e) * s.inner + i;
          dot += y[k] * self.grad[k];
        }
        for (std::size_t e = 0; e < s.extent; ++e) {
          const auto k = (o * s.extent + e) * s.inner + i;
          gx[k] += y[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0) || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  const auto xv = x.data();
  std::vector<double> factor(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    factor[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = xv[i] * factor[i];
  }
  return make_result(x.shape(), std::move(out), {x}, [factor = std::move(factor)](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  if (x.rank() == 0 || x.shape().back() != gamma.dim(0) || beta.dim(0) != gamma.dim(0)) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " with gamma " + shape_str(gamma.shape()));
  }
  const std::size_t d = gamma.dim(0), rows = x.numel() / d;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, [d, rows, xhat, inv_std](Node& self) {
    auto& X = self.inputs[0];
    auto& G = self.inputs[1];
    auto& Bt = self.inputs[2];
    const auto& g = self.grad;
    if (wants_grad(G)) {
      auto& gg = G->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
    }
    if (wants_grad(Bt)) {
      auto& gb = Bt->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
    }
    if (wants_grad(X)) {
      auto& gx = X->grad_buffer();
      const auto& gamma_v = G->value;
      const double dd = static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxhat = g[r * d + j] * gamma_v[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) {
          const double dxhat = g[r * d + j] * gamma_v[j];
          gx[r * d + j] += inv_std[r] / dd * (dd * dxhat - sum_dxhat - xhat[r * d + j] * sum_dxhat_xhat);
        }
      }
    }
  });
}

// ---- Shape manipulation ----------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_result(std::move(shape), x.to_vector(), {x}, [](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  split_at(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) + " on axis " + std::to_string(axis));
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const auto split = split_at(out_shape, axis, "concat");
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    const std::size_t chunk = extents[k] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * split.extent * split.inner + offset);
    }
    offset += chunk;
  }
  return make_result(out_shape, std::move(out), parts, [split, extents](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t chunk = extents[k] * split.inner;
      if (wants_grad(self.inputs[k])) {
        auto& gp = self.inputs[k]->grad_buffer();
        for (std::size_t o = 0; o < split.outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += self.grad[o * split.extent * split.inner + offset + i];
      }
      offset += chunk;
    }
  });
}

Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("stack: no inputs");
  const Shape& part_shape = parts.front().shape();
  if (axis > part_shape.size()) throw ShapeError("stack: axis out of range for " + shape_str(part_shape));
  for (const auto& p : parts) {
    if (p.shape() != part_shape) throw ShapeError("stack: " + shape_str(p.shape()) + " vs " + shape_str(part_shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= part_shape[i];
  for (std::size_t i = axis; i < part_shape.size(); ++i) inner *= part_shape[i];
  const std::size_t count = parts.size();
  Shape out_shape = part_shape;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  std::vector<double> out(outer * count * inner);
  for (std::size_t k = 0; k < count; ++k) {
    const auto pv = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(pv.data() + o * inner, inner, out.data() + (o * count + k) * inner);
  }
  return make_result(out_shape, std::move(out), parts, [outer, inner, count](Node& self) {
    for (std::size_t k = 0; k < count; ++k) {
      if (!wants_grad(self.inputs[k])) continue;
      auto& gp = self.inputs[k]->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) gp[o * inner + i] += self.grad[(o * count + k) * inner + i];
    }
  });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto s = split_at(x.shape(), axis, "narrow");
  if (start + length > s.extent) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto xv = x.data();
  std::vector<double> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + (o * s.extent + start) * s.inner, length * s.inner, out.data() + o * length * s.inner);
  }
  return make_result(out_shape, std::move(out), {x}, [s, start, length](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < length * s.inner; ++i)
        gx[(o * s.extent + start) * s.inner + i] += self.grad[o * length * s.inner + i];
  });
}

Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
  const auto s = split_at(x.shape(), axis, "select");
  if (index >= s.extent) throw ShapeError("select: index " + std::to_string(index) + " out of range for " + shape_str(x.shape()));
  return reshape(narrow(x, axis, index, 1), without_axis(x.shape(), axis));
}

// ---- Sequence helpers ----------------------------------------------------------

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  const auto tv = table.data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<std::int32_t> id_copy(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table}, [d, id_copy](Node& self) {
    auto& gt = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < id_copy.size(); ++i) {
      double* row = gt.data() + static_cast<std::size_t>(id_copy[i]) * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[i * d + j];
    }
  });
}

Tensor masked_update(const Tensor& previous, const Tensor& updated, const Tensor& keep) {
  require_rank(previous, 2, "masked_update");
  require_rank(keep, 1, "masked_update");
  if (previous.shape() != updated.shape() || keep.dim(0) != previous.dim(0)) {
    throw ShapeError("masked_update: " + shape_str(previous.shape()) + ", " + shape_str(updated.shape()) +
                     ", keep " + shape_str(keep.shape()));
  }
  const std::size_t B = previous.dim(0), H = previous.dim(1);
  std::vector<char> take(B);
  for (std::size_t b = 0; b < B; ++b) take[b] = keep.data()[b] != 0.0;
  const auto pv = previous.data();
  const auto uv = updated.data();
  std::vector<double> out(B * H);
  for (std::size_t b = 0; b < B; ++b) std::copy_n((take[b] ? uv : pv).data() + b * H, H, out.data() + b * H);
  return make_result({B, H}, std::move(out), {previous, updated}, [B, H, take](Node& self) {
    for (std::size_t side = 0; side < 2; ++side) {
      if (!wants_grad(self.inputs[side])) continue;
      auto& g = self.inputs[side]->grad_buffer();
      for (std::size_t b = 0; b < B; ++b) {
        if (static_cast<bool>(take[b]) != (side == 1)) continue;
        for (std::size_t h = 0; h < H; ++h) g[b * H + h] += self.grad[b * H + h];
      }
    }
  });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask,
                            std::size_t heads) {
  require_rank(q, 3, "multi_head_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("multi_head_attention: q/k/v shapes differ");
  }
  const std::size_t B = q.dim(0), T = q.dim(1), d = q.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (mask.shape() != Shape{B, T}) {
    throw ShapeError("multi_head_attention: mask " + shape_str(mask.shape()) + " for input " + shape_str(q.shape()));
  }
  const std::size_t dk = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto qv = q.data();
  const auto kv = k.data();
  const auto vv = v.data();
  const auto mv = mask.data();

  std::vector<double> probs(B * heads * T * T, 0.0);
  std::vector<double> out(B * T * d, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    bool any = false;
    for (std::size_t s = 0; s < T; ++s) any = any || mv[b * T + s] != 0.0;
    if (!any) throw std::invalid_argument("multi_head_attention: row " + std::to_string(b) + " is fully masked");
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        double* p = probs.data() + ((b * heads + h) * T + t) * T;
        const double* qrow = qv.data() + (b * T + t) * d + h * dk;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < T; ++s) {
          if (mv[b * T + s] == 0.0) continue;
          const double* krow = kv.data() + (b * T + s) * d + h * dk;
          double dot = 0.0;
          for (std::size_t j = 0; j < dk; ++j) dot += qrow[j] * krow[j];
          p[s] = dot * scale_factor;
          peak = std::max(peak, p[s]);
        }
        double total = 0.0;
        for (std::size_t s = 0; s < T; ++s) {
          if (mv[b * T + s] == 0.0) continue;
          p[s] = std::exp(p[s] - peak);
          total += p[s];
        }
        double* orow = out.data() + (b * T + t) * d + h * dk;
        for (std::size_t s = 0; s < T; ++s) {
          if (mv[b * T + s] == 0.0) continue;
          p[s] /= total;
          const double* vrow = vv.data() + (b * T + s) * d + h * dk;
          for (std::size_t j = 0; j < dk; ++j) orow[j] += p[s] * vrow[j];
        }
      }
    }
  }

  return make_result({B, T, d}, std::move(out), {q, k, v, mask},
                     [B, T, d, heads, dk, scale_factor, probs = std::move(probs)](Node& self) {
    auto& Q = self.inputs[0];
    auto& K = self.inputs[1];
    auto& V = self.inputs[2];
    const auto& mv = self.inputs[3]->value;
    std::vector<double> dummy;
    auto& gq = wants_grad(Q) ? Q->grad_buffer() : dummy;
    auto& gk = wants_grad(K) ? K->grad_buffer() : dummy;
    auto& gv = wants_grad(V) ? V->grad_buffer() : dummy;
    std::vector<double> dp(T);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t t = 0; t < T; ++t) {
          const double* p = probs.data() + ((b * heads + h) * T + t) * T;
          const double* go = self.grad.data() + (b * T + t) * d + h * dk;
          const double* qrow = Q->value.data() + (b * T + t) * d + h * dk;
          double weighted = 0.0;
          for (std::size_t s = 0; s < T; ++s) {
            dp[s] = 0.0;
            if (mv[b * T + s] == 0.0) continue;
            const double* vrow = V->value.data() + (b * T + s) * d + h * dk;
            for (std::size_t j = 0; j < dk; ++j) dp[s] += go[j] * vrow[j];
            weighted += p[s] * dp[s];
            if (!gv.empty()) {
              double* gvrow = gv.data() + (b * T + s) * d + h * dk;
              for (std::size_t j = 0; j < dk; ++j) gvrow[j] += p[s] * go[j];
            }
          }
          for (std::size_t s = 0; s < T; ++s) {
            if (mv[b * T + s] == 0.0) continue;
            const double ds = p[s] * (dp[s] - weighted) * scale_factor;
            const double* krow = K->value.data() + (b * T + s) * d + h * dk;
            if (!gq.empty()) {
              double* gqrow = gq.data() + (b * T + t) * d + h * dk;
              for (std::size_t j = 0; j < dk; ++j) gqrow[j] += ds * krow[j];
            }
            if (!gk.empty()) {
              double* gkrow = gk.data() + (b * T + s) * d + h * dk;
              for (std::size_t j = 0; j < dk; ++j) gkrow[j] += ds * qrow[j];
            }
          }
        }
      }
    }
  });
}

}  // namespace mlec
