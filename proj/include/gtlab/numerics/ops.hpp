#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "gtlab/numerics/rng.hpp"
#include "gtlab/numerics/tensor.hpp"

// Differentiable primitives. Activations are kept as rank-2 (rows, features)
// matrices; batch and time are folded into rows by the callers.
namespace gtlab::ops {

namespace detail {

template <typename Real>
using NodeT = gtlab::detail::Node<Real>;

template <typename Real>
std::vector<Real>* grad_of(NodeT<Real>& out, std::size_t parent) {
  auto& p = *out.parents[parent];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

template <typename Real>
void require_rank2(const Tensor<Real>& t, const char* op) {
  if (t.rank() != 2) {
    throw TensorError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
  }
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

// c[N,M] += a[N,K] * b[K,M]
template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    Real* ci = c + i * m;
    const Real* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = ai[p];
      if (aip == Real{0}) {
        continue;
      }
      const Real* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) {
        ci[j] += aip * bp[j];
      }
    }
  }
}

// c[N,M] += a[N,K] * b[M,K]^T
template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t n, std::size_t k, std::size_t m) {
  // Transposing b first keeps the inner loop a contiguous axpy, which the
  // compiler vectorizes; a dot-product inner loop would not be.
  std::vector<Real> bt(k * m);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t p = 0; p < k; ++p) {
      bt[p * m + j] = b[j * k + p];
    }
  }
  gemm_nn(a, bt.data(), c, n, k, m);
}

// c[K,M] += a[N,K]^T * b[N,M]
template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const Real* ai = a + i * k;
    const Real* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = ai[p];
      if (aip == Real{0}) {
        continue;
      }
      Real* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) {
        cp[j] += aip * bi[j];
      }
    }
  }
}

}  // namespace detail

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "add");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] + bv[i];
  }
  return Tensor<Real>::from_op(
      a.shape(), std::move(out), {a, b},
      [](detail::NodeT<Real>& n) {
        for (std::size_t p = 0; p < 2; ++p) {
          if (auto* g = detail::grad_of(n, p)) {
            for (std::size_t i = 0; i < g->size(); ++i) {
              (*g)[i] += n.grad[i];
            }
          }
        }
      },
      "add");
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "mul");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] * bv[i];
  }
  return Tensor<Real>::from_op(
      a.shape(), std::move(out), {a, b},
      [](detail::NodeT<Real>& n) {
        const auto& av = n.parents[0]->values;
        const auto& bv = n.parents[1]->values;
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) {
            (*g)[i] += n.grad[i] * bv[i];
          }
        }
        if (auto* g = detail::grad_of(n, 1)) {
          for (std::size_t i = 0; i < g->size(); ++i) {
            (*g)[i] += n.grad[i] * av[i];
          }
        }
      },
      "mul");
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  const auto av = a.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] * s;
  }
  return Tensor<Real>::from_op(
      a.shape(), std::move(out), {a},
      [s](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) {
            (*g)[i] += n.grad[i] * s;
          }
        }
      },
      "scale");
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real acc{0};
  for (Real v : a.values()) {
    acc += v;
  }
  return Tensor<Real>::from_op(
      {1}, {acc}, {a},
      [](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          for (auto& x : *g) {
            x += n.grad[0];
          }
        }
      },
      "sum");
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  return scale(sum(a), Real{1} / static_cast<Real>(a.numel()));
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw TensorError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  const auto av = a.values();
  return Tensor<Real>::from_op(
      std::move(shape), std::vector<Real>(av.begin(), av.end()), {a},
      [](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) {
            (*g)[i] += n.grad[i];
          }
        }
      },
      "reshape");
}

// x[N,M] + b[M] broadcast over rows.
template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& b) {
  detail::require_rank2(x, "add_bias");
  const auto rows = x.dim(0);
  const auto cols = x.dim(1);
  if (b.numel() != cols) {
    throw TensorError("add_bias: bias of " + std::to_string(b.numel()) + " for " +
                      std::to_string(cols) + " columns");
  }
  const auto xv = x.values();
  const auto bv = b.values();
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out[i * cols + j] = xv[i * cols + j] + bv[j];
    }
  }
  return Tensor<Real>::from_op(
      x.shape(), std::move(out), {x, b},
      [rows, cols](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) {
            (*g)[i] += n.grad[i];
          }
        }
        if (auto* g = detail::grad_of(n, 1)) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              (*g)[j] += n.grad[i * cols + j];
            }
          }
        }
      },
      "add_bias");
}

// a[N,K] @ b[K,M]
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const auto n = a.dim(0);
  const auto k = a.dim(1);
  const auto m = b.dim(1);
  if (b.dim(0) != k) {
    throw TensorError("matmul: inner extents differ " + shape_str(a.shape()) + " @ " +
                      shape_str(b.shape()));
  }
  std::vector<Real> out(n * m, Real{0});
  detail::gemm_nn(a.values().data(), b.values().data(), out.data(), n, k, m);
  return Tensor<Real>::from_op(
      {n, m}, std::move(out), {a, b},
      [n, k, m](detail::NodeT<Real>& node) {
        const auto& av = node.parents[0]->values;
        const auto& bv = node.parents[1]->values;
        if (auto* g = detail::grad_of(node, 0)) {
          detail::gemm_nt(node.grad.data(), bv.data(), g->data(), n, m, k);
        }
        if (auto* g = detail::grad_of(node, 1)) {
          detail::gemm_tn(av.data(), node.grad.data(), g->data(), n, k, m);
        }
      },
      "matmul");
}

// a[N,K] @ b[M,K]^T, used for the tied output projection.
template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank2(a, "matmul_nt");
  detail::require_rank2(b, "matmul_nt");
  const auto n = a.dim(0);
  const auto k = a.dim(1);
  const auto m = b.dim(0);
  if (b.dim(1) != k) {
    throw TensorError("matmul_nt: inner extents differ " + shape_str(a.shape()) + " @ " +
                      shape_str(b.shape()) + "^T");
  }
  std::vector<Real> out(n * m, Real{0});
  detail::gemm_nt(a.values().data(), b.values().data(), out.data(), n, k, m);
  return Tensor<Real>::from_op(
      {n, m}, std::move(out), {a, b},
      [n, k, m](detail::NodeT<Real>& node) {
        const auto& av = node.parents[0]->values;
        const auto& bv = node.parents[1]->values;
        if (auto* g = detail::grad_of(node, 0)) {
          detail::gemm_nn(node.grad.data(), bv.data(), g->data(), n, m, k);
        }
        if (auto* g = detail::grad_of(node, 1)) {
          // dB[M,K] += dC[N,M]^T A[N,K]
          detail::gemm_tn(node.grad.data(), av.data(), g->data(), n, m, k);
        }
      },
      "matmul_nt");
}

namespace detail {

template <typename Real, typename Fwd, typename Deriv>
Tensor<Real> unary(const Tensor<Real>& x, Fwd fwd, Deriv deriv, const char* name) {
  const auto xv = x.values();
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = fwd(xv[i]);
  }
  return Tensor<Real>::from_op(
      x.shape(), std::move(out), {x},
      [deriv](NodeT<Real>& n) {
        if (auto* g = grad_of(n, 0)) {
          const auto& xv = n.parents[0]->values;
          for (std::size_t i = 0; i < g->size(); ++i) {
            (*g)[i] += n.grad[i] * deriv(xv[i], n.values[i]);
          }
        }
      },
      name);
}

}  // namespace detail

// tanh approximation used by GPT-2/3.
template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  constexpr Real c = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real k = static_cast<Real>(0.044715);
  return detail::unary(
      x,
      [](Real v) { return Real{0.5} * v * (Real{1} + std::tanh(c * (v + k * v * v * v))); },
      [](Real v, Real) {
        const Real u = c * (v + k * v * v * v);
        const Real t = std::tanh(u);
        const Real du = c * (Real{1} + Real{3} * k * v * v);
        return Real{0.5} * (Real{1} + t) + Real{0.5} * v * (Real{1} - t * t) * du;
      },
      "gelu");
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return detail::unary(
      x, [](Real v) { return Real{1} / (Real{1} + std::exp(-v)); },
      [](Real, Real y) { return y * (Real{1} - y); }, "sigmoid");
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
  return detail::unary(
      x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return Real{1} - y * y; }, "tanh");
}

// Row-wise layer normalization with affine gain and bias.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps = Real{1e-5}) {
  detail::require_rank2(x, "layer_norm");
  const auto rows = x.dim(0);
  const auto cols = x.dim(1);
  if (gain.numel() != cols || bias.numel() != cols) {
    throw TensorError("layer_norm: affine parameters do not match feature width");
  }
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<Real> out(xv.size());
  std::vector<Real> xhat(xv.size());
  std::vector<Real> rstd(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const Real* xi = xv.data() + i * cols;
    Real mu{0};
    for (std::size_t j = 0; j < cols; ++j) {
      mu += xi[j];
    }
    mu /= static_cast<Real>(cols);
    Real var{0};
    for (std::size_t j = 0; j < cols; ++j) {
      const Real d = xi[j] - mu;
      var += d * d;
    }
    var /= static_cast<Real>(cols);
    rstd[i] = Real{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      const Real h = (xi[j] - mu) * rstd[i];
      xhat[i * cols + j] = h;
      out[i * cols + j] = h * gv[j] + bv[j];
    }
  }
  return Tensor<Real>::from_op(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](detail::NodeT<Real>& n) {
        const auto& gv = n.parents[1]->values;
        if (auto* g = detail::grad_of(n, 1)) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              (*g)[j] += n.grad[i * cols + j] * xhat[i * cols + j];
            }
          }
        }
        if (auto* g = detail::grad_of(n, 2)) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              (*g)[j] += n.grad[i * cols + j];
            }
          }
        }
        if (auto* g = detail::grad_of(n, 0)) {
          const Real inv_cols = Real{1} / static_cast<Real>(cols);
          for (std::size_t i = 0; i < rows; ++i) {
            Real mean_dh{0};
            Real mean_dh_h{0};
            for (std::size_t j = 0; j < cols; ++j) {
              const Real dh = n.grad[i * cols + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[i * cols + j];
            }
            mean_dh *= inv_cols;
            mean_dh_h *= inv_cols;
            for (std::size_t j = 0; j < cols; ++j) {
              const Real dh = n.grad[i * cols + j] * gv[j];
              (*g)[i * cols + j] += rstd[i] * (dh - mean_dh - xhat[i * cols + j] * mean_dh_h);
            }
          }
        }
      },
      "layer_norm");
}

// Numerically stable softmax over each row.
template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x) {
  detail::require_rank2(x, "softmax_rows");
  const auto rows = x.dim(0);
  const auto cols = x.dim(1);
  const auto xv = x.values();
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const Real* xi = xv.data() + i * cols;
    Real mx = xi[0];
    for (std::size_t j = 1; j < cols; ++j) {
      mx = std::max(mx, xi[j]);
    }
    Real z{0};
    for (std::size_t j = 0; j < cols; ++j) {
      out[i * cols + j] = std::exp(xi[j] - mx);
      z += out[i * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) {
      out[i * cols + j] /= z;
    }
  }
  return Tensor<Real>::from_op(
      x.shape(), std::move(out), {x},
      [rows, cols](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t i = 0; i < rows; ++i) {
            Real dot{0};
            for (std::size_t j = 0; j < cols; ++j) {
              dot += n.grad[i * cols + j] * n.values[i * cols + j];
            }
            for (std::size_t j = 0; j < cols; ++j) {
              (*g)[i * cols + j] += n.values[i * cols + j] * (n.grad[i * cols + j] - dot);
            }
          }
        }
      },
      "softmax_rows");
}

// Multi-head causal self-attention over packed projections.
// qkv: (batch*len, 3*width) laid out as [q | k | v]; output (batch*len, width).
template <typename Real>
Tensor<Real> causal_attention(const Tensor<Real>& qkv, std::size_t batch, std::size_t len,
                              std::size_t heads) {
  detail::require_rank2(qkv, "causal_attention");
  if (qkv.dim(0) != batch * len || qkv.dim(1) % 3 != 0) {
    throw TensorError("causal_attention: packed projection has shape " + shape_str(qkv.shape()));
  }
  const std::size_t width = qkv.dim(1) / 3;
  if (heads == 0 || width % heads != 0) {
    throw TensorError("causal_attention: width not divisible by heads");
  }
  const std::size_t hd = width / heads;
  const std::size_t stride = 3 * width;
  const Real scale_f = Real{1} / std::sqrt(static_cast<Real>(hd));
  const auto in = qkv.values();

  std::vector<Real> out(batch * len * width, Real{0});
  std::vector<Real> probs(batch * heads * len * len, Real{0});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      Real* pbh = probs.data() + (b * heads + h) * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        const Real* q = in.data() + (b * len + i) * stride + h * hd;
        Real* prow = pbh + i * len;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const Real* k = in.data() + (b * len + j) * stride + width + h * hd;
          Real s{0};
          for (std::size_t d = 0; d < hd; ++d) {
            s += q[d] * k[d];
          }
          prow[j] = s * scale_f;
          mx = std::max(mx, prow[j]);
        }
        Real z{0};
        for (std::size_t j = 0; j <= i; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          z += prow[j];
        }
        Real* o = out.data() + (b * len + i) * width + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          prow[j] /= z;
          const Real* v = in.data() + (b * len + j) * stride + 2 * width + h * hd;
          for (std::size_t d = 0; d < hd; ++d) {
            o[d] += prow[j] * v[d];
          }
        }
      }
    }
  }

  return Tensor<Real>::from_op(
      {batch * len, width}, std::move(out), {qkv},
      [=, probs = std::move(probs)](detail::NodeT<Real>& n) {
        auto* g = detail::grad_of(n, 0);
        if (!g) {
          return;
        }
        const auto& in = n.parents[0]->values;
        std::vector<Real> dp(len);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const Real* pbh = probs.data() + (b * heads + h) * len * len;
            for (std::size_t i = 0; i < len; ++i) {
              const Real* prow = pbh + i * len;
              const Real* dout = n.grad.data() + (b * len + i) * width + h * hd;
              Real dot{0};
              for (std::size_t j = 0; j <= i; ++j) {
                const std::size_t row_j = (b * len + j) * stride;
                const Real* v = in.data() + row_j + 2 * width + h * hd;
                Real* dv = g->data() + row_j + 2 * width + h * hd;
                Real s{0};
                for (std::size_t d = 0; d < hd; ++d) {
                  s += dout[d] * v[d];
                  dv[d] += prow[j] * dout[d];
                }
                dp[j] = s;
                dot += prow[j] * s;
              }
              const std::size_t row_i = (b * len + i) * stride;
              const Real* q = in.data() + row_i + h * hd;
              Real* dq = g->data() + row_i + h * hd;
              for (std::size_t j = 0; j <= i; ++j) {
                const Real ds = prow[j] * (dp[j] - dot) * scale_f;
                if (ds == Real{0}) {
                  continue;
                }
                const std::size_t row_j = (b * len + j) * stride;
                const Real* k = in.data() + row_j + width + h * hd;
                Real* dk = g->data() + row_j + width + h * hd;
                for (std::size_t d = 0; d < hd; ++d) {
                  dq[d] += ds * k[d];
                  dk[d] += ds * q[d];
                }
              }
            }
          }
        }
      },
      "causal_attention");
}

// Row gather: table (V, width), ids -> (ids.size(), width).
template <typename Real>
Tensor<Real> embedding(const Tensor<Real>& table, std::span<const std::int32_t> ids) {
  detail::require_rank2(table, "embedding");
  const auto vocab = table.dim(0);
  const auto width = table.dim(1);
  if (ids.empty()) {
    throw TensorError("embedding: empty id list");
  }
  const auto tv = table.values();
  std::vector<Real> out(ids.size() * width);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw TensorError("embedding: id " + std::to_string(ids[r]) + " outside vocabulary of " +
                        std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * width, width,
                out.data() + r * width);
  }
  return Tensor<Real>::from_op(
      {ids.size(), width}, std::move(out), {table},
      [width, idv = std::vector<std::int32_t>(ids.begin(), ids.end())](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t r = 0; r < idv.size(); ++r) {
            Real* dst = g->data() + static_cast<std::size_t>(idv[r]) * width;
            const Real* src = n.grad.data() + r * width;
            for (std::size_t j = 0; j < width; ++j) {
              dst[j] += src[j];
            }
          }
        }
      },
      "embedding");
}

// x (batch*len, width) + table rows [0, len) repeated per batch item.
template <typename Real>
Tensor<Real> add_positional(const Tensor<Real>& x, const Tensor<Real>& table, std::size_t batch,
                            std::size_t len) {
  detail::require_rank2(x, "add_positional");
  detail::require_rank2(table, "add_positional");
  const auto width = x.dim(1);
  if (x.dim(0) != batch * len || table.dim(1) != width) {
    throw TensorError("add_positional: shape mismatch");
  }
  if (len > table.dim(0)) {
    throw TensorError("add_positional: sequence of " + std::to_string(len) +
                      " exceeds positional table of " + std::to_string(table.dim(0)));
  }
  const auto xv = x.values();
  const auto tv = table.values();
  std::vector<Real> out(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < width; ++j) {
        out[(b * len + t) * width + j] = xv[(b * len + t) * width + j] + tv[t * width + j];
      }
    }
  }
  return Tensor<Real>::from_op(
      x.shape(), std::move(out), {x, table},
      [batch, len, width](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) {
            (*g)[i] += n.grad[i];
          }
        }
        if (auto* g = detail::grad_of(n, 1)) {
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t t = 0; t < len; ++t) {
              for (std::size_t j = 0; j < width; ++j) {
                (*g)[t * width + j] += n.grad[(b * len + t) * width + j];
              }
            }
          }
        }
      },
      "add_positional");
}

// Stacks rank-2 tensors with equal column counts.
template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) {
    throw TensorError("concat_rows: nothing to concatenate");
  }
  const auto cols = parts.front().dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_rows");
    if (p.dim(1) != cols) {
      throw TensorError("concat_rows: column counts differ");
    }
    rows += p.dim(0);
  }
  std::vector<Real> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) {
    const auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return Tensor<Real>::from_op(
      {rows, cols}, std::move(out), parts,
      [](detail::NodeT<Real>& n) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < n.parents.size(); ++p) {
          const auto count = n.parents[p]->values.size();
          if (auto* g = detail::grad_of(n, p)) {
            for (std::size_t i = 0; i < count; ++i) {
              (*g)[i] += n.grad[offset + i];
            }
          }
          offset += count;
        }
      },
      "concat_rows");
}

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  detail::require_rank2(x, "slice_rows");
  if (begin >= end || end > x.dim(0)) {
    throw TensorError("slice_rows: bad range");
  }
  const auto cols = x.dim(1);
  const auto xv = x.values();
  std::vector<Real> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                        xv.begin() + static_cast<std::ptrdiff_t>(end * cols));
  return Tensor<Real>::from_op(
      {end - begin, cols}, std::move(out), {x},
      [begin, cols](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t i = 0; i < n.grad.size(); ++i) {
            (*g)[begin * cols + i] += n.grad[i];
          }
        }
      },
      "slice_rows");
}

template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  detail::require_rank2(x, "slice_cols");
  if (begin >= end || end > x.dim(1)) {
    throw TensorError("slice_cols: bad range");
  }
  const auto rows = x.dim(0);
  const auto cols = x.dim(1);
  const auto w = end - begin;
  const auto xv = x.values();
  std::vector<Real> out(rows * w);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(xv.data() + i * cols + begin, w, out.data() + i * w);
  }
  return Tensor<Real>::from_op(
      {rows, w}, std::move(out), {x},
      [rows, cols, begin, w](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              (*g)[i * cols + begin + j] += n.grad[i * w + j];
            }
          }
        }
      },
      "slice_cols");
}

// Inverted dropout; identity when p == 0.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, CounterRng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw TensorError("dropout: probability must be in [0, 1)");
  }
  if (p == 0.0) {
    return x;
  }
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  const auto xv = x.values();
  std::vector<Real> mask(xv.size());
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < p ? Real{0} : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  return Tensor<Real>::from_op(
      x.shape(), std::move(out), {x},
      [mask = std::move(mask)](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) {
            (*g)[i] += n.grad[i] * mask[i];
          }
        }
      },
      "dropout");
}

// Weighted mean cross-entropy of logits (rows, vocab) against target ids.
// Rows with zero weight are ignored; the mean is over the weight total.
template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const std::int32_t> targets,
                           std::span<const Real> weights = {}) {
  detail::require_rank2(logits, "cross_entropy");
  const auto rows = logits.dim(0);
  const auto vocab = logits.dim(1);
  if (targets.size() != rows || (!weights.empty() && weights.size() != rows)) {
    throw TensorError("cross_entropy: target count does not match logits rows");
  }
  std::vector<Real> w(rows, Real{1});
  if (!weights.empty()) {
    w.assign(weights.begin(), weights.end());
  }
  Real total_w{0};
  for (Real x : w) {
    total_w += x;
  }
  if (total_w <= Real{0}) {
    throw TensorError("cross_entropy: no positions carry weight");
  }
  const auto lv = logits.values();
  std::vector<Real> probs(lv.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw TensorError("cross_entropy: target id out of range");
    }
    const Real* li = lv.data() + i * vocab;
    Real mx = li[0];
    for (std::size_t j = 1; j < vocab; ++j) {
      mx = std::max(mx, li[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[i * vocab + j] = std::exp(li[j] - mx);
      z += probs[i * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[i * vocab + j] = static_cast<Real>(probs[i * vocab + j] / z);
    }
    if (w[i] != Real{0}) {
      const double logp = static_cast<double>(li[targets[i]] - mx) - std::log(z);
      loss -= static_cast<double>(w[i]) * logp;
    }
  }
  loss /= static_cast<double>(total_w);
  return Tensor<Real>::from_op(
      {1}, {static_cast<Real>(loss)}, {logits},
      [rows, vocab, total_w, w = std::move(w), probs = std::move(probs),
       tg = std::vector<std::int32_t>(targets.begin(), targets.end())](detail::NodeT<Real>& n) {
        if (auto* g = detail::grad_of(n, 0)) {
          const Real up = n.grad[0] / total_w;
          for (std::size_t i = 0; i < rows; ++i) {
            if (w[i] == Real{0}) {
              continue;
            }
            const Real s = up * w[i];
            for (std::size_t j = 0; j < vocab; ++j) {
              (*g)[i * vocab + j] += s * probs[i * vocab + j];
            }
            (*g)[i * vocab + static_cast<std::size_t>(tg[i])] -= s;
          }
        }
      },
      "cross_entropy");
}

}  // namespace gtlab::ops
