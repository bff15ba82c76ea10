#pragma once

// Differentiable operations over Tensor<T>. Every backward is expressed in
// terms of these same ops (or detached constants), so running a backward pass
// with recording enabled yields a differentiable gradient, which is how
// second-order terms are built. Backward lambdas capture parent tensors only,
// never their own output, keeping the graph acyclic and leak-free.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "atlab/tensor.hpp"

namespace atlab {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1)
      throw shape_error("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Element strides of a (contiguous, right-aligned) operand inside `out`;
// zero on broadcast dimensions.
inline std::vector<int64_t> aligned_strides(const Shape& s, const Shape& out) {
  const size_t r = out.size(), rs = s.size();
  std::vector<int64_t> st(r, 0);
  int64_t acc = 1;
  for (size_t i = rs; i-- > 0;) {
    const size_t oi = i + (r - rs);
    st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : acc;
    acc *= s[i];
  }
  return st;
}

struct WalkPlan {
  std::vector<int64_t> extent;  // outer..inner, coalesced
  std::vector<int64_t> sa, sb;
};

// Coalesces adjacent dimensions whose strides compose contiguously for both
// operands. Keeps inner loops long for the vectorized kernels below.
inline WalkPlan coalesce(const Shape& out, const std::vector<int64_t>& sa,
                         const std::vector<int64_t>& sb) {
  WalkPlan p;
  for (size_t i = 0; i < out.size(); ++i) {
    if (out[i] == 1) continue;
    if (!p.extent.empty()) {
      const size_t j = p.extent.size() - 1;
      if (p.sa[j] == sa[i] * out[i] && p.sb[j] == sb[i] * out[i]) {
        p.extent[j] *= out[i];
        p.sa[j] = sa[i];
        p.sb[j] = sb[i];
        continue;
      }
    }
    p.extent.push_back(out[i]);
    p.sa.push_back(sa[i]);
    p.sb.push_back(sb[i]);
  }
  if (p.extent.empty()) {
    p.extent.push_back(1);
    p.sa.push_back(0);
    p.sb.push_back(0);
  }
  return p;
}

// Applies f elementwise over the broadcast of a and b into out (dense,
// row-major). Inner dimension runs are dispatched on stride patterns.
template <typename T, class F>
void binary_bcast_kernel(const T* a, const T* b, T* out, const Shape& oshape,
                         const std::vector<int64_t>& sa, const std::vector<int64_t>& sb, F f) {
  WalkPlan p = coalesce(oshape, sa, sb);
  const size_t nd = p.extent.size();
  const int64_t inner = p.extent[nd - 1];
  const int64_t ia = p.sa[nd - 1], ib = p.sb[nd - 1];
  std::vector<int64_t> idx(nd, 0);
  int64_t oa = 0, ob = 0;
  T* o = out;
  for (;;) {
    const T* pa = a + oa;
    const T* pb = b + ob;
    if (ia == 1 && ib == 1) {
      for (int64_t k = 0; k < inner; ++k) o[k] = f(pa[k], pb[k]);
    } else if (ia == 1 && ib == 0) {
      const T vb = *pb;
      for (int64_t k = 0; k < inner; ++k) o[k] = f(pa[k], vb);
    } else if (ia == 0 && ib == 1) {
      const T va = *pa;
      for (int64_t k = 0; k < inner; ++k) o[k] = f(va, pb[k]);
    } else {
      const T v = f(*pa, *pb);
      for (int64_t k = 0; k < inner; ++k) o[k] = v;
    }
    o += inner;
    if (nd == 1) break;
    size_t d = nd - 2;
    for (;;) {
      oa += p.sa[d];
      ob += p.sb[d];
      if (++idx[d] < p.extent[d]) break;
      oa -= p.sa[d] * p.extent[d];
      ob -= p.sb[d] * p.extent[d];
      idx[d] = 0;
      if (d == 0) return;
      --d;
    }
  }
}

// Sums `in` into `out` (pre-zeroed) where out has the keepdims shape of the
// reduction: reduced dims get stride 0.
template <typename T>
void reduce_sum_kernel(const T* in, const Shape& ishape, T* out,
                       const std::vector<int64_t>& so) {
  std::vector<int64_t> si = aligned_strides(ishape, ishape);
  WalkPlan p = coalesce(ishape, si, so);
  const size_t nd = p.extent.size();
  const int64_t inner = p.extent[nd - 1];
  const int64_t io = p.sb[nd - 1];
  std::vector<int64_t> idx(nd, 0);
  int64_t oi = 0, oo = 0;
  for (;;) {
    const T* pi = in + oi;
    T* po = out + oo;
    if (io == 0) {
      T acc = T(0);
      for (int64_t k = 0; k < inner; ++k) acc += pi[k];
      *po += acc;
    } else {
      for (int64_t k = 0; k < inner; ++k) po[k] += pi[k];
    }
    if (nd == 1) break;
    size_t d = nd - 2;
    for (;;) {
      oi += p.sa[d];
      oo += p.sb[d];
      if (++idx[d] < p.extent[d]) break;
      oi -= p.sa[d] * p.extent[d];
      oo -= p.sb[d] * p.extent[d];
      idx[d] = 0;
      if (d == 0) return;
      --d;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x, const std::vector<int>& axes, bool keepdims);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);

/// Reduces g (of broadcast shape) back to `shape` by summing broadcast axes.
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  const size_t r = g.shape().size(), rs = shape.size();
  std::vector<int> axes;
  for (size_t i = 0; i < r; ++i) {
    if (i < r - rs || (shape[i - (r - rs)] == 1 && g.shape()[i] != 1))
      axes.push_back(static_cast<int>(i));
  }
  Tensor<T> s = axes.empty() ? g : sum(g, axes, /*keepdims=*/true);
  return reshape(s, shape);
}

namespace detail {

template <typename T, class F, class B>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, B backward) {
  Shape oshape = broadcast_shape(a.shape(), b.shape());
  std::vector<T> out(static_cast<size_t>(numel(oshape)));
  binary_bcast_kernel(a.data(), b.data(), out.data(), oshape,
                      aligned_strides(a.shape(), oshape), aligned_strides(b.shape(), oshape), f);
  return make_op<T>(name, std::move(oshape), std::move(out), {a, b}, std::move(backward));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [as = a.shape(), bs = b.shape()](const Tensor<T>& g, const std::vector<char>& need) {
        std::vector<Tensor<T>> r(2);
        if (need[0]) r[0] = reduce_to(g, as);
        if (need[1]) r[1] = reduce_to(g, bs);
        return r;
      });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [as = a.shape(), bs = b.shape()](const Tensor<T>& g, const std::vector<char>& need) {
        std::vector<Tensor<T>> r(2);
        if (need[0]) r[0] = reduce_to(g, as);
        if (need[1]) r[1] = neg(reduce_to(g, bs));
        return r;
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [a, b](const Tensor<T>& g, const std::vector<char>& need) {
        std::vector<Tensor<T>> r(2);
        if (need[0]) r[0] = reduce_to(mul(g, b), a.shape());
        if (need[1]) r[1] = reduce_to(mul(g, a), b.shape());
        return r;
      });
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, class F, class B>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, F f, B backward) {
  std::vector<T> out(x.raw());
  for (auto& v : out) v = f(v);
  return make_op<T>(name, x.shape(), std::move(out), {x}, std::move(backward));
}

// Detached unary: output never joins a graph.
template <typename T, class F>
Tensor<T> detached_unary(const char* name, const Tensor<T>& x, F f) {
  std::vector<T> out(x.raw());
  for (auto& v : out) v = f(v);
  check_finite(name, out);
  return Tensor<T>(x.shape(), std::move(out));
}

}  // namespace detail

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return detail::unary_op<T>(
      "mul_scalar", x, [c](T v) { return v * c; },
      [c](const Tensor<T>& g, const std::vector<char>&) {
        return std::vector<Tensor<T>>{mul_scalar(g, c)};
      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary_op<T>(
      "add_scalar", x, [c](T v) { return v + c; },
      [](const Tensor<T>& g, const std::vector<char>&) { return std::vector<Tensor<T>>{g}; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "neg", x, [](T v) { return -v; },
      [](const Tensor<T>& g, const std::vector<char>&) { return std::vector<Tensor<T>>{neg(g)}; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "exp", x, [](T v) { return std::exp(v); },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        return std::vector<Tensor<T>>{mul(g, exp(x))};
      });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "log", x, [](T v) { return std::log(v); },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        return std::vector<Tensor<T>>{div(g, x)};
      });
}

/// x^{-1/2} with the subgradient convention rsqrt_safe(0) = 0. Closes the
/// derivative chain of sqrt/l2_norm at the origin.
template <typename T>
Tensor<T> rsqrt_safe(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "rsqrt_safe", x, [](T v) { return v > T(0) ? T(1) / std::sqrt(v) : T(0); },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        Tensor<T> r = rsqrt_safe(x);
        return std::vector<Tensor<T>>{mul_scalar(mul(g, mul(mul(r, r), r)), T(-0.5))};
      });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        return std::vector<Tensor<T>>{mul_scalar(mul(g, rsqrt_safe(x)), T(0.5))};
      });
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "reciprocal", x, [](T v) { return T(1) / v; },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        Tensor<T> r = reciprocal(x);
        return std::vector<Tensor<T>>{neg(mul(mul(g, r), r))};
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, reciprocal(b));
}

/// sign(x) in {-1, 0, +1}; sign(0) = 0. Output is detached: the sign is
/// treated as piecewise constant and contributes no gradient.
template <typename T>
Tensor<T> sign(const Tensor<T>& x) {
  return detail::detached_unary<T>("sign", x,
                                   [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

/// Indicator of x > 0 as a detached {0,1} tensor (relu mask).
template <typename T>
Tensor<T> step_mask(const Tensor<T>& x) {
  return detail::detached_unary<T>("step_mask", x, [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        return std::vector<Tensor<T>>{mul(g, sign(x))};
      });
}

template <typename T>
Tensor<T> erf(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "erf", x, [](T v) { return std::erf(v); },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        // d erf/dx = 2/sqrt(pi) * exp(-x^2)
        const T c = T(2) / std::sqrt(T(3.14159265358979323846));
        return std::vector<Tensor<T>>{mul(g, mul_scalar(exp(neg(mul(x, x))), c))};
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        Tensor<T> s = sigmoid(x);
        return std::vector<Tensor<T>>{mul(g, mul(s, add_scalar(neg(s), T(1))))};
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        return std::vector<Tensor<T>>{mul(g, step_mask(x))};
      });
}

/// Parametric SoftPlus (1/alpha) * log(1 + exp(alpha x)), evaluated in the
/// overflow-free form max(x,0) + (1/alpha) * log1p(exp(-alpha |x|)).
template <typename T>
Tensor<T> softplus_param(const Tensor<T>& x, double alpha) {
  if (!(alpha > 0.0)) throw config_error("softplus_param: alpha must be positive");
  const T a = static_cast<T>(alpha);
  return detail::unary_op<T>(
      "softplus_param", x,
      [a](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-a * std::abs(v))) / a; },
      [x, a](const Tensor<T>& g, const std::vector<char>&) {
        return std::vector<Tensor<T>>{mul(g, sigmoid(mul_scalar(x, a)))};
      });
}

namespace detail {
// d elu/dx as a primitive whose derivative chain closes on itself:
// slope(x) = x>0 ? 1 : e^x, slope'(x) = x>0 ? 0 : e^x (= curv), curv' = curv.
template <typename T>
Tensor<T> elu_curv(const Tensor<T>& x) {
  return unary_op<T>(
      "elu_curv", x, [](T v) { return v > T(0) ? T(0) : std::exp(v); },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        return std::vector<Tensor<T>>{mul(g, elu_curv(x))};
      });
}
template <typename T>
Tensor<T> elu_slope(const Tensor<T>& x) {
  return unary_op<T>(
      "elu_slope", x, [](T v) { return v > T(0) ? T(1) : std::exp(v); },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        return std::vector<Tensor<T>>{mul(g, elu_curv(x))};
      });
}
}  // namespace detail

template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "elu", x, [](T v) { return v > T(0) ? v : std::expm1(v); },
      [x](const Tensor<T>& g, const std::vector<char>&) {
        return std::vector<Tensor<T>>{mul(g, detail::elu_slope(x))};
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(0.70710678118654752440);
  return mul(mul_scalar(x, T(0.5)), add_scalar(erf(mul_scalar(x, inv_sqrt2)), T(1)));
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return mul(x, sigmoid(x));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  // -1 wildcard on a single axis
  int64_t known = 1, wild = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (wild >= 0) throw shape_error("reshape: more than one -1 extent");
      wild = static_cast<int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (wild >= 0) {
    if (known == 0 || x.size() % known != 0)
      throw shape_error("reshape: cannot infer extent for " + shape_str(shape));
    shape[static_cast<size_t>(wild)] = x.size() / known;
  }
  Tensor<T> out = x.detach().view_as(shape);
  if (grad_enabled() && x.requires_grad()) {
    return make_op<T>("reshape", out.shape(), std::vector<T>(out.raw()), {x},
                      [xs = x.shape()](const Tensor<T>& g, const std::vector<char>&) {
                        return std::vector<Tensor<T>>{reshape(g, xs)};
                      });
  }
  return out;
}

template <typename T>
Tensor<T> flatten2(const Tensor<T>& x) {
  if (x.ndim() < 1) throw shape_error("flatten2: rank must be >= 1");
  return reshape(x, Shape{x.dim(0), -1});
}

template <typename T>
Tensor<T> transpose2(const Tensor<T>& x) {
  if (x.ndim() != 2) throw shape_error("transpose2: rank-2 tensor required");
  const int64_t n = x.dim(0), m = x.dim(1);
  std::vector<T> out(static_cast<size_t>(n * m));
  const T* in = x.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out[static_cast<size_t>(j * n + i)] = in[i * m + j];
  return make_op<T>("transpose2", Shape{m, n}, std::move(out), {x},
                    [](const Tensor<T>& g, const std::vector<char>&) {
                      return std::vector<Tensor<T>>{transpose2(g)};
                    });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Shape check = detail::broadcast_shape(x.shape(), shape);
  if (check != shape)
    throw shape_error("broadcast_to: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(static_cast<size_t>(numel(shape)));
  // reuse the binary kernel with a dummy scalar second operand
  const T zero = T(0);
  detail::binary_bcast_kernel<T>(x.data(), &zero, out.data(), shape,
                                 detail::aligned_strides(x.shape(), shape),
                                 std::vector<int64_t>(shape.size(), 0),
                                 [](T a, T) { return a; });
  return make_op<T>("broadcast_to", shape, std::move(out), {x},
                    [xs = x.shape()](const Tensor<T>& g, const std::vector<char>&) {
                      return std::vector<Tensor<T>>{reduce_to(g, xs)};
                    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x, const std::vector<int>& axes, bool keepdims) {
  const size_t r = x.shape().size();
  std::vector<char> reduce(r, 0);
  for (int a : axes) {
    if (a < 0 || static_cast<size_t>(a) >= r) throw shape_error("sum: axis out of range");
    reduce[static_cast<size_t>(a)] = 1;
  }
  Shape keep = x.shape();
  for (size_t i = 0; i < r; ++i)
    if (reduce[i]) keep[i] = 1;
  std::vector<T> out(static_cast<size_t>(numel(keep)), T(0));
  detail::reduce_sum_kernel(x.data(), x.shape(), out.data(),
                            detail::aligned_strides(keep, x.shape()));
  Shape oshape = keep;
  if (!keepdims) {
    oshape.clear();
    for (size_t i = 0; i < r; ++i)
      if (!reduce[i]) oshape.push_back(x.shape()[i]);
  }
  return make_op<T>("sum", std::move(oshape), std::move(out), {x},
                    [xs = x.shape(), keep](const Tensor<T>& g, const std::vector<char>&) {
                      return std::vector<Tensor<T>>{broadcast_to(reshape(g, keep), xs)};
                    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  std::vector<int> axes(x.shape().size());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reshape(sum(x, axes, true), Shape{});
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw shape_error("mean of empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, const std::vector<int>& axes, bool keepdims) {
  int64_t n = 1;
  for (int a : axes) n *= x.shape()[static_cast<size_t>(a)];
  if (n == 0) throw shape_error("mean over empty axes");
  return mul_scalar(sum(x, axes, keepdims), T(1) / static_cast<T>(n));
}

/// Per-row maximum of a rank-2 tensor as a detached [N,1] tensor. Used as the
/// constant shift inside log-sum-exp.
template <typename T>
Tensor<T> rowmax_detached(const Tensor<T>& x) {
  if (x.ndim() != 2) throw shape_error("rowmax: rank-2 tensor required");
  const int64_t n = x.dim(0), c = x.dim(1);
  if (c == 0) throw shape_error("rowmax of empty rows");
  std::vector<T> out(static_cast<size_t>(n));
  const T* in = x.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = *std::max_element(in + i * c, in + (i + 1) * c);
  return Tensor<T>(Shape{n, 1}, std::move(out));
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw shape_error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  const int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<T> out(static_cast<size_t>(n * m));
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> ma(a.data(), n, k), mb(b.data(), k, m);
  Eigen::Map<Mat> mo(out.data(), n, m);
  mo.noalias() = ma * mb;
  return make_op<T>("matmul", Shape{n, m}, std::move(out), {a, b},
                    [a, b](const Tensor<T>& g, const std::vector<char>& need) {
                      std::vector<Tensor<T>> r(2);
                      if (need[0]) r[0] = matmul(g, transpose2(b));
                      if (need[1]) r[1] = matmul(transpose2(a), g);
                      return r;
                    });
}

// ---------------------------------------------------------------------------
// losses and norms
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> onehot(const std::vector<int>& labels, int64_t classes) {
  std::vector<T> out(labels.size() * static_cast<size_t>(classes), T(0));
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw error("label " + std::to_string(labels[i]) + " out of range [0," +
                  std::to_string(classes) + ")");
    out[i * static_cast<size_t>(classes) + static_cast<size_t>(labels[i])] = T(1);
  }
  return Tensor<T>(Shape{static_cast<int64_t>(labels.size()), classes}, std::move(out));
}

/// Per-example cross entropy -log softmax(logits)[label], shape [N].
/// Stable via a detached row-max shift inside log-sum-exp.
template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw shape_error("cross_entropy: logits must be [N,C]");
  if (static_cast<int64_t>(labels.size()) != logits.dim(0))
    throw shape_error("cross_entropy: label count mismatch");
  Tensor<T> oh = onehot<T>(labels, logits.dim(1));
  Tensor<T> m = rowmax_detached(logits);
  Tensor<T> z = sub(logits, m);
  Tensor<T> lse = add(log(sum(exp(z), {1}, true)), m);   // [N,1]
  Tensor<T> picked = sum(mul(logits, oh), {1}, true);    // [N,1]
  return reshape(sub(lse, picked), Shape{logits.dim(0)});
}

/// Mean cross entropy over the batch (scalar).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  return mean(cross_entropy_rows(logits, labels));
}

/// Euclidean norm of the whole tensor; gradient at 0 is 0.
template <typename T>
Tensor<T> l2_norm(const Tensor<T>& x) {
  return sqrt(sum(mul(x, x)));
}

/// Sum of absolute values.
template <typename T>
Tensor<T> l1_norm(const Tensor<T>& x) {
  return sum(abs(x));
}

/// Per-row Euclidean norms of [N,D] as [N]; zero rows give zero gradient.
template <typename T>
Tensor<T> row_l2_norm(const Tensor<T>& x) {
  if (x.ndim() != 2) throw shape_error("row_l2_norm: rank-2 tensor required");
  return reshape(sqrt(sum(mul(x, x), {1}, true)), Shape{x.dim(0)});
}

/// Per-row cosine similarity of [N,D] pairs as [N]. Rows where either norm is
/// zero yield 0 (rsqrt_safe convention); callers decide how to count them.
template <typename T>
Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.ndim() != 2)
    throw shape_error("cosine_rows: matching rank-2 tensors required");
  Tensor<T> dot = sum(mul(a, b), {1}, true);
  Tensor<T> na = rsqrt_safe(sum(mul(a, a), {1}, true));
  Tensor<T> nb = rsqrt_safe(sum(mul(b, b), {1}, true));
  return reshape(mul(mul(dot, na), nb), Shape{a.dim(0)});
}

// ---------------------------------------------------------------------------
// detached helpers
// ---------------------------------------------------------------------------

/// Elementwise clamp as a detached tensor (projection steps in attacks).
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::detached_unary<T>("clamp", x,
                                   [lo, hi](T v) { return std::min(std::max(v, lo), hi); });
}

template <typename T>
T max_abs(const Tensor<T>& x) {
  T m = T(0);
  for (T v : x.raw()) m = std::max(m, std::abs(v));
  return m;
}

// operator sugar
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T c) { return mul_scalar(a, c); }
template <typename T>
Tensor<T> operator*(T c, const Tensor<T>& a) { return mul_scalar(a, c); }

}  // namespace atlab
