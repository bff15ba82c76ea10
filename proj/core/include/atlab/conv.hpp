#pragma once

// 2D convolution and pooling. Convolution is a trilinear form in (input,
// weight, output-cotangent), so its three partial maps are each other's
// adjoints:
//
//   conv_prim(x, w)          forward
//   conv_input_prim(gy, w)   gradient to the input
//   conv_weight_prim(x, gy)  gradient to the weight
//
// Each primitive's backward is wired to call the other two, which makes
// gradients of gradients exact without any extra machinery. Kernels are
// im2col plus a GEMM.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "atlab/ops.hpp"
#include "atlab/tensor.hpp"

namespace atlab {

namespace detail {

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  const int64_t span = in + 2 * pad - k;
  return span < 0 ? 0 : span / stride + 1;  // kernel larger than input: empty
}

inline void check_conv_args(const Shape& xs, const Shape& ws, int64_t stride, int64_t pad) {
  if (xs.size() != 4 || ws.size() != 4)
    throw shape_error("conv2d: input must be [N,C,H,W], weight [F,C,KH,KW]");
  if (xs[1] != ws[1])
    throw shape_error("conv2d: channel mismatch, input " + shape_str(xs) + " vs weight " +
                      shape_str(ws));
  if (stride < 1) throw shape_error("conv2d: stride must be >= 1");
  if (pad < 0) throw shape_error("conv2d: padding must be >= 0");
  if (conv_out_dim(xs[2], ws[2], stride, pad) < 1 || conv_out_dim(xs[3], ws[3], stride, pad) < 1)
    throw shape_error("conv2d: empty output for input " + shape_str(xs) + ", kernel " +
                      shape_str(ws) + ", stride " + std::to_string(stride) + ", pad " +
                      std::to_string(pad));
}

// Unfolds one image [C,H,W] into col [C*KH*KW, OH*OW]; out-of-bounds taps are 0.
template <typename T>
void im2col(const T* img, int64_t C, int64_t H, int64_t W, int64_t KH, int64_t KW, int64_t stride,
            int64_t pad, int64_t OH, int64_t OW, T* col) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t kh = 0; kh < KH; ++kh) {
      for (int64_t kw = 0; kw < KW; ++kw) {
        T* row = col + ((c * KH + kh) * KW + kw) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t h = oh * stride - pad + kh;
          if (h < 0 || h >= H) {
            for (int64_t ow = 0; ow < OW; ++ow) row[oh * OW + ow] = T(0);
            continue;
          }
          const T* src = img + (c * H + h) * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t w = ow * stride - pad + kw;
            row[oh * OW + ow] = (w >= 0 && w < W) ? src[w] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-adds col [C*KH*KW, OH*OW] back into one image [C,H,W] (pre-zeroed).
template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t KH, int64_t KW, int64_t stride,
            int64_t pad, int64_t OH, int64_t OW, T* img) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t kh = 0; kh < KH; ++kh) {
      for (int64_t kw = 0; kw < KW; ++kw) {
        const T* row = col + ((c * KH + kh) * KW + kw) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t h = oh * stride - pad + kh;
          if (h < 0 || h >= H) continue;
          T* dst = img + (c * H + h) * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t w = ow * stride - pad + kw;
            if (w >= 0 && w < W) dst[w] += row[oh * OW + ow];
          }
        }
      }
    }
  }
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

template <typename T>
Tensor<T> conv_input_prim(const Tensor<T>& gy, const Tensor<T>& w, int64_t stride, int64_t pad,
                          int64_t H, int64_t W);
template <typename T>
Tensor<T> conv_weight_prim(const Tensor<T>& x, const Tensor<T>& gy, int64_t stride, int64_t pad,
                           int64_t KH, int64_t KW);

/// y[n,f] = sum_c x[n,c] * w[f,c] cross-correlated at the given stride and
/// zero padding. x [N,C,H,W], w [F,C,KH,KW] -> [N,F,OH,OW].
template <typename T>
Tensor<T> conv_prim(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, int64_t pad) {
  detail::check_conv_args(x.shape(), w.shape(), stride, pad);
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t F = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const int64_t OH = detail::conv_out_dim(H, KH, stride, pad);
  const int64_t OW = detail::conv_out_dim(W, KW, stride, pad);
  const int64_t K = C * KH * KW, P = OH * OW;
  std::vector<T> out(static_cast<size_t>(N * F * P));
  std::vector<T> col(static_cast<size_t>(K * P));
  Eigen::Map<const detail::RowMat<T>> wm(w.data(), F, K);
  for (int64_t n = 0; n < N; ++n) {
    detail::im2col(x.data() + n * C * H * W, C, H, W, KH, KW, stride, pad, OH, OW, col.data());
    Eigen::Map<const detail::RowMat<T>> cm(col.data(), K, P);
    Eigen::Map<detail::RowMat<T>> om(out.data() + n * F * P, F, P);
    om.noalias() = wm * cm;
  }
  return make_op<T>("conv", Shape{N, F, OH, OW}, std::move(out), {x, w},
                    [x, w, stride, pad](const Tensor<T>& g, const std::vector<char>& need) {
                      std::vector<Tensor<T>> r(2);
                      if (need[0])
                        r[0] = conv_input_prim(g, w, stride, pad, x.dim(2), x.dim(3));
                      if (need[1])
                        r[1] = conv_weight_prim(x, g, stride, pad, w.dim(2), w.dim(3));
                      return r;
                    });
}

/// Adjoint of conv_prim in the input slot: maps an output cotangent
/// gy [N,F,OH,OW] back to input space [N,C,H,W].
template <typename T>
Tensor<T> conv_input_prim(const Tensor<T>& gy, const Tensor<T>& w, int64_t stride, int64_t pad,
                          int64_t H, int64_t W) {
  if (gy.ndim() != 4 || w.ndim() != 4 || gy.dim(1) != w.dim(0))
    throw shape_error("conv_input: cotangent " + shape_str(gy.shape()) + " vs weight " +
                      shape_str(w.shape()));
  const int64_t N = gy.dim(0), F = w.dim(0), C = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const int64_t OH = gy.dim(2), OW = gy.dim(3);
  if (detail::conv_out_dim(H, KH, stride, pad) != OH ||
      detail::conv_out_dim(W, KW, stride, pad) != OW)
    throw shape_error("conv_input: cotangent " + shape_str(gy.shape()) +
                      " inconsistent with input " + std::to_string(H) + "x" + std::to_string(W));
  const int64_t K = C * KH * KW, P = OH * OW;
  std::vector<T> out(static_cast<size_t>(N * C * H * W), T(0));
  std::vector<T> col(static_cast<size_t>(K * P));
  Eigen::Map<const detail::RowMat<T>> wm(w.data(), F, K);
  for (int64_t n = 0; n < N; ++n) {
    Eigen::Map<const detail::RowMat<T>> gm(gy.data() + n * F * P, F, P);
    Eigen::Map<detail::RowMat<T>> cm(col.data(), K, P);
    cm.noalias() = wm.transpose() * gm;
    detail::col2im(col.data(), C, H, W, KH, KW, stride, pad, OH, OW, out.data() + n * C * H * W);
  }
  return make_op<T>("conv_input", Shape{N, C, H, W}, std::move(out), {gy, w},
                    [gy, w, stride, pad](const Tensor<T>& g, const std::vector<char>& need) {
                      std::vector<Tensor<T>> r(2);
                      if (need[0]) r[0] = conv_prim(g, w, stride, pad);
                      if (need[1])
                        r[1] = conv_weight_prim(g, gy, stride, pad, w.dim(2), w.dim(3));
                      return r;
                    });
}

/// Adjoint of conv_prim in the weight slot: contracts x [N,C,H,W] with
/// gy [N,F,OH,OW] into weight space [F,C,KH,KW].
template <typename T>
Tensor<T> conv_weight_prim(const Tensor<T>& x, const Tensor<T>& gy, int64_t stride, int64_t pad,
                           int64_t KH, int64_t KW) {
  if (x.ndim() != 4 || gy.ndim() != 4 || x.dim(0) != gy.dim(0))
    throw shape_error("conv_weight: input " + shape_str(x.shape()) + " vs cotangent " +
                      shape_str(gy.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t F = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
  const int64_t K = C * KH * KW, P = OH * OW;
  std::vector<T> out(static_cast<size_t>(F * K), T(0));
  std::vector<T> col(static_cast<size_t>(K * P));
  Eigen::Map<detail::RowMat<T>> om(out.data(), F, K);
  for (int64_t n = 0; n < N; ++n) {
    detail::im2col(x.data() + n * C * H * W, C, H, W, KH, KW, stride, pad, OH, OW, col.data());
    Eigen::Map<const detail::RowMat<T>> cm(col.data(), K, P);
    Eigen::Map<const detail::RowMat<T>> gm(gy.data() + n * F * P, F, P);
    om.noalias() += gm * cm.transpose();
  }
  return make_op<T>("conv_weight", Shape{F, C, KH, KW}, std::move(out), {x, gy},
                    [x, gy, stride, pad](const Tensor<T>& g, const std::vector<char>& need) {
                      std::vector<Tensor<T>> r(2);
                      if (need[0])
                        r[0] = conv_input_prim(gy, g, stride, pad, x.dim(2), x.dim(3));
                      if (need[1]) r[1] = conv_prim(x, g, stride, pad);
                      return r;
                    });
}

/// Convolution with optional bias [F]; bias add broadcasts over [N,.,OH,OW].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t stride,
                 int64_t pad) {
  Tensor<T> y = conv_prim(x, w, stride, pad);
  if (!bias.defined()) return y;
  if (bias.ndim() != 1 || bias.dim(0) != w.dim(0))
    throw shape_error("conv2d: bias must be [" + std::to_string(w.dim(0)) + "], got " +
                      shape_str(bias.shape()));
  return add(y, reshape(bias, Shape{1, bias.dim(0), 1, 1}));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, int64_t pad) {
  return conv2d(x, w, Tensor<T>(), stride, pad);
}

// ---------------------------------------------------------------------------
// pooling (linear maps, so forward and adjoint form each other's backward)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> avgpool2d_grad(const Tensor<T>& gy, int64_t k, int64_t H, int64_t W);

/// Non-overlapping k x k average pooling; spatial dims must divide by k.
template <typename T>
Tensor<T> avgpool2d(const Tensor<T>& x, int64_t k) {
  if (x.ndim() != 4) throw shape_error("avgpool2d: input must be [N,C,H,W]");
  if (k < 1 || x.dim(2) % k != 0 || x.dim(3) % k != 0)
    throw shape_error("avgpool2d: window " + std::to_string(k) + " must divide " +
                      shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OH = H / k, OW = W / k;
  const T scale = T(1) / static_cast<T>(k * k);
  std::vector<T> out(static_cast<size_t>(N * C * OH * OW));
  const T* in = x.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = in + nc * H * W;
    T* oplane = out.data() + nc * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh) {
      for (int64_t ow = 0; ow < OW; ++ow) {
        T acc = T(0);
        for (int64_t i = 0; i < k; ++i)
          for (int64_t j = 0; j < k; ++j) acc += plane[(oh * k + i) * W + ow * k + j];
        oplane[oh * OW + ow] = acc * scale;
      }
    }
  }
  return make_op<T>("avgpool", Shape{N, C, OH, OW}, std::move(out), {x},
                    [k, H, W](const Tensor<T>& g, const std::vector<char>&) {
                      return std::vector<Tensor<T>>{avgpool2d_grad(g, k, H, W)};
                    });
}

template <typename T>
Tensor<T> avgpool2d_grad(const Tensor<T>& gy, int64_t k, int64_t H, int64_t W) {
  const int64_t N = gy.dim(0), C = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
  const T scale = T(1) / static_cast<T>(k * k);
  std::vector<T> out(static_cast<size_t>(N * C * H * W));
  const T* in = gy.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* gplane = in + nc * OH * OW;
    T* plane = out.data() + nc * H * W;
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow) {
        const T v = gplane[oh * OW + ow] * scale;
        for (int64_t i = 0; i < k; ++i)
          for (int64_t j = 0; j < k; ++j) plane[(oh * k + i) * W + ow * k + j] = v;
      }
  }
  return make_op<T>("avgpool_grad", Shape{N, C, H, W}, std::move(out), {gy},
                    [k](const Tensor<T>& g, const std::vector<char>&) {
                      return std::vector<Tensor<T>>{avgpool2d(g, k)};
                    });
}

namespace detail {
inline int64_t pool_start(int64_t i, int64_t in, int64_t out) { return (i * in) / out; }
inline int64_t pool_end(int64_t i, int64_t in, int64_t out) {
  return ((i + 1) * in + out - 1) / out;
}
}  // namespace detail

template <typename T>
Tensor<T> adaptive_avgpool2d_grad(const Tensor<T>& gy, int64_t H, int64_t W);

/// Average pooling to an exact output size; bins are [floor(i*H/OH),
/// ceil((i+1)*H/OH)) so they tile the input even when sizes do not divide.
template <typename T>
Tensor<T> adaptive_avgpool2d(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  if (x.ndim() != 4) throw shape_error("adaptive_avgpool2d: input must be [N,C,H,W]");
  if (out_h < 1 || out_w < 1 || out_h > x.dim(2) || out_w > x.dim(3))
    throw shape_error("adaptive_avgpool2d: target " + std::to_string(out_h) + "x" +
                      std::to_string(out_w) + " vs input " + shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<T> out(static_cast<size_t>(N * C * out_h * out_w));
  const T* in = x.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = in + nc * H * W;
    T* oplane = out.data() + nc * out_h * out_w;
    for (int64_t oh = 0; oh < out_h; ++oh) {
      const int64_t h0 = detail::pool_start(oh, H, out_h), h1 = detail::pool_end(oh, H, out_h);
      for (int64_t ow = 0; ow < out_w; ++ow) {
        const int64_t w0 = detail::pool_start(ow, W, out_w), w1 = detail::pool_end(ow, W, out_w);
        T acc = T(0);
        for (int64_t h = h0; h < h1; ++h)
          for (int64_t w = w0; w < w1; ++w) acc += plane[h * W + w];
        oplane[oh * out_w + ow] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
      }
    }
  }
  return make_op<T>("adaptive_avgpool", Shape{N, C, out_h, out_w}, std::move(out), {x},
                    [H, W](const Tensor<T>& g, const std::vector<char>&) {
                      return std::vector<Tensor<T>>{adaptive_avgpool2d_grad(g, H, W)};
                    });
}

template <typename T>
Tensor<T> adaptive_avgpool2d_grad(const Tensor<T>& gy, int64_t H, int64_t W) {
  const int64_t N = gy.dim(0), C = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
  std::vector<T> out(static_cast<size_t>(N * C * H * W), T(0));
  const T* in = gy.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* gplane = in + nc * OH * OW;
    T* plane = out.data() + nc * H * W;
    for (int64_t oh = 0; oh < OH; ++oh) {
      const int64_t h0 = detail::pool_start(oh, H, OH), h1 = detail::pool_end(oh, H, OH);
      for (int64_t ow = 0; ow < OW; ++ow) {
        const int64_t w0 = detail::pool_start(ow, W, OW), w1 = detail::pool_end(ow, W, OW);
        const T v = gplane[oh * OW + ow] / static_cast<T>((h1 - h0) * (w1 - w0));
        for (int64_t h = h0; h < h1; ++h)
          for (int64_t w = w0; w < w1; ++w) plane[h * W + w] += v;
      }
    }
  }
  return make_op<T>("adaptive_avgpool_grad", Shape{N, C, H, W}, std::move(out), {gy},
                    [OH, OW](const Tensor<T>& g, const std::vector<char>&) {
                      return std::vector<Tensor<T>>{adaptive_avgpool2d(g, OH, OW)};
                    });
}

/// Mean over the spatial dims of [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& x) {
  if (x.ndim() != 4) throw shape_error("global_avgpool: input must be [N,C,H,W]");
  return mean(x, {2, 3}, /*keepdims=*/false);
}

}  // namespace atlab
