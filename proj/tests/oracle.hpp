#pragma once

// Independent reference implementations used to check the engine. Everything
// here is deliberately naive: central differences for gradients, direct
// nested loops for convolution, textbook log-sum-exp for the loss. None of it
// touches the graph machinery under test.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max({1.0, std::abs(got), std::abs(want)});
}

inline double max_rel_err(const std::vector<double>& got, const std::vector<double>& want) {
  double m = 0.0;
  for (size_t i = 0; i < got.size(); ++i) m = std::max(m, rel_err(got[i], want[i]));
  return m;
}

/// Central-difference gradient of a scalar function of a flat vector.
inline std::vector<double> fd_grad(const std::function<double(const std::vector<double>&)>& f,
                                   std::vector<double> x, double h = 1e-4) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    x[i] = v + h;
    const double fp = f(x);
    x[i] = v - h;
    const double fm = f(x);
    x[i] = v;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline int64_t conv_out(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// Direct cross-correlation, seven nested loops, zero padding.
inline std::vector<double> conv_ref(const std::vector<double>& x, int64_t N, int64_t C, int64_t H,
                                    int64_t W, const std::vector<double>& w, int64_t F, int64_t KH,
                                    int64_t KW, int64_t stride, int64_t pad) {
  const int64_t OH = conv_out(H, KH, stride, pad), OW = conv_out(W, KW, stride, pad);
  std::vector<double> y(static_cast<size_t>(N * F * OH * OW), 0.0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t f = 0; f < F; ++f)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t kh = 0; kh < KH; ++kh)
              for (int64_t kw = 0; kw < KW; ++kw) {
                const int64_t h = oh * stride - pad + kh;
                const int64_t ww = ow * stride - pad + kw;
                if (h < 0 || h >= H || ww < 0 || ww >= W) continue;
                acc += x[static_cast<size_t>(((n * C + c) * H + h) * W + ww)] *
                       w[static_cast<size_t>(((f * C + c) * KH + kh) * KW + kw)];
              }
          y[static_cast<size_t>(((n * F + f) * OH + oh) * OW + ow)] = acc;
        }
  return y;
}

/// Mean softmax cross entropy from logits [N,C], log-sum-exp form.
inline double ce_ref(const std::vector<double>& logits, int64_t N, int64_t C,
                     const std::vector<int>& labels) {
  double total = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const double* row = logits.data() + n * C;
    double m = row[0];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c) s += std::exp(row[c] - m);
    total += m + std::log(s) - row[labels[static_cast<size_t>(n)]];
  }
  return total / static_cast<double>(N);
}

/// Softmax probabilities for one row of logits.
inline std::vector<double> softmax_ref(const std::vector<double>& row) {
  double m = row[0];
  for (double v : row) m = std::max(m, v);
  double s = 0.0;
  std::vector<double> p(row.size());
  for (size_t i = 0; i < row.size(); ++i) s += (p[i] = std::exp(row[i] - m));
  for (double& v : p) v /= s;
  return p;
}

inline std::vector<double> random_vec(std::mt19937_64& rng, size_t n, double lo = -1.0,
                                      double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace oracle
