#pragma once

// Stabilizers for single-step adversarial training: input pixel masking and
// the three loss-side regularizers (input-gradient norm, first-layer weight
// response to the perturbation, and gradient alignment between clean and
// noised inputs).
//
// All terms are pure in (model snapshot, batch, seed). Regularizer forwards
// run train-mode with frozen running statistics; only the main training
// forward may update buffers. A coefficient of zero short-circuits to a plain
// zero scalar with no graph work at all, so disabled terms cost nothing and
// create no second-order machinery.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "atlab/attacks.hpp"
#include "atlab/conv.hpp"
#include "atlab/nn.hpp"
#include "atlab/ops.hpp"
#include "atlab/rng.hpp"
#include "atlab/store.hpp"

namespace atlab {

enum class MaskMode { off, random_per_step, fixed_per_example };

inline const char* to_string(MaskMode m) {
  switch (m) {
    case MaskMode::off: return "off";
    case MaskMode::random_per_step: return "random_per_step";
    case MaskMode::fixed_per_example: return "fixed_per_example";
  }
  return "?";
}

inline MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "off") return MaskMode::off;
  if (s == "random_per_step") return MaskMode::random_per_step;
  if (s == "fixed_per_example") return MaskMode::fixed_per_example;
  throw config_error("unknown mask mode '" + s + "'");
}

struct MaskSpec {
  double ratio = 0.0;
  MaskMode mode = MaskMode::off;
  // true trains on the masked adversarial image x*M + delta; false restores
  // the unmasked pixels and trains on x + delta
  bool train_on_masked = true;

  bool operator==(const MaskSpec&) const = default;
};

inline void validate(const MaskSpec& spec) {
  if (!(spec.ratio >= 0.0 && spec.ratio <= 1.0))
    throw config_error("mask ratio must be in [0,1]");
}

struct RegularizerConfig {
  double gradnorm_beta = 0.0;
  double weightnorm_lambda = 0.0;
  double gradalign_lambda = 0.0;

  bool operator==(const RegularizerConfig&) const = default;
};

/// Midpoint of the stable coefficient range for the first-layer weight term.
inline constexpr double kWeightNormLambdaDefault = 9.0;

/// Coefficients used by the experiment presets when a regularizer is switched
/// on without an explicit strength.  Tuned on the desk-scale dataset.
inline constexpr double kGradNormBetaDefault = 0.5;
inline constexpr double kGradAlignLambdaDefault = 0.2;

inline void validate(const RegularizerConfig& cfg) {
  if (!(cfg.gradnorm_beta >= 0) || !std::isfinite(cfg.gradnorm_beta))
    throw config_error("gradnorm_beta must be finite and nonnegative");
  if (!(cfg.weightnorm_lambda >= 0) || !std::isfinite(cfg.weightnorm_lambda))
    throw config_error("weightnorm_lambda must be finite and nonnegative");
  if (!(cfg.gradalign_lambda >= 0) || !std::isfinite(cfg.gradalign_lambda))
    throw config_error("gradalign_lambda must be finite and nonnegative");
}

// ---------------------------------------------------------------------------
// masks
// ---------------------------------------------------------------------------

/// Spatial {0,1} mask with exactly floor(ratio*h*w) zeros, uniform over
/// position subsets. One value per pixel; channels share it.
template <typename T>
Tensor<T> make_mask(int64_t h, int64_t w, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw config_error("mask ratio must be in [0,1]");
  if (h < 1 || w < 1) throw shape_error("mask extent must be positive");
  const int64_t n = h * w;
  const auto k = static_cast<int64_t>(std::floor(ratio * static_cast<double>(n)));
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<T> m(static_cast<size_t>(n), T(1));
  for (int64_t i = 0; i < k; ++i) {
    const int64_t j = i + rng.range(n - i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    m[static_cast<size_t>(idx[static_cast<size_t>(i)])] = T(0);
  }
  return Tensor<T>(Shape{h, w}, std::move(m));
}

/// Per-example masks drawn once and pinned to their dataset index.
template <typename T>
class FixedMaskStore {
public:
  FixedMaskStore() = default;
  FixedMaskStore(int64_t h, int64_t w, double ratio, uint64_t seed) : ratio_(ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw config_error("mask ratio must be in [0,1]");
    store_ = FixedPatternStore<T>(Shape{h, w}, seed, "mask", [h, w, ratio](Rng& rng) {
      return make_mask<T>(h, w, ratio, rng).raw();
    });
  }

  double ratio() const { return ratio_; }
  const Tensor<T>& get(int64_t index) { return store_.get(index); }
  size_t cached() const { return store_.cached(); }
  void save(const std::string& path) const { store_.save(path); }
  void load(const std::string& path) { store_.load(path); }

private:
  FixedPatternStore<T> store_;
  double ratio_ = 0.0;
};

/// Stacks one mask per example as [N,1,H,W]. random_per_step draws fresh
/// masks from the rng; fixed_per_example reads the store at the given
/// indices; off yields all-ones.
template <typename T>
Tensor<T> make_batch_masks(const MaskSpec& spec, int64_t n, int64_t h, int64_t w, Rng& rng,
                           FixedMaskStore<T>* store = nullptr,
                           const std::vector<int64_t>* indices = nullptr) {
  validate(spec);
  const Shape shape{n, 1, h, w};
  if (spec.mode == MaskMode::off) return Tensor<T>::ones(shape);
  std::vector<T> out(static_cast<size_t>(numel(shape)));
  const size_t per = static_cast<size_t>(h * w);
  for (int64_t i = 0; i < n; ++i) {
    const T* src;
    Tensor<T> fresh;
    if (spec.mode == MaskMode::random_per_step) {
      fresh = make_mask<T>(h, w, spec.ratio, rng);
      src = fresh.raw().data();
    } else {
      if (!store || !indices)
        throw config_error("fixed_per_example masks need a mask store and batch indices");
      const Tensor<T>& t = store->get((*indices)[static_cast<size_t>(i)]);
      if (t.shape() != Shape{h, w})
        throw shape_error("mask store shape " + shape_str(t.shape()) + " does not match " +
                          shape_str(Shape{h, w}));
      src = t.raw().data();
    }
    std::copy(src, src + per, out.begin() + static_cast<int64_t>(per) * i);
  }
  return Tensor<T>(shape, std::move(out));
}

namespace detail {

/// x * mask with the mask broadcast over channels. Accepts [H,W] (shared
/// across the batch) or [N,1,H,W] (per example).
template <typename T>
std::vector<T> apply_mask(const Tensor<T>& x, const Tensor<T>& mask) {
  if (x.ndim() != 4) throw shape_error("masking expects [N,C,H,W], got " + shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const bool shared = mask.shape() == Shape{H, W};
  if (!shared && mask.shape() != Shape{N, 1, H, W})
    throw shape_error("mask shape " + shape_str(mask.shape()) + " does not broadcast over " +
                      shape_str(x.shape()));
  std::vector<T> out(x.raw().size());
  const size_t hw = static_cast<size_t>(H * W);
  for (int64_t n = 0; n < N; ++n) {
    const T* m = mask.raw().data() + (shared ? 0 : static_cast<int64_t>(hw) * n);
    for (int64_t c = 0; c < C; ++c) {
      const size_t off = static_cast<size_t>(((n * C) + c)) * hw;
      for (size_t i = 0; i < hw; ++i) out[off + i] = x.raw()[off + i] * m[i];
    }
  }
  return out;
}

}  // namespace detail

/// Single-step sign attack launched from the masked image: the gradient is
/// taken at x*M and the returned adversarial input is x*M + delta. Step size
/// 0 selects epsilon. If delta_out is given it receives the bare step so the
/// caller can instead train on x + delta.
template <typename M, typename T>
Tensor<T> fgsm_mask_attack(M& model, const Tensor<T>& x, const std::vector<int>& y, double epsilon,
                           const Tensor<T>& mask, double step_size = 0.0,
                           Tensor<T>* delta_out = nullptr) {
  if (!(epsilon >= 0)) throw config_error("fgsm_mask_attack: epsilon must be nonnegative");
  if (!(step_size >= 0)) throw config_error("fgsm_mask_attack: step_size must be nonnegative");
  detail::check_batch(x, y);
  const T eps = static_cast<T>(epsilon);
  const T alpha = step_size > 0 ? static_cast<T>(step_size) : eps;

  Tensor<T> xm(x.shape(), detail::apply_mask(x, mask));
  Tensor<T> g = detail::sum_ce_input_grad(model, xm, y);
  std::vector<T> delta(g.raw().size());
  for (size_t i = 0; i < delta.size(); ++i) {
    T d = alpha * detail::sgn(g.raw()[i]);
    delta[i] = d > eps ? eps : d < -eps ? -eps : d;
  }
  std::vector<T> adv(delta.size());
  for (size_t i = 0; i < adv.size(); ++i) adv[i] = xm.raw()[i] + delta[i];
  if (delta_out) *delta_out = Tensor<T>(x.shape(), std::move(delta));
  return Tensor<T>(x.shape(), std::move(adv));
}

// ---------------------------------------------------------------------------
// regularizers
// ---------------------------------------------------------------------------

/// beta * mean over the batch of the L2 norm of the per-example input
/// gradient at the clean input, built with create_graph so the term is
/// differentiable w.r.t. the parameters.
template <typename M, typename T>
Tensor<T> gradnorm_term(M& model, const Tensor<T>& x, const std::vector<int>& y, double beta) {
  if (!(beta >= 0) || !std::isfinite(beta))
    throw config_error("gradnorm_beta must be finite and nonnegative");
  if (beta == 0) return Tensor<T>::scalar(T(0));
  detail::check_batch(x, y);
  Tensor<T> xi = x.detach();
  xi.set_requires_grad();
  auto loss = sum(cross_entropy_rows(model.forward(xi, true, false), y));
  Tensor<T> g = grad(loss, {xi}, /*create_graph=*/true)[0];
  return mul_scalar(mean(row_l2_norm(flatten2(g))), static_cast<T>(beta));
}

/// lambda * elementwise mean absolute response of the first conv layer to the
/// (detached) perturbation. By linearity this equals the mean-L1 feature
/// difference between x+delta and x for the bias-free stem. Gradient reaches
/// only the stem weight.
template <typename T>
Tensor<T> weightnorm_term(Model<T>& model, const Tensor<T>& delta, double lambda) {
  if (!(lambda >= 0) || !std::isfinite(lambda))
    throw config_error("weightnorm_lambda must be finite and nonnegative");
  if (lambda == 0) return Tensor<T>::scalar(T(0));
  auto response =
      conv2d(delta.detach(), model.first_conv_weight(), model.stem_stride(), model.stem_pad());
  return mul_scalar(mean(abs(response)), static_cast<T>(lambda));
}

/// lambda * mean over the batch of (1 - cos) between per-example input
/// gradients at x and at x + eta, with eta supplied by the caller. Computed
/// as half the squared distance of the normalized gradients, which is the
/// same quantity but collapses to an exact 0.0 when the two gradients are
/// bit-identical (eta = 0). The perturbed-point gradient enters as a constant
/// alignment target; the parameter gradient flows through the x field only.
/// Examples where either gradient has zero norm contribute 0 and are tallied
/// in degenerate_count.
template <typename M, typename T>
Tensor<T> gradalign_term(M& model, const Tensor<T>& x, const std::vector<int>& y,
                         const Tensor<T>& eta, double lambda,
                         int64_t* degenerate_count = nullptr) {
  if (!(lambda >= 0) || !std::isfinite(lambda))
    throw config_error("gradalign_lambda must be finite and nonnegative");
  if (degenerate_count) *degenerate_count = 0;
  if (lambda == 0) return Tensor<T>::scalar(T(0));
  detail::check_batch(x, y);
  if (eta.shape() != x.shape())
    throw shape_error("gradalign noise shape " + shape_str(eta.shape()) + " does not match " +
                      shape_str(x.shape()));

  auto input_grad = [&](const Tensor<T>& at, bool create) {
    Tensor<T> xi = at.detach();
    xi.set_requires_grad();
    auto loss = sum(cross_entropy_rows(model.forward(xi, true, false), y));
    return flatten2(grad(loss, {xi}, create)[0]);
  };

  std::vector<T> shifted(x.raw().size());
  for (size_t i = 0; i < shifted.size(); ++i) shifted[i] = x.raw()[i] + eta.raw()[i];
  Tensor<T> g1 = input_grad(x, /*create=*/true);
  // The perturbed-point gradient is a constant alignment target (the stop
  // gradient of the method's reference implementation), so only one field
  // carries second-order graph.
  Tensor<T> g2 = input_grad(Tensor<T>(x.shape(), std::move(shifted)), /*create=*/false).detach();

  auto n1 = sum(mul(g1, g1), {1}, /*keepdims=*/true);  // [N,1]
  Tensor<T> n2, v2;
  {
    NoGradGuard guard;
    n2 = sum(mul(g2, g2), {1}, /*keepdims=*/true);
    v2 = mul(g2, rsqrt_safe(n2));
  }
  auto d = sub(mul(g1, rsqrt_safe(n1)), v2);
  auto row = sum(mul(d, d), {1}, /*keepdims=*/false);  // [N], == 2*(1 - cos)
  auto ok = mul(step_mask(n1), step_mask(n2));         // detached {0,1} [N,1]
  if (degenerate_count) {
    for (T v : ok.raw())
      if (v == T(0)) ++*degenerate_count;
  }
  return mul_scalar(mean(mul(reshape(ok, Shape{-1}), row)), static_cast<T>(0.5 * lambda));
}

/// Draws eta fresh from Uniform(-eps, +eps).
template <typename M, typename T>
Tensor<T> gradalign_term(M& model, const Tensor<T>& x, const std::vector<int>& y, double epsilon,
                         double lambda, Rng& rng, int64_t* degenerate_count = nullptr) {
  if (!(epsilon >= 0)) throw config_error("gradalign epsilon must be nonnegative");
  if (lambda == 0) {
    if (degenerate_count) *degenerate_count = 0;
    return Tensor<T>::scalar(T(0));
  }
  auto eta = uniform_noise<T>(x.shape(), epsilon, rng);
  return gradalign_term(model, x, y, eta, lambda, degenerate_count);
}

}  // namespace atlab
