#pragma once

// Adversarial example generators. All attacks are pure in (model, batch,
// seed): forwards run in train mode with frozen running statistics, and the
// returned perturbation carries no graph history, so the subsequent training
// backward never reaches attack internals.
//
// Every generator goes through the same input-gradient helper (summed per-row
// cross entropy), which is what makes the reduction identities exact: FGSM,
// PGD-1 with zero init, and fast-FGSM with zero noise all see bit-identical
// gradients and apply the same update arithmetic.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "atlab/ops.hpp"
#include "atlab/rng.hpp"
#include "atlab/store.hpp"

namespace atlab {

enum class AttackFamily { none, fgsm, pgd, fast_fgsm };
enum class AttackInit { zero, uniform_random, fixed_per_example };

inline const char* to_string(AttackFamily f) {
  switch (f) {
    case AttackFamily::none: return "none";
    case AttackFamily::fgsm: return "fgsm";
    case AttackFamily::pgd: return "pgd";
    case AttackFamily::fast_fgsm: return "fast_fgsm";
  }
  return "?";
}

inline const char* to_string(AttackInit i) {
  switch (i) {
    case AttackInit::zero: return "zero";
    case AttackInit::uniform_random: return "uniform_random";
    case AttackInit::fixed_per_example: return "fixed_per_example";
  }
  return "?";
}

inline AttackFamily attack_family_from_string(const std::string& s) {
  if (s == "none") return AttackFamily::none;
  if (s == "fgsm") return AttackFamily::fgsm;
  if (s == "pgd") return AttackFamily::pgd;
  if (s == "fast_fgsm") return AttackFamily::fast_fgsm;
  throw config_error("unknown attack family '" + s + "'");
}

inline AttackInit attack_init_from_string(const std::string& s) {
  if (s == "zero") return AttackInit::zero;
  if (s == "uniform_random") return AttackInit::uniform_random;
  if (s == "fixed_per_example") return AttackInit::fixed_per_example;
  throw config_error("unknown attack init '" + s + "'");
}

struct AttackConfig {
  AttackFamily family = AttackFamily::fgsm;
  double epsilon = 8.0 / 255.0;
  double step_size = 0.0;  // 0 selects the family default, see resolved_step_size
  int64_t steps = 1;
  int64_t restarts = 1;
  AttackInit init = AttackInit::zero;
  bool clamp_pixel_box = true;

  bool operator==(const AttackConfig&) const = default;
};

inline void validate(const AttackConfig& cfg) {
  if (!(cfg.epsilon >= 0)) throw config_error("attack epsilon must be nonnegative");
  if (!(cfg.step_size >= 0)) throw config_error("attack step_size must be nonnegative");
  if (cfg.restarts < 1) throw config_error("attack restarts must be at least 1");
  if (cfg.family == AttackFamily::pgd && cfg.steps < 1)
    throw config_error("pgd needs at least 1 step");
  if (cfg.init == AttackInit::fixed_per_example && cfg.family != AttackFamily::fast_fgsm)
    throw config_error("fixed_per_example init is only meaningful for fast_fgsm");
}

inline double resolved_step_size(const AttackConfig& cfg) {
  if (cfg.step_size > 0) return cfg.step_size;
  switch (cfg.family) {
    case AttackFamily::fgsm: return cfg.epsilon;
    case AttackFamily::fast_fgsm: return 1.25 * cfg.epsilon;
    case AttackFamily::pgd: return 2.0 / 255.0;
    case AttackFamily::none: return 0.0;
  }
  return 0.0;
}

/// Full-strength evaluation attack: 50 steps, 10 restarts, step 2/255.
inline AttackConfig pgd_eval_attack(double epsilon) {
  AttackConfig cfg;
  cfg.family = AttackFamily::pgd;
  cfg.epsilon = epsilon;
  cfg.step_size = 2.0 / 255.0;
  cfg.steps = 50;
  cfg.restarts = 10;
  cfg.init = AttackInit::uniform_random;
  cfg.clamp_pixel_box = true;
  return cfg;
}

namespace detail {

template <typename T>
T sgn(T v) {
  return static_cast<T>((v > T(0)) - (v < T(0)));
}

/// Gradient of the summed per-row cross entropy w.r.t. the input, detached.
/// The model only has to provide forward(x, train, update_stats) -> logits.
template <typename M, typename T>
Tensor<T> sum_ce_input_grad(M& model, const Tensor<T>& x, const std::vector<int>& y) {
  Tensor<T> xi = x.detach();
  xi.set_requires_grad();
  auto logits = model.forward(xi, /*train=*/true, /*update_stats=*/false);
  auto loss = sum(cross_entropy_rows(logits, y));
  return grad(loss, {xi})[0];
}

/// Per-example cross-entropy values at x, no graph.
template <typename M, typename T>
std::vector<T> row_losses(M& model, const Tensor<T>& x, const std::vector<int>& y) {
  NoGradGuard ng;
  return cross_entropy_rows(model.forward(x, true, false), y).raw();
}

template <typename T>
void check_batch(const Tensor<T>& x, const std::vector<int>& y) {
  if (x.ndim() < 2) throw shape_error("attack input must be a batch, got " + shape_str(x.shape()));
  if (static_cast<int64_t>(y.size()) != x.dim(0))
    throw shape_error("attack got " + std::to_string(y.size()) + " labels for batch of " +
                      std::to_string(x.dim(0)));
}

}  // namespace detail

/// Single-step sign attack: epsilon * sign of the input gradient.
template <typename M, typename T>
Tensor<T> fgsm(M& model, const Tensor<T>& x, const std::vector<int>& y, double epsilon) {
  if (!(epsilon >= 0)) throw config_error("fgsm: epsilon must be nonnegative");
  detail::check_batch(x, y);
  if (epsilon == 0) return Tensor<T>::zeros(x.shape());
  Tensor<T> g = detail::sum_ce_input_grad(model, x, y);
  const T eps = static_cast<T>(epsilon);
  std::vector<T> delta(g.raw().size());
  for (size_t i = 0; i < delta.size(); ++i) delta[i] = eps * detail::sgn(g.raw()[i]);
  return Tensor<T>(x.shape(), std::move(delta));
}

/// Iterated sign attack with projection onto the epsilon ball (and optionally
/// the pixel box) after every step. Each restart draws its own start from a
/// seed derived as (seed, restart), so extending the restart count keeps the
/// earlier restarts' trajectories unchanged. Returns the per-example best
/// perturbation, judged by final cross entropy.
template <typename M, typename T>
Tensor<T> pgd(M& model, const Tensor<T>& x, const std::vector<int>& y, double epsilon,
              double step_size, int64_t steps, int64_t restarts, AttackInit init,
              bool clamp_pixel_box, uint64_t seed) {
  if (!(epsilon >= 0)) throw config_error("pgd: epsilon must be nonnegative");
  if (!(step_size >= 0)) throw config_error("pgd: step_size must be nonnegative");
  if (steps < 1) throw config_error("pgd needs at least 1 step");
  if (restarts < 1) throw config_error("pgd needs at least 1 restart");
  if (init == AttackInit::fixed_per_example)
    throw config_error("pgd does not support fixed_per_example init");
  detail::check_batch(x, y);

  const int64_t N = x.dim(0);
  const int64_t per = x.size() / N;
  const T eps = static_cast<T>(epsilon);
  const T alpha = static_cast<T>(step_size);
  const std::vector<T>& xv = x.raw();

  std::vector<T> best_delta(static_cast<size_t>(x.size()), T(0));
  std::vector<T> best_loss(static_cast<size_t>(N), std::numeric_limits<T>::lowest());
  std::vector<T> delta(static_cast<size_t>(x.size()));
  std::vector<T> xt(static_cast<size_t>(x.size()));

  auto project = [&](size_t i) {
    if (delta[i] > eps) delta[i] = eps;
    if (delta[i] < -eps) delta[i] = -eps;
    if (clamp_pixel_box) {
      T p = xv[i] + delta[i];
      if (p < T(0)) p = T(0);
      if (p > T(1)) p = T(1);
      delta[i] = p - xv[i];
    }
  };

  for (int64_t r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, {static_cast<uint64_t>(r)}));
    for (size_t i = 0; i < delta.size(); ++i) {
      delta[i] = init == AttackInit::zero ? T(0) : static_cast<T>(rng.uniform(-epsilon, epsilon));
      if (init != AttackInit::zero) project(i);
    }
    for (int64_t t = 0; t < steps; ++t) {
      for (size_t i = 0; i < xt.size(); ++i) xt[i] = xv[i] + delta[i];
      Tensor<T> g = detail::sum_ce_input_grad(model, Tensor<T>(x.shape(), xt), y);
      for (size_t i = 0; i < delta.size(); ++i) {
        delta[i] += alpha * detail::sgn(g.raw()[i]);
        project(i);
      }
    }
    for (size_t i = 0; i < xt.size(); ++i) xt[i] = xv[i] + delta[i];
    std::vector<T> losses = detail::row_losses(model, Tensor<T>(x.shape(), xt), y);
    for (int64_t n = 0; n < N; ++n) {
      if (losses[static_cast<size_t>(n)] > best_loss[static_cast<size_t>(n)]) {
        best_loss[static_cast<size_t>(n)] = losses[static_cast<size_t>(n)];
        const size_t off = static_cast<size_t>(n * per);
        for (size_t i = 0; i < static_cast<size_t>(per); ++i)
          best_delta[off + i] = delta[off + i];
      }
    }
  }
  return Tensor<T>(x.shape(), std::move(best_delta));
}

template <typename M, typename T>
Tensor<T> pgd(M& model, const Tensor<T>& x, const std::vector<int>& y, const AttackConfig& cfg,
              uint64_t seed) {
  return pgd(model, x, y, cfg.epsilon, resolved_step_size(cfg), cfg.steps, cfg.restarts, cfg.init,
             cfg.clamp_pixel_box, seed);
}

/// Single gradient step taken from a noisy start inside the epsilon ball; the
/// summed move is clamped back into the ball. The noise may come from a fresh
/// uniform draw or from a per-example fixed store.
template <typename M, typename T>
Tensor<T> fast_fgsm(M& model, const Tensor<T>& x, const std::vector<int>& y, double epsilon,
                    double step_size, const Tensor<T>& noise) {
  if (!(epsilon >= 0)) throw config_error("fast_fgsm: epsilon must be nonnegative");
  detail::check_batch(x, y);
  if (noise.shape() != x.shape())
    throw shape_error("fast_fgsm: noise shape " + shape_str(noise.shape()) +
                      " does not match input " + shape_str(x.shape()));
  const T eps = static_cast<T>(epsilon);
  const std::vector<T>& nv = noise.raw();
  for (T v : nv)
    if (!(v >= -eps && v <= eps)) throw error("fast_fgsm: noise exceeds the epsilon ball");

  std::vector<T> xt(nv.size());
  for (size_t i = 0; i < xt.size(); ++i) xt[i] = x.raw()[i] + nv[i];
  Tensor<T> g = detail::sum_ce_input_grad(model, Tensor<T>(x.shape(), std::move(xt)), y);
  const T alpha = static_cast<T>(step_size);
  std::vector<T> delta(nv.size());
  for (size_t i = 0; i < delta.size(); ++i) {
    T d = nv[i] + alpha * detail::sgn(g.raw()[i]);
    delta[i] = d > eps ? eps : d < -eps ? -eps : d;
  }
  return Tensor<T>(x.shape(), std::move(delta));
}

/// Composes x + delta, optionally clamped into the pixel box. Clamping after
/// the ball projection can only shrink the perturbation, so ball membership
/// survives it.
template <typename T>
Tensor<T> perturbed(const Tensor<T>& x, const Tensor<T>& delta, bool clamp_pixel_box) {
  if (delta.shape() != x.shape())
    throw shape_error("perturbed: delta shape " + shape_str(delta.shape()) +
                      " does not match input " + shape_str(x.shape()));
  std::vector<T> v(x.raw().size());
  for (size_t i = 0; i < v.size(); ++i) {
    T p = x.raw()[i] + delta.raw()[i];
    if (clamp_pixel_box) {
      if (p < T(0)) p = T(0);
      if (p > T(1)) p = T(1);
    }
    v[i] = p;
  }
  return Tensor<T>(x.shape(), std::move(v));
}

template <typename T>
Tensor<T> uniform_noise(const Shape& shape, double epsilon, Rng& rng) {
  std::vector<T> v(static_cast<size_t>(numel(shape)));
  for (auto& e : v) e = static_cast<T>(rng.uniform(-epsilon, epsilon));
  return Tensor<T>(shape, std::move(v));
}

/// Per-example noise drawn once from Uniform(-eps, +eps) and pinned forever.
template <typename T>
class FixedNoiseStore {
public:
  FixedNoiseStore() = default;
  FixedNoiseStore(Shape example_shape, double epsilon, uint64_t seed) : epsilon_(epsilon) {
    const int64_t n = numel(example_shape);
    store_ = FixedPatternStore<T>(std::move(example_shape), seed, "noise", [epsilon, n](Rng& rng) {
      std::vector<T> v(static_cast<size_t>(n));
      for (auto& e : v) e = static_cast<T>(rng.uniform(-epsilon, epsilon));
      return v;
    });
  }

  double epsilon() const { return epsilon_; }
  const Tensor<T>& get(int64_t index) { return store_.get(index); }
  size_t cached() const { return store_.cached(); }
  void save(const std::string& path) const { store_.save(path); }
  void load(const std::string& path) { store_.load(path); }

  /// Stacks the fixed patterns of a batch worth of indices.
  Tensor<T> batch(const std::vector<int64_t>& indices) {
    const int64_t per = numel(store_.shape());
    std::vector<T> v(static_cast<size_t>(per) * indices.size());
    Shape shape = store_.shape();
    shape.insert(shape.begin(), static_cast<int64_t>(indices.size()));
    for (size_t n = 0; n < indices.size(); ++n) {
      const auto& t = store_.get(indices[n]);
      std::copy(t.raw().begin(), t.raw().end(), v.begin() + static_cast<int64_t>(n) * per);
    }
    return Tensor<T>(std::move(shape), std::move(v));
  }

private:
  FixedPatternStore<T> store_;
  double epsilon_ = 0.0;
};

/// Dispatches on the configured family. `indices` identifies the batch
/// examples inside `noise_store` and is required only for fixed_per_example.
template <typename M, typename T>
Tensor<T> run_attack(M& model, const Tensor<T>& x, const std::vector<int>& y,
                     const AttackConfig& cfg, uint64_t seed,
                     FixedNoiseStore<T>* noise_store = nullptr,
                     const std::vector<int64_t>* indices = nullptr) {
  validate(cfg);
  switch (cfg.family) {
    case AttackFamily::none: return Tensor<T>::zeros(x.shape());
    case AttackFamily::fgsm: return fgsm(model, x, y, cfg.epsilon);
    case AttackFamily::pgd: return pgd(model, x, y, cfg, seed);
    case AttackFamily::fast_fgsm: {
      Tensor<T> eta;
      if (cfg.init == AttackInit::fixed_per_example) {
        if (!noise_store || !indices)
          throw config_error("fixed_per_example init needs a noise store and batch indices");
        eta = noise_store->batch(*indices);
      } else if (cfg.init == AttackInit::zero) {
        eta = Tensor<T>::zeros(x.shape());
      } else {
        Rng rng(derive_seed(seed, {0xE7a}));
        eta = uniform_noise<T>(x.shape(), cfg.epsilon, rng);
      }
      return fast_fgsm(model, x, y, cfg.epsilon, resolved_step_size(cfg), eta);
    }
  }
  throw config_error("unhandled attack family");
}

}  // namespace atlab
