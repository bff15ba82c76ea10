#pragma once

// Adversarial training loop: SGD with momentum over per-batch adversarial
// examples, optional masking and gradient regularizers, per-epoch robustness
// probes, and the collapse detector that pairs abrupt robust-accuracy drops
// with input-gradient-norm spikes. Training runs in 32-bit floats.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "atlab/attacks.hpp"
#include "atlab/data.hpp"
#include "atlab/nn.hpp"
#include "atlab/runlog.hpp"
#include "atlab/tricks.hpp"

namespace atlab {

struct CollapseThresholds {
  /// robust_drop fires when robust accuracy falls from >= drop_from to
  /// <= drop_to within a single epoch.
  double drop_from = 0.15;
  double drop_to = 0.02;
  /// gradnorm_spike fires when the mean input-gradient norm grows by at
  /// least this factor between consecutive epochs.
  double spike_ratio = 4.0;

  bool operator==(const CollapseThresholds&) const = default;
};

inline void validate(const CollapseThresholds& t) {
  if (!(t.drop_from > t.drop_to) || !(t.drop_to >= 0))
    throw config_error("collapse drop thresholds must satisfy drop_from > drop_to >= 0");
  if (!(t.spike_ratio > 1)) throw config_error("collapse spike_ratio must exceed 1");
}

struct TrainConfig {
  ModelConfig model;
  int64_t epochs = 30;
  int64_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Epochs at which lr multiplies by lr_decay_factor; 24/27 scale the
  /// 100/105-of-110 schedule down to the 30-epoch default.
  std::vector<int64_t> lr_decay_epochs = {24, 27};
  double lr_decay_factor = 0.1;
  AttackConfig attack;
  MaskSpec mask;
  RegularizerConfig regularizers;
  AugmentSpec augment;
  AttackConfig eval_attack = pgd_eval_attack(8.0 / 255.0);
  int64_t eval_repeats = 3;
  /// Final evaluation runs on the first eval_size test examples; 0 means the
  /// whole test split.
  int64_t eval_size = 0;
  uint64_t seed = 0;
  CollapseThresholds collapse;
  /// Per-epoch probes (clean/robust accuracy, input-gradient norm) use this
  /// many held-out examples; 0 disables them and records zeros.
  int64_t probe_size = 256;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& cfg);

/// lr(t) = lr * factor^(number of decay epochs <= t).
double lr_at(const TrainConfig& cfg, int64_t epoch);

/// One SGD step with classical coupled weight decay:
///   v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v.
/// Velocity initializes to zeros on first use. Parameters update in place
/// (entries alias model storage). Throws numeric_error on non-finite grads.
template <typename T>
void sgd_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads,
              std::vector<Tensor<T>>& velocity, double lr, double momentum,
              double weight_decay) {
  if (params.size() != grads.size())
    throw shape_error("sgd_step: " + std::to_string(params.size()) + " params vs " +
                      std::to_string(grads.size()) + " grads");
  if (velocity.empty())
    for (const auto& p : params) velocity.push_back(Tensor<T>::zeros(p.shape()));
  if (velocity.size() != params.size())
    throw shape_error("sgd_step: velocity state does not match params");
  const T m = static_cast<T>(momentum);
  const T wd = static_cast<T>(weight_decay);
  const T step = static_cast<T>(lr);
  for (size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    const auto& g = grads[k];
    auto& v = velocity[k];
    if (g.shape() != p.shape() || v.shape() != p.shape())
      throw shape_error("sgd_step: shape mismatch at param " + std::to_string(k));
    for (size_t i = 0; i < p.raw().size(); ++i) {
      const T gi = g.raw()[i];
      if (!std::isfinite(static_cast<double>(gi)))
        throw numeric_error("sgd_step: non-finite gradient at param " + std::to_string(k));
      v.raw()[i] = m * v.raw()[i] + (gi + wd * p.raw()[i]);
      p.raw()[i] -= step * v.raw()[i];
    }
  }
}

/// Scans consecutive epoch pairs for abrupt robustness loss and gradient
/// norm explosions. Pure function of the history: rerunning it on a stored
/// log reproduces the events. For robust_drop and both, pre/post are the
/// robust accuracies; for gradnorm_spike they are the gradient norms.
std::vector<CollapseEvent> detect_collapse(const std::vector<EpochRecord>& history,
                                           const CollapseThresholds& thresholds = {});

/// Clean accuracy once (eval-mode, deterministic), then robust accuracy per
/// repeat under independently seeded attacks; returns mean and sample
/// variance over repeats.
FinalEval evaluate(Model<float>& model, const DataSplit& split, const AttackConfig& eval_attack,
                   int64_t repeats, uint64_t seed, int64_t batch_size = 256);

/// Runs the full training loop. When artifacts_dir is nonempty, writes
/// checkpoint.bin, runlog.csv, runlog.json, and any fixed-pattern sidecars
/// there. Divergence (non-finite loss or gradients) stops training and is
/// recorded in the returned log rather than thrown.
RunLog train(const TrainConfig& cfg, const DatasetHandle& data,
             const std::string& artifacts_dir = "");

/// Epoch trajectories match, ignoring wall-clock time and the embedded
/// config text. The equality used by reduction-identity checks.
bool same_trajectory(const RunLog& a, const RunLog& b);

}  // namespace atlab
