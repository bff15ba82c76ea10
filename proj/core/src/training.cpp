#include "atlab/training.hpp"

#include <algorithm>
#include <chrono>
#include <sys/stat.h>

#include "atlab/checkpoint.hpp"
#include "atlab/config.hpp"

namespace atlab {

void validate(const TrainConfig& cfg) {
  validate(cfg.model);
  validate(cfg.attack);
  validate(cfg.mask);
  validate(cfg.regularizers);
  validate(cfg.augment);
  validate(cfg.eval_attack);
  validate(cfg.collapse);
  if (cfg.epochs < 1) throw config_error("epochs must be at least 1");
  if (cfg.batch_size < 1) throw config_error("batch_size must be at least 1");
  if (!(cfg.lr > 0)) throw config_error("lr must be positive");
  if (!(cfg.momentum >= 0 && cfg.momentum < 1)) throw config_error("momentum must be in [0,1)");
  if (!(cfg.weight_decay >= 0)) throw config_error("weight_decay must be nonnegative");
  if (!(cfg.lr_decay_factor > 0)) throw config_error("lr_decay_factor must be positive");
  for (size_t i = 0; i < cfg.lr_decay_epochs.size(); ++i) {
    const int64_t e = cfg.lr_decay_epochs[i];
    if (e < 0 || e >= cfg.epochs)
      throw config_error("lr decay epoch " + std::to_string(e) + " outside [0, epochs)");
    if (i > 0 && e <= cfg.lr_decay_epochs[i - 1])
      throw config_error("lr decay epochs must be strictly increasing");
  }
  if (cfg.eval_repeats < 1) throw config_error("eval_repeats must be at least 1");
  if (cfg.eval_size < 0) throw config_error("eval_size must be nonnegative");
  if (cfg.probe_size < 0) throw config_error("probe_size must be nonnegative");
  if (cfg.mask.mode != MaskMode::off && cfg.attack.family != AttackFamily::fgsm)
    throw config_error("input masking composes with the fgsm attack family only");
}

double lr_at(const TrainConfig& cfg, int64_t epoch) {
  double lr = cfg.lr;
  for (int64_t d : cfg.lr_decay_epochs)
    if (d <= epoch) lr *= cfg.lr_decay_factor;
  return lr;
}

std::vector<CollapseEvent> detect_collapse(const std::vector<EpochRecord>& history,
                                           const CollapseThresholds& thresholds) {
  validate(thresholds);
  std::vector<CollapseEvent> events;
  for (size_t t = 1; t < history.size(); ++t) {
    const EpochRecord& prev = history[t - 1];
    const EpochRecord& cur = history[t];
    const bool drop = prev.robust_acc >= thresholds.drop_from && cur.robust_acc <= thresholds.drop_to;
    const bool spike =
        prev.grad_norm > 0 && cur.grad_norm >= thresholds.spike_ratio * prev.grad_norm;
    if (drop && spike)
      events.push_back({cur.epoch, CollapseTrigger::both, prev.robust_acc, cur.robust_acc});
    else if (drop)
      events.push_back({cur.epoch, CollapseTrigger::robust_drop, prev.robust_acc, cur.robust_acc});
    else if (spike)
      events.push_back({cur.epoch, CollapseTrigger::gradnorm_spike, prev.grad_norm, cur.grad_norm});
  }
  return events;
}

namespace {

std::vector<int64_t> prefix_positions(int64_t n) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  return p;
}

double batch_accuracy(Model<float>& model, const Tensor<float>& x, const std::vector<int>& y) {
  NoGradGuard ng;
  Tensor<float> logits = model.forward(x, /*train=*/false, /*update_stats=*/false);
  const int64_t n = logits.dim(0), c = logits.dim(1);
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    float bv = logits.raw()[static_cast<size_t>(i * c)];
    for (int64_t k = 1; k < c; ++k) {
      const float v = logits.raw()[static_cast<size_t>(i * c + k)];
      if (v > bv) bv = v, best = k;
    }
    if (best == y[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double split_accuracy(Model<float>& model, const DataSplit& split,
                      const std::vector<int64_t>& positions, int64_t batch_size,
                      const AttackConfig* attack, uint64_t seed) {
  double hits = 0;
  int64_t done = 0;
  uint64_t b = 0;
  while (done < static_cast<int64_t>(positions.size())) {
    const int64_t take =
        std::min<int64_t>(batch_size, static_cast<int64_t>(positions.size()) - done);
    std::vector<int64_t> chunk(positions.begin() + done, positions.begin() + done + take);
    Tensor<float> x = split.batch_images<float>(chunk);
    std::vector<int> y = split.batch_labels(chunk);
    if (attack) {
      Tensor<float> delta = run_attack(model, x, y, *attack, derive_seed(seed, {b}));
      x = perturbed(x, delta, attack->clamp_pixel_box);
    }
    hits += batch_accuracy(model, x, y) * static_cast<double>(take);
    done += take;
    ++b;
  }
  return hits / static_cast<double>(positions.size());
}

/// Mean over the batch of per-example input-gradient L2 norms, the quantity
/// whose epoch-over-epoch ratio feeds the spike trigger.
double mean_input_grad_norm(Model<float>& model, const Tensor<float>& x,
                            const std::vector<int>& y) {
  Tensor<float> g = detail::sum_ce_input_grad(model, x, y);
  Tensor<float> rows = row_l2_norm(flatten2(g));
  double sum = 0;
  for (float v : rows.raw()) sum += v;
  return sum / static_cast<double>(rows.raw().size());
}

bool file_exists(const std::string& path) {
  struct stat st;
  return ::stat(path.c_str(), &st) == 0;
}

AttackConfig probe_attack(double epsilon) {
  AttackConfig cfg;
  cfg.family = AttackFamily::pgd;
  cfg.epsilon = epsilon;
  cfg.step_size = 2.0 / 255.0;
  cfg.steps = 10;
  cfg.restarts = 1;
  cfg.init = AttackInit::uniform_random;
  cfg.clamp_pixel_box = true;
  return cfg;
}

}  // namespace

FinalEval evaluate(Model<float>& model, const DataSplit& split, const AttackConfig& eval_attack,
                   int64_t repeats, uint64_t seed, int64_t batch_size) {
  validate(eval_attack);
  if (repeats < 1) throw config_error("evaluate needs at least 1 repeat");
  if (split.size() < 1) throw config_error("evaluate needs a nonempty split");
  const std::vector<int64_t> positions = prefix_positions(split.size());

  FinalEval out;
  out.clean_acc = split_accuracy(model, split, positions, batch_size, nullptr, 0);
  std::vector<double> robust(static_cast<size_t>(repeats));
  if (eval_attack.family == AttackFamily::none) {
    std::fill(robust.begin(), robust.end(), out.clean_acc);
  } else {
    for (int64_t r = 0; r < repeats; ++r)
      robust[static_cast<size_t>(r)] = split_accuracy(
          model, split, positions, batch_size, &eval_attack,
          derive_seed(seed, {static_cast<uint64_t>(r)}));
  }
  double mean = 0;
  for (double v : robust) mean += v;
  mean /= static_cast<double>(repeats);
  double var = 0;
  for (double v : robust) var += (v - mean) * (v - mean);
  out.robust_acc_mean = mean;
  out.robust_acc_var = repeats > 1 ? var / static_cast<double>(repeats - 1) : 0.0;
  return out;
}

RunLog train(const TrainConfig& cfg, const DatasetHandle& data, const std::string& artifacts_dir) {
  validate(cfg);
  const DataSplit& tr = data.train;
  const DataSplit& te = data.test;
  if (tr.size() < 1 || te.size() < 1) throw config_error("train needs nonempty splits");

  RunLog log;
  log.config_json = to_json(cfg);

  Model<float> model = Model<float>::build(cfg.model, derive_seed(cfg.seed, {0}));
  std::vector<Tensor<float>> params;
  for (auto& p : model.params())
    if (p.trainable) params.push_back(p.value);
  std::vector<Tensor<float>> velocity;

  // fixed-pattern stores share sidecars between runs with the same store seed
  FixedMaskStore<float> mask_store;
  const bool use_mask_store = cfg.mask.mode == MaskMode::fixed_per_example;
  const uint64_t mask_store_seed = derive_seed(cfg.seed, {8});
  std::string mask_sidecar;
  if (use_mask_store) {
    mask_store = FixedMaskStore<float>(tr.height(), tr.width(), cfg.mask.ratio, mask_store_seed);
    if (!artifacts_dir.empty()) {
      mask_sidecar = artifacts_dir + "/mask_store_" + std::to_string(mask_store_seed) + ".bin";
      if (file_exists(mask_sidecar)) mask_store.load(mask_sidecar);
    }
  }
  FixedNoiseStore<float> noise_store;
  const bool use_noise_store = cfg.attack.family == AttackFamily::fast_fgsm &&
                               cfg.attack.init == AttackInit::fixed_per_example;
  const uint64_t noise_store_seed = derive_seed(cfg.seed, {9});
  std::string noise_sidecar;
  if (use_noise_store) {
    noise_store = FixedNoiseStore<float>(Shape{tr.channels(), tr.height(), tr.width()},
                                         cfg.attack.epsilon, noise_store_seed);
    if (!artifacts_dir.empty()) {
      noise_sidecar = artifacts_dir + "/noise_store_" + std::to_string(noise_store_seed) + ".bin";
      if (file_exists(noise_sidecar)) noise_store.load(noise_sidecar);
    }
  }

  // fixed probe batches: clean/robust accuracy on held-out examples, input
  // gradient norm on training examples, both unaugmented
  const int64_t probe_n = std::min<int64_t>(cfg.probe_size, te.size());
  const int64_t gprobe_n = std::min<int64_t>(cfg.probe_size, tr.size());
  Tensor<float> probe_x;
  std::vector<int> probe_y;
  Tensor<float> gprobe_x;
  std::vector<int> gprobe_y;
  if (probe_n > 0) {
    const auto pos = prefix_positions(probe_n);
    probe_x = te.batch_images<float>(pos);
    probe_y = te.batch_labels(pos);
  }
  if (gprobe_n > 0) {
    const auto pos = prefix_positions(gprobe_n);
    gprobe_x = tr.batch_images<float>(pos);
    gprobe_y = tr.batch_labels(pos);
  }
  const AttackConfig probe_cfg = probe_attack(cfg.attack.epsilon);

  const bool any_reg = cfg.regularizers.gradnorm_beta > 0 ||
                       cfg.regularizers.weightnorm_lambda > 0 ||
                       cfg.regularizers.gradalign_lambda > 0;
  const bool use_augment = cfg.augment.random_flip || cfg.augment.random_crop;

  int64_t epoch = 0;
  try {
    for (; epoch < cfg.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      const double lr = lr_at(cfg, epoch);

      Rng shuffle_rng(derive_seed(cfg.seed, {1, static_cast<uint64_t>(epoch)}));
      const std::vector<int64_t> order = shuffled_positions(tr.size(), shuffle_rng);

      double main_sum = 0, reg_sum = 0;
      int64_t seen = 0;
      uint64_t b = 0;
      for (int64_t at = 0; at < tr.size(); at += cfg.batch_size, ++b) {
        const int64_t take = std::min<int64_t>(cfg.batch_size, tr.size() - at);
        const std::vector<int64_t> chunk(order.begin() + at, order.begin() + at + take);
        Tensor<float> x = tr.batch_images<float>(chunk);
        const std::vector<int> y = tr.batch_labels(chunk);
        const std::vector<int64_t> ids = tr.stable_indices(chunk);
        const uint64_t e64 = static_cast<uint64_t>(epoch);

        if (use_augment) {
          Rng aug_rng(derive_seed(cfg.seed, {3, e64, b}));
          x = augment(x, cfg.augment, aug_rng);
        }

        // adversarial example generation; deltas detach from the graph
        Tensor<float> x_train;
        Tensor<float> delta;
        if (cfg.mask.mode != MaskMode::off) {
          Rng mask_rng(derive_seed(cfg.seed, {4, e64, b}));
          Tensor<float> masks =
              make_batch_masks<float>(cfg.mask, take, tr.height(), tr.width(), mask_rng,
                                      use_mask_store ? &mask_store : nullptr, &ids);
          Tensor<float> adv = fgsm_mask_attack(model, x, y, cfg.attack.epsilon, masks,
                                               cfg.attack.step_size, &delta);
          if (cfg.mask.train_on_masked)
            x_train = cfg.attack.clamp_pixel_box ? clamp(adv, 0.0f, 1.0f) : adv;
          else
            x_train = perturbed(x, delta, cfg.attack.clamp_pixel_box);
        } else {
          delta = run_attack(model, x, y, cfg.attack, derive_seed(cfg.seed, {2, e64, b}),
                             use_noise_store ? &noise_store : nullptr, &ids);
          x_train = perturbed(x, delta, cfg.attack.clamp_pixel_box);
        }

        Tensor<float> logits = model.forward(x_train, /*train=*/true, /*update_stats=*/true);
        Tensor<float> loss_main = cross_entropy(logits, y);
        Tensor<float> total = loss_main;
        double reg_val = 0;
        if (any_reg) {
          Tensor<float> reg = Tensor<float>::scalar(0);
          if (cfg.regularizers.gradnorm_beta > 0) {
            // E||grad_x|| is estimated over both input batches the step
            // touches, the clean one and the trained-on adversarial one.
            auto penalty = add(gradnorm_term(model, x, y, cfg.regularizers.gradnorm_beta),
                               gradnorm_term(model, x_train, y, cfg.regularizers.gradnorm_beta));
            reg = add(reg, mul_scalar(penalty, 0.5f));
          }
          if (cfg.regularizers.weightnorm_lambda > 0)
            reg = add(reg, weightnorm_term(model, delta, cfg.regularizers.weightnorm_lambda));
          if (cfg.regularizers.gradalign_lambda > 0) {
            Rng noise_rng(derive_seed(cfg.seed, {5, e64, b}));
            reg = add(reg, gradalign_term(model, x, y, cfg.attack.epsilon,
                                          cfg.regularizers.gradalign_lambda, noise_rng));
          }
          reg_val = static_cast<double>(reg.raw()[0]);
          total = add(total, reg);
        }

        std::vector<Tensor<float>> grads = grad(total, params);
        sgd_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay);

        main_sum += static_cast<double>(loss_main.raw()[0]) * static_cast<double>(take);
        reg_sum += reg_val * static_cast<double>(take);
        seen += take;
      }

      EpochRecord rec;
      rec.epoch = epoch;
      rec.loss_main = main_sum / static_cast<double>(seen);
      rec.loss_reg = reg_sum / static_cast<double>(seen);
      if (gprobe_n > 0) rec.grad_norm = mean_input_grad_norm(model, gprobe_x, gprobe_y);
      if (probe_n > 0) {
        rec.clean_acc = batch_accuracy(model, probe_x, probe_y);
        Tensor<float> pd = run_attack(model, probe_x, probe_y, probe_cfg,
                                      derive_seed(cfg.seed, {7, static_cast<uint64_t>(epoch)}));
        rec.robust_acc =
            batch_accuracy(model, perturbed(probe_x, pd, probe_cfg.clamp_pixel_box), probe_y);
      }
      rec.wall_clock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.epochs.push_back(rec);
    }
  } catch (const numeric_error& e) {
    log.diverged = true;
    log.divergence_epoch = epoch;
    log.divergence_note = e.what();
  }

  log.events = detect_collapse(log.epochs, cfg.collapse);
  for (const CollapseEvent& ev : log.events)
    for (EpochRecord& rec : log.epochs)
      if (rec.epoch == ev.epoch) rec.collapse = true;

  if (!log.diverged) {
    const DataSplit eval_split =
        cfg.eval_size > 0 && cfg.eval_size < te.size() ? te.first_n(cfg.eval_size) : te;
    log.final_eval =
        evaluate(model, eval_split, cfg.eval_attack, cfg.eval_repeats, derive_seed(cfg.seed, {6}));
  }

  if (!artifacts_dir.empty()) {
    if (!log.diverged) save_checkpoint(model, artifacts_dir + "/checkpoint.bin");
    write_runlog_csv(log, artifacts_dir + "/runlog.csv");
    write_runlog_json(log, artifacts_dir + "/runlog.json");
    if (use_mask_store && !mask_sidecar.empty()) mask_store.save(mask_sidecar);
    if (use_noise_store && !noise_sidecar.empty()) noise_store.save(noise_sidecar);
  }
  return log;
}

bool same_trajectory(const RunLog& a, const RunLog& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (size_t i = 0; i < a.epochs.size(); ++i) {
    EpochRecord x = a.epochs[i];
    EpochRecord y = b.epochs[i];
    x.wall_clock_s = 0;
    y.wall_clock_s = 0;
    if (!(x == y)) return false;
  }
  return a.events == b.events && a.diverged == b.diverged &&
         a.divergence_epoch == b.divergence_epoch && a.final_eval == b.final_eval;
}

}  // namespace atlab
