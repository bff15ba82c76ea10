#include "atlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "atlab/checkpoint.hpp"
#include "atlab/config.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace atlab {
namespace {

// Shortest representation that still round-trips a double through text.
std::string num17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// FNV-1a, used to fold run labels into the seed path so run identity, not
// position in the spec, decides the stream.
uint64_t label_hash(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

double parse_number(const std::string& s, const std::string& context) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (s.empty() || errno != 0 || end != s.c_str() + s.size())
    throw config_error("bad number '" + s + "' in '" + context + "'");
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os << text;
  if (!os) throw io_error("write failed on " + path);
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw io_error("cannot create directory " + p.string() + ": " + ec.message());
}

json data_to_tree(const DataSpec& d) {
  return json{{"kind", d.kind}, {"dir", d.dir},
              {"n", d.n},       {"classes", d.classes},
              {"image_size", d.image_size}, {"seed", d.seed}};
}

DataSpec data_from_tree(const json& j) {
  DataSpec d;
  d.kind = j.value("kind", d.kind);
  d.dir = j.value("dir", d.dir);
  d.n = j.value("n", d.n);
  d.classes = j.value("classes", d.classes);
  d.image_size = j.value("image_size", d.image_size);
  d.seed = j.value("seed", d.seed);
  return d;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_var_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

void validate(const DataSpec& spec) {
  if (spec.kind != "synth" && spec.kind != "cifar10" && spec.kind != "cifar100")
    throw config_error("unknown data kind '" + spec.kind + "' (synth, cifar10, cifar100)");
  if (spec.kind == "synth") {
    if (spec.n < 1) throw config_error("synthetic data needs n >= 1");
    if (spec.classes < 2) throw config_error("synthetic data needs at least 2 classes");
    if (spec.image_size < 2) throw config_error("synthetic image_size must be at least 2");
    if (spec.classes > spec.n) throw config_error("synthetic data needs n >= classes");
  } else if (spec.dir.empty()) {
    throw config_error(spec.kind + " needs a batch directory");
  }
}

DatasetHandle load_data(const DataSpec& spec) {
  validate(spec);
  if (spec.kind == "synth")
    return synth_dataset(spec.n, spec.classes, spec.image_size, spec.seed);
  return load_cifar_binary(spec.dir,
                           spec.kind == "cifar100" ? CifarKind::cifar100 : CifarKind::cifar10);
}

void sync_model_geometry(TrainConfig& cfg, const DataSpec& data) {
  cfg.model.in_channels = 3;
  if (data.kind == "synth") {
    cfg.model.in_h = data.image_size;
    cfg.model.in_w = data.image_size;
    cfg.model.num_classes = data.classes;
  } else {
    cfg.model.in_h = 32;
    cfg.model.in_w = 32;
    cfg.model.num_classes = data.kind == "cifar100" ? 100 : 10;
  }
}

std::vector<std::string> preset_names() {
  return {"vanilla",    "fgsm_mask", "fgsm_mask_fixed", "str2",
          "smooth",     "str2_smooth", "weightnorm",    "gradnorm",
          "gradalign",  "fast_fgsm", "fast_fgsm_fixed", "pgd10"};
}

void apply_preset(TrainConfig& cfg, const std::string& name) {
  if (name == "vanilla") {
    return;
  } else if (name == "fgsm_mask" || name == "fgsm_mask_fixed") {
    cfg.mask.ratio = 0.3;
    cfg.mask.mode =
        name == "fgsm_mask" ? MaskMode::random_per_step : MaskMode::fixed_per_example;
    cfg.mask.train_on_masked = true;
  } else if (name == "str2") {
    cfg.model.first_conv_stride = 2;
  } else if (name == "smooth") {
    cfg.model.activation = Activation::softplus_param;
    cfg.model.softplus_alpha = 2.0;
  } else if (name == "str2_smooth") {
    cfg.model.first_conv_stride = 2;
    cfg.model.activation = Activation::softplus_param;
    cfg.model.softplus_alpha = 2.0;
  } else if (name == "weightnorm") {
    cfg.regularizers.weightnorm_lambda = kWeightNormLambdaDefault;
  } else if (name == "gradnorm") {
    cfg.regularizers.gradnorm_beta = kGradNormBetaDefault;
  } else if (name == "gradalign") {
    cfg.regularizers.gradalign_lambda = kGradAlignLambdaDefault;
  } else if (name == "fast_fgsm") {
    cfg.attack.family = AttackFamily::fast_fgsm;
    cfg.attack.init = AttackInit::uniform_random;
  } else if (name == "fast_fgsm_fixed") {
    cfg.attack.family = AttackFamily::fast_fgsm;
    cfg.attack.init = AttackInit::fixed_per_example;
  } else if (name == "pgd10") {
    cfg.attack.family = AttackFamily::pgd;
    cfg.attack.steps = 10;
    cfg.attack.restarts = 1;
    cfg.attack.init = AttackInit::uniform_random;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw config_error("unknown preset '" + name + "' (known: " + known + ")");
  }
}

std::vector<RunSpec> expanded_runs(const ExperimentSpec& spec) {
  std::vector<RunSpec> all = spec.runs;
  for (const auto& name : spec.baselines) {
    RunSpec rs;
    rs.label = name;
    rs.config = spec.base;
    apply_preset(rs.config, name);
    rs.repeats = spec.baseline_repeats;
    all.push_back(std::move(rs));
  }
  for (auto& rs : all) sync_model_geometry(rs.config, spec.data);
  return all;
}

void validate(const ExperimentSpec& spec) {
  if (spec.name.empty() || spec.name.find('/') != std::string::npos)
    throw config_error("experiment name must be a nonempty path component");
  if (spec.output_dir.empty()) throw config_error("experiment output_dir must be nonempty");
  if (spec.workers < 1) throw config_error("experiment workers must be at least 1");
  if (!spec.baselines.empty() && spec.baseline_repeats < 1)
    throw config_error("baseline_repeats must be at least 1");
  validate(spec.data);
  auto runs = expanded_runs(spec);
  if (runs.empty()) throw config_error("experiment needs at least one run");
  std::vector<std::string> seen;
  for (const auto& rs : runs) {
    if (rs.label.empty() || rs.label.find('/') != std::string::npos ||
        rs.label.find(',') != std::string::npos || rs.label[0] == '.')
      throw config_error("run label '" + rs.label +
                         "' must be a nonempty path component without commas");
    if (std::find(seen.begin(), seen.end(), rs.label) != seen.end())
      throw config_error("duplicate run label '" + rs.label + "'");
    seen.push_back(rs.label);
    if (rs.repeats < 1) throw config_error("run '" + rs.label + "' needs repeats >= 1");
    try {
      validate(rs.config);
    } catch (const config_error& e) {
      throw config_error("run '" + rs.label + "': " + e.what());
    }
  }
}

std::string to_json(const ExperimentSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["data"] = data_to_tree(spec.data);
  j["base"] = json::parse(to_json(spec.base));
  j["runs"] = json::array();
  for (const auto& r : spec.runs)
    j["runs"].push_back(json{{"label", r.label},
                             {"repeats", r.repeats},
                             {"config", json::parse(to_json(r.config))}});
  j["baselines"] = spec.baselines;
  j["baseline_repeats"] = spec.baseline_repeats;
  j["output_dir"] = spec.output_dir;
  j["seed"] = spec.seed;
  j["workers"] = spec.workers;
  return j.dump(2);
}

ExperimentSpec experiment_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw config_error(std::string("bad experiment spec: ") + e.what());
  }
  ExperimentSpec spec;
  try {
    spec.name = j.value("name", spec.name);
    spec.output_dir = j.value("output_dir", spec.output_dir);
    spec.seed = j.value("seed", spec.seed);
    spec.workers = j.value("workers", spec.workers);
    if (j.contains("data")) spec.data = data_from_tree(j.at("data"));
    // Partial trees are filled from the defaults so spec files only need the
    // fields they change.
    json base_tree = json::parse(to_json(TrainConfig{}));
    if (j.contains("base")) base_tree.update(j.at("base"), true);
    spec.base = train_config_from_json(base_tree.dump());
    for (const auto& entry : j.value("runs", json::array())) {
      RunSpec rs;
      rs.label = entry.at("label").get<std::string>();
      rs.repeats = entry.value("repeats", int64_t{1});
      json tree = base_tree;
      if (entry.contains("config")) tree.update(entry.at("config"), true);
      TrainConfig cfg = train_config_from_json(tree.dump());
      if (entry.contains("preset")) apply_preset(cfg, entry.at("preset").get<std::string>());
      if (entry.contains("overrides")) {
        json patched = json::parse(to_json(cfg));
        patched.update(entry.at("overrides"), true);
        cfg = train_config_from_json(patched.dump());
      }
      rs.config = cfg;
      spec.runs.push_back(std::move(rs));
    }
    spec.baselines = j.value("baselines", std::vector<std::string>{});
    spec.baseline_repeats = j.value("baseline_repeats", int64_t{1});
  } catch (const json::exception& e) {
    throw config_error(std::string("bad experiment spec: ") + e.what());
  }
  return spec;
}

uint64_t run_seed(uint64_t experiment_seed, const std::string& label, int64_t repeat) {
  return derive_seed(experiment_seed, {label_hash(label), static_cast<uint64_t>(repeat)});
}

std::vector<SummaryRow> run_experiment(const ExperimentSpec& spec) {
  validate(spec);
  auto runs = expanded_runs(spec);
  DatasetHandle data = load_data(spec.data);
  fs::path exp_dir = fs::path(spec.output_dir) / spec.name;
  make_dirs(exp_dir);
  write_text_file((exp_dir / "spec.json").string(), to_json(spec) + "\n");

  struct Job {
    const RunSpec* run;
    int64_t repeat;
  };
  std::vector<Job> jobs;
  for (const auto& r : runs)
    for (int64_t k = 0; k < r.repeats; ++k) jobs.push_back({&r, k});

  auto exec = [&](const Job& job) {
    fs::path dir = exp_dir / job.run->label / ("rep" + std::to_string(job.repeat));
    // Existing logs are kept, so interrupted sweeps resume where they stopped.
    if (fs::exists(dir / "runlog.json")) return;
    make_dirs(dir);
    TrainConfig cfg = job.run->config;
    cfg.seed = run_seed(spec.seed, job.run->label, job.repeat);
    train(cfg, data, dir.string());
  };

  size_t pool_size = std::min(static_cast<size_t>(spec.workers), jobs.size());
  if (pool_size <= 1) {
    for (const auto& job : jobs) exec(job);
  } else {
    std::atomic<size_t> next{0};
    std::mutex mu;
    std::exception_ptr first;
    auto worker = [&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (first) return;
        }
        try {
          exec(jobs[i]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (size_t t = 0; t < pool_size; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first) std::rethrow_exception(first);
  }

  auto rows = summarize(exp_dir.string());
  write_summary_csv(rows, (exp_dir / "summary.csv").string());
  return rows;
}

std::vector<SummaryRow> summarize(const std::string& experiment_dir) {
  fs::path root(experiment_dir);
  if (!fs::is_directory(root)) throw io_error("no experiment directory at " + experiment_dir);
  std::vector<std::string> labels;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) labels.push_back(entry.path().filename().string());
  std::sort(labels.begin(), labels.end());

  std::vector<SummaryRow> rows;
  for (const auto& label : labels) {
    std::vector<fs::path> logs;
    for (const auto& entry : fs::directory_iterator(root / label))
      if (entry.is_directory() && fs::exists(entry.path() / "runlog.json"))
        logs.push_back(entry.path() / "runlog.json");
    std::sort(logs.begin(), logs.end());

    SummaryRow row;
    row.label = label;
    std::vector<double> clean, robust;
    for (const auto& p : logs) {
      RunLog log = read_runlog_json(p.string());
      ++row.repeats;
      row.collapse_events += static_cast<int64_t>(log.events.size());
      if (log.diverged) {
        ++row.diverged;
        continue;
      }
      clean.push_back(log.final_eval.clean_acc);
      robust.push_back(log.final_eval.robust_acc_mean);
    }
    row.clean_mean = mean_of(clean);
    row.clean_var = sample_var_of(clean);
    row.robust_mean = mean_of(robust);
    row.robust_var = sample_var_of(robust);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "label,repeats,diverged,clean_mean,clean_var,robust_mean,robust_var,collapse_events\n";
  for (const auto& r : rows) {
    out += r.label + ',' + std::to_string(r.repeats) + ',' + std::to_string(r.diverged) + ',' +
           num17(r.clean_mean) + ',' + num17(r.clean_var) + ',' + num17(r.robust_mean) + ',' +
           num17(r.robust_var) + ',' + std::to_string(r.collapse_events) + '\n';
  }
  return out;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
  write_text_file(path, summary_csv(rows));
}

std::vector<std::string> emit_curves(const RunLog& log, const std::string& out_dir) {
  struct Metric {
    const char* name;
    double EpochRecord::* field;
  };
  static const Metric kMetrics[] = {{"clean_acc", &EpochRecord::clean_acc},
                                    {"robust_acc", &EpochRecord::robust_acc},
                                    {"grad_norm", &EpochRecord::grad_norm},
                                    {"loss_main", &EpochRecord::loss_main},
                                    {"loss_reg", &EpochRecord::loss_reg}};
  make_dirs(out_dir);
  std::vector<std::string> paths;
  for (const auto& m : kMetrics) {
    fs::path p = fs::path(out_dir) / (std::string("curve_") + m.name + ".csv");
    std::string text = std::string("epoch,") + m.name + ",collapse\n";
    for (const auto& r : log.epochs)
      text += std::to_string(r.epoch) + ',' + num17(r.*(m.field)) + ',' +
              (r.collapse ? '1' : '0') + '\n';
    write_text_file(p.string(), text);
    paths.push_back(p.string());
  }
  return paths;
}

double parse_ratio(const std::string& text) {
  auto slash = text.find('/');
  if (slash == std::string::npos) return parse_number(text, text);
  double num = parse_number(text.substr(0, slash), text);
  double den = parse_number(text.substr(slash + 1), text);
  if (den == 0.0) throw config_error("zero denominator in '" + text + "'");
  return num / den;
}

namespace {

std::string out_root() {
  const char* env = std::getenv("ATLAB_OUT_ROOT");
  return env && *env ? env : "runs";
}

struct DataFlags {
  std::string kind = "synth";
  std::string dir;
  int64_t n = 5000;
  int64_t classes = 10;
  int64_t image_size = 16;
  uint64_t seed = 77;
};

void add_data_flags(CLI::App* cmd, DataFlags& f) {
  cmd->add_option("--data", f.kind, "dataset: synth, cifar10, cifar100");
  cmd->add_option("--data-dir", f.dir, "directory with the CIFAR binary batches");
  cmd->add_option("--synth-n", f.n, "synthetic train-split size");
  cmd->add_option("--synth-classes", f.classes, "synthetic class count");
  cmd->add_option("--synth-size", f.image_size, "synthetic image side length");
  cmd->add_option("--synth-seed", f.seed, "synthetic generator seed");
}

DataSpec resolve_data(const DataFlags& f) {
  DataSpec d;
  d.kind = f.kind;
  d.dir = f.dir;
  d.n = f.n;
  d.classes = f.classes;
  d.image_size = f.image_size;
  d.seed = f.seed;
  if (d.kind == "cifar10" && d.dir.empty()) {
    const char* env = std::getenv("ATLAB_CIFAR10_DIR");
    if (env && *env) d.dir = env;
  }
  return d;
}

struct TrainFlags {
  std::string preset;
  int64_t epochs = 0;
  int64_t batch_size = 0;
  double lr = 0.0;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::vector<int64_t> lr_decay_epochs;
  double lr_decay_factor = 0.0;
  std::string attack;
  std::string epsilon;
  std::string step_size;
  int64_t steps = 0;
  int64_t restarts = 0;
  std::string init;
  double mask_ratio = 0.0;
  std::string mask_mode;
  bool train_on_masked = true;
  double gradnorm_beta = 0.0;
  double weightnorm_lambda = 0.0;
  double gradalign_lambda = 0.0;
  bool flip = false;
  bool crop = false;
  int64_t pad = 0;
  std::string arch;
  int64_t stride = 0;
  std::string activation;
  double softplus_alpha = 0.0;
  std::string eval_epsilon;
  int64_t eval_repeats = 0;
  int64_t eval_size = 0;
  int64_t probe_size = 0;
  uint64_t seed = 0;
  double drop_from = 0.0;
  double drop_to = 0.0;
  double spike_ratio = 0.0;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  std::string presets;
  for (const auto& n : preset_names()) presets += (presets.empty() ? "" : ", ") + n;
  cmd->add_option("--preset", f.preset, "trick preset applied first: " + presets);
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--lr", f.lr, "initial learning rate");
  cmd->add_option("--momentum", f.momentum);
  cmd->add_option("--weight-decay", f.weight_decay);
  cmd->add_option("--lr-decay-epochs", f.lr_decay_epochs, "comma-separated epoch list")
      ->delimiter(',');
  cmd->add_option("--lr-decay-factor", f.lr_decay_factor);
  cmd->add_option("--attack", f.attack, "none, fgsm, pgd, fast_fgsm");
  cmd->add_option("--epsilon", f.epsilon, "linf radius, rational accepted (8/255)");
  cmd->add_option("--step-size", f.step_size, "attack step, 0 = family default");
  cmd->add_option("--steps", f.steps, "attack iterations");
  cmd->add_option("--restarts", f.restarts, "attack restarts");
  cmd->add_option("--init", f.init, "zero, uniform_random, fixed_per_example");
  cmd->add_option("--mask-ratio", f.mask_ratio, "masked pixel fraction");
  cmd->add_option("--mask-mode", f.mask_mode, "off, random_per_step, fixed_per_example");
  cmd->add_flag("--train-on-masked,!--no-train-on-masked", f.train_on_masked,
                "train on the masked image rather than restoring unmasked pixels");
  cmd->add_option("--gradnorm-beta", f.gradnorm_beta);
  cmd->add_option("--weightnorm-lambda", f.weightnorm_lambda);
  cmd->add_option("--gradalign-lambda", f.gradalign_lambda);
  cmd->add_flag("--flip,!--no-flip", f.flip, "random horizontal flip");
  cmd->add_flag("--crop,!--no-crop", f.crop, "random padded crop");
  cmd->add_option("--pad", f.pad, "crop padding");
  cmd->add_option("--arch", f.arch, "small_cnn, preact_resnet_lite, patchify_stem_net");
  cmd->add_option("--stride", f.stride, "first conv stride");
  cmd->add_option("--activation", f.activation,
                  "relu, gelu, silu, elu, softplus_param");
  cmd->add_option("--softplus-alpha", f.softplus_alpha);
  cmd->add_option("--eval-epsilon", f.eval_epsilon, "final evaluation radius");
  cmd->add_option("--eval-repeats", f.eval_repeats);
  cmd->add_option("--eval-size", f.eval_size, "0 = whole test split");
  cmd->add_option("--probe-size", f.probe_size, "per-epoch probe examples, 0 disables");
  cmd->add_option("--seed", f.seed);
  cmd->add_option("--drop-from", f.drop_from, "collapse threshold: robust accuracy before");
  cmd->add_option("--drop-to", f.drop_to, "collapse threshold: robust accuracy after");
  cmd->add_option("--spike-ratio", f.spike_ratio, "collapse threshold: grad-norm ratio");
}

void apply_train_flags(const CLI::App* cmd, const TrainFlags& f, TrainConfig& cfg) {
  if (cmd->count("--preset")) apply_preset(cfg, f.preset);
  if (cmd->count("--epochs")) cfg.epochs = f.epochs;
  if (cmd->count("--batch-size")) cfg.batch_size = f.batch_size;
  if (cmd->count("--lr")) cfg.lr = f.lr;
  if (cmd->count("--momentum")) cfg.momentum = f.momentum;
  if (cmd->count("--weight-decay")) cfg.weight_decay = f.weight_decay;
  if (cmd->count("--lr-decay-epochs")) cfg.lr_decay_epochs = f.lr_decay_epochs;
  if (cmd->count("--lr-decay-factor")) cfg.lr_decay_factor = f.lr_decay_factor;
  if (cmd->count("--attack")) cfg.attack.family = attack_family_from_string(f.attack);
  if (cmd->count("--epsilon")) {
    cfg.attack.epsilon = parse_ratio(f.epsilon);
    // The evaluation radius follows the training radius unless pinned.
    if (!cmd->count("--eval-epsilon")) cfg.eval_attack.epsilon = cfg.attack.epsilon;
  }
  if (cmd->count("--eval-epsilon")) cfg.eval_attack.epsilon = parse_ratio(f.eval_epsilon);
  if (cmd->count("--step-size")) cfg.attack.step_size = parse_ratio(f.step_size);
  if (cmd->count("--steps")) cfg.attack.steps = f.steps;
  if (cmd->count("--restarts")) cfg.attack.restarts = f.restarts;
  if (cmd->count("--init")) cfg.attack.init = attack_init_from_string(f.init);
  if (cmd->count("--mask-ratio")) cfg.mask.ratio = f.mask_ratio;
  if (cmd->count("--mask-mode")) cfg.mask.mode = mask_mode_from_string(f.mask_mode);
  if (cmd->count("--train-on-masked") || cmd->count("--no-train-on-masked"))
    cfg.mask.train_on_masked = f.train_on_masked;
  if (cmd->count("--gradnorm-beta")) cfg.regularizers.gradnorm_beta = f.gradnorm_beta;
  if (cmd->count("--weightnorm-lambda")) cfg.regularizers.weightnorm_lambda = f.weightnorm_lambda;
  if (cmd->count("--gradalign-lambda")) cfg.regularizers.gradalign_lambda = f.gradalign_lambda;
  if (cmd->count("--flip") || cmd->count("--no-flip")) cfg.augment.random_flip = f.flip;
  if (cmd->count("--crop") || cmd->count("--no-crop")) cfg.augment.random_crop = f.crop;
  if (cmd->count("--pad")) cfg.augment.pad = f.pad;
  if (cmd->count("--arch")) cfg.model.arch = arch_from_string(f.arch);
  if (cmd->count("--stride")) cfg.model.first_conv_stride = f.stride;
  if (cmd->count("--activation")) cfg.model.activation = activation_from_string(f.activation);
  if (cmd->count("--softplus-alpha")) cfg.model.softplus_alpha = f.softplus_alpha;
  if (cmd->count("--eval-repeats")) cfg.eval_repeats = f.eval_repeats;
  if (cmd->count("--eval-size")) cfg.eval_size = f.eval_size;
  if (cmd->count("--probe-size")) cfg.probe_size = f.probe_size;
  if (cmd->count("--seed")) cfg.seed = f.seed;
  if (cmd->count("--drop-from")) cfg.collapse.drop_from = f.drop_from;
  if (cmd->count("--drop-to")) cfg.collapse.drop_to = f.drop_to;
  if (cmd->count("--spike-ratio")) cfg.collapse.spike_ratio = f.spike_ratio;
}

int do_train(const CLI::App* cmd, const TrainFlags& tf, const DataFlags& df,
             const std::string& config_path, const std::string& out,
             const std::string& label, bool print_config) {
  TrainConfig cfg;
  if (!config_path.empty()) {
    json tree = json::parse(to_json(TrainConfig{}));
    json file;
    try {
      file = json::parse(read_text_file(config_path));
    } catch (const json::exception& e) {
      throw config_error("bad config file " + config_path + ": " + e.what());
    }
    tree.update(file, true);
    cfg = train_config_from_json(tree.dump());
  }
  apply_train_flags(cmd, tf, cfg);
  DataSpec data_spec = resolve_data(df);
  validate(data_spec);
  sync_model_geometry(cfg, data_spec);
  if (print_config) {
    json j{{"data", data_to_tree(data_spec)}, {"train", json::parse(to_json(cfg))}};
    std::printf("%s\n", j.dump(2).c_str());
    return 0;
  }
  validate(cfg);
  DatasetHandle data = load_data(data_spec);
  fs::path dir = out.empty() ? fs::path(out_root()) / label : fs::path(out);
  make_dirs(dir);
  RunLog log = train(cfg, data, dir.string());
  if (log.diverged) {
    std::printf("diverged at epoch %lld: %s\n", static_cast<long long>(log.divergence_epoch),
                log.divergence_note.c_str());
    std::printf("artifacts in %s\n", dir.string().c_str());
    return 3;
  }
  std::printf("final clean %.4f  robust %.4f (var %.3g)  collapse_events %zu\n",
              log.final_eval.clean_acc, log.final_eval.robust_acc_mean,
              log.final_eval.robust_acc_var, log.events.size());
  std::printf("artifacts in %s\n", dir.string().c_str());
  return 0;
}

int do_eval(const CLI::App* cmd, const TrainFlags& tf, const DataFlags& df,
            const std::string& checkpoint, int64_t repeats, int64_t eval_size,
            int64_t batch_size, uint64_t seed) {
  Model<float> model = load_checkpoint<float>(checkpoint);
  DataSpec data_spec = resolve_data(df);
  validate(data_spec);
  DatasetHandle data = load_data(data_spec);
  AttackConfig atk = pgd_eval_attack(8.0 / 255.0);
  if (cmd->count("--attack")) atk.family = attack_family_from_string(tf.attack);
  if (cmd->count("--epsilon")) atk.epsilon = parse_ratio(tf.epsilon);
  if (cmd->count("--step-size")) atk.step_size = parse_ratio(tf.step_size);
  if (cmd->count("--steps")) atk.steps = tf.steps;
  if (cmd->count("--restarts")) atk.restarts = tf.restarts;
  if (cmd->count("--init")) atk.init = attack_init_from_string(tf.init);
  validate(atk);
  DataSplit split = eval_size > 0 && eval_size < data.test.size()
                        ? data.test.first_n(eval_size)
                        : data.test;
  FinalEval fe = evaluate(model, split, atk, repeats, seed, batch_size);
  std::printf("clean %.17g\nrobust_mean %.17g\nrobust_var %.17g\n", fe.clean_acc,
              fe.robust_acc_mean, fe.robust_acc_var);
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"desk-scale adversarial training laboratory"};
  app.require_subcommand(1);

  auto* cmd_train = app.add_subcommand("train", "train one model and write its artifacts");
  TrainFlags tf;
  DataFlags df;
  std::string config_path, out, label = "run";
  bool print_config = false;
  cmd_train->add_option("--config", config_path, "JSON config file, fields may be partial");
  add_train_flags(cmd_train, tf);
  add_data_flags(cmd_train, df);
  cmd_train->add_option("--out", out, "artifacts directory (default <out root>/<label>)");
  cmd_train->add_option("--label", label, "run label under the output root");
  cmd_train->add_flag("--print-config", print_config,
                      "print the fully resolved config and exit");

  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint under an attack");
  TrainFlags ef;
  DataFlags edf;
  std::string checkpoint;
  int64_t eval_repeats = 3, eval_size = 0, eval_batch = 256;
  uint64_t eval_seed = 0;
  cmd_eval->add_option("--checkpoint", checkpoint, "checkpoint.bin path")->required();
  add_data_flags(cmd_eval, edf);
  cmd_eval->add_option("--attack", ef.attack, "none, fgsm, pgd, fast_fgsm");
  cmd_eval->add_option("--epsilon", ef.epsilon, "linf radius, rational accepted");
  cmd_eval->add_option("--step-size", ef.step_size);
  cmd_eval->add_option("--steps", ef.steps);
  cmd_eval->add_option("--restarts", ef.restarts);
  cmd_eval->add_option("--init", ef.init);
  cmd_eval->add_option("--repeats", eval_repeats, "attack repeats for mean and variance");
  cmd_eval->add_option("--eval-size", eval_size, "0 = whole test split");
  cmd_eval->add_option("--batch-size", eval_batch);
  cmd_eval->add_option("--seed", eval_seed);

  auto* cmd_sweep = app.add_subcommand("sweep", "run an experiment spec end to end");
  std::string spec_path, sweep_out;
  int64_t sweep_workers = 0;
  bool print_spec = false;
  cmd_sweep->add_option("--spec", spec_path, "experiment spec JSON")->required();
  cmd_sweep->add_option("--out", sweep_out, "override the spec output_dir");
  cmd_sweep->add_option("--workers", sweep_workers, "override the spec worker count");
  cmd_sweep->add_flag("--print-config", print_spec,
                      "print the fully resolved spec and exit");

  auto* cmd_summarize = app.add_subcommand("summarize", "rebuild a summary from stored logs");
  std::string sum_dir, sum_csv;
  cmd_summarize->add_option("--dir", sum_dir, "experiment directory")->required();
  cmd_summarize->add_option("--csv", sum_csv, "write here instead of stdout");

  auto* cmd_curves = app.add_subcommand("curves", "emit plot-ready curve files from a log");
  std::string log_path, curves_out;
  cmd_curves->add_option("--log", log_path, "runlog.json path")->required();
  cmd_curves->add_option("--out", curves_out, "directory for the curve files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (cmd_train->parsed())
      return do_train(cmd_train, tf, df, config_path, out, label, print_config);
    if (cmd_eval->parsed())
      return do_eval(cmd_eval, ef, edf, checkpoint, eval_repeats, eval_size, eval_batch,
                     eval_seed);
    if (cmd_sweep->parsed()) {
      ExperimentSpec spec = experiment_from_json(read_text_file(spec_path));
      if (!sweep_out.empty()) spec.output_dir = sweep_out;
      if (cmd_sweep->count("--workers")) spec.workers = sweep_workers;
      if (print_spec) {
        std::printf("%s\n", to_json(spec).c_str());
        return 0;
      }
      auto rows = run_experiment(spec);
      std::fputs(summary_csv(rows).c_str(), stdout);
      for (const auto& r : rows)
        if (r.diverged > 0) return 3;
      return 0;
    }
    if (cmd_summarize->parsed()) {
      auto rows = summarize(sum_dir);
      if (sum_csv.empty())
        std::fputs(summary_csv(rows).c_str(), stdout);
      else
        write_summary_csv(rows, sum_csv);
      return 0;
    }
    if (cmd_curves->parsed()) {
      RunLog log = read_runlog_json(log_path);
      for (const auto& p : emit_curves(log, curves_out)) std::printf("%s\n", p.c_str());
      return 0;
    }
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}

}  // namespace atlab
