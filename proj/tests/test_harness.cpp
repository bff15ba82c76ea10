#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "atlab/config.hpp"
#include "atlab/harness.hpp"

namespace {

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) : path("/tmp/atlab_harness_" + name) {
    REQUIRE(std::system(("rm -rf " + path + " && mkdir -p " + path).c_str()) == 0);
  }
  ~TempDir() { std::system(("rm -rf " + path).c_str()); }
};

bool exists(const std::string& path) {
  if (FILE* f = std::fopen(path.c_str(), "rb")) {
    std::fclose(f);
    return true;
  }
  return false;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(bool(is));
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// smallest config that still trains: one epoch on 8x8 images, no probes
atlab::TrainConfig quick_base() {
  atlab::TrainConfig cfg;
  cfg.model.in_h = 8;
  cfg.model.in_w = 8;
  cfg.model.num_classes = 2;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  cfg.lr_decay_epochs = {};
  cfg.eval_attack.steps = 2;
  cfg.eval_attack.restarts = 1;
  cfg.eval_repeats = 1;
  cfg.eval_size = 16;
  cfg.probe_size = 0;
  return cfg;
}

atlab::ExperimentSpec quick_spec(const std::string& out_dir) {
  atlab::ExperimentSpec spec;
  spec.name = "exp";
  spec.data = atlab::DataSpec{"synth", "", 64, 2, 8, 77};
  spec.base = quick_base();
  spec.runs.push_back({"alpha", quick_base(), 2});
  atlab::RunSpec beta{"beta", quick_base(), 2};
  atlab::apply_preset(beta.config, "str2");
  spec.runs.push_back(beta);
  spec.output_dir = out_dir;
  spec.seed = 11;
  return spec;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "atlab");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return atlab::cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("presets") {
  const atlab::TrainConfig base;

  SUBCASE("each name changes the documented fields") {
    auto with = [&](const std::string& name) {
      atlab::TrainConfig cfg = base;
      atlab::apply_preset(cfg, name);
      return cfg;
    };
    CHECK(with("vanilla") == base);
    auto m = with("fgsm_mask");
    CHECK(m.mask.ratio == 0.3);
    CHECK(m.mask.mode == atlab::MaskMode::random_per_step);
    CHECK(with("fgsm_mask_fixed").mask.mode == atlab::MaskMode::fixed_per_example);
    CHECK(with("str2").model.first_conv_stride == 2);
    auto s = with("smooth");
    CHECK(s.model.activation == atlab::Activation::softplus_param);
    CHECK(s.model.softplus_alpha == 2.0);
    auto ss = with("str2_smooth");
    CHECK(ss.model.first_conv_stride == 2);
    CHECK(ss.model.softplus_alpha == 2.0);
    CHECK(with("weightnorm").regularizers.weightnorm_lambda == atlab::kWeightNormLambdaDefault);
    CHECK(with("gradnorm").regularizers.gradnorm_beta == atlab::kGradNormBetaDefault);
    CHECK(with("gradalign").regularizers.gradalign_lambda == atlab::kGradAlignLambdaDefault);
    auto ff = with("fast_fgsm");
    CHECK(ff.attack.family == atlab::AttackFamily::fast_fgsm);
    CHECK(ff.attack.init == atlab::AttackInit::uniform_random);
    CHECK(with("fast_fgsm_fixed").attack.init == atlab::AttackInit::fixed_per_example);
    auto p = with("pgd10");
    CHECK(p.attack.family == atlab::AttackFamily::pgd);
    CHECK(p.attack.steps == 10);
  }

  SUBCASE("every listed preset validates on the default config") {
    for (const auto& name : atlab::preset_names()) {
      atlab::TrainConfig cfg = base;
      atlab::apply_preset(cfg, name);
      CHECK_NOTHROW(atlab::validate(cfg));
    }
  }

  SUBCASE("unknown preset is rejected") {
    atlab::TrainConfig cfg = base;
    CHECK_THROWS_AS(atlab::apply_preset(cfg, "turbo"), atlab::config_error);
  }
}

TEST_CASE("data spec") {
  SUBCASE("validation") {
    CHECK_NOTHROW(atlab::validate(atlab::DataSpec{}));
    atlab::DataSpec bad_kind;
    bad_kind.kind = "imagenet";
    CHECK_THROWS_AS(atlab::validate(bad_kind), atlab::config_error);
    atlab::DataSpec no_dir;
    no_dir.kind = "cifar10";
    CHECK_THROWS_AS(atlab::validate(no_dir), atlab::config_error);
    atlab::DataSpec tiny;
    tiny.n = 3;
    tiny.classes = 10;
    CHECK_THROWS_AS(atlab::validate(tiny), atlab::config_error);
  }

  SUBCASE("synthetic load matches the generator parameters") {
    atlab::DataSpec d{"synth", "", 40, 4, 8, 3};
    auto data = atlab::load_data(d);
    CHECK(data.train.size() == 40);
    CHECK(data.train.num_classes() == 4);
    CHECK(data.train.height() == 8);
  }

  SUBCASE("geometry sync never touches the disk") {
    atlab::TrainConfig cfg;
    atlab::sync_model_geometry(cfg, atlab::DataSpec{"synth", "", 100, 5, 12, 0});
    CHECK(cfg.model.in_h == 12);
    CHECK(cfg.model.num_classes == 5);
    atlab::DataSpec c100;
    c100.kind = "cifar100";
    c100.dir = "/does/not/exist";
    atlab::sync_model_geometry(cfg, c100);
    CHECK(cfg.model.in_h == 32);
    CHECK(cfg.model.num_classes == 100);
  }
}

TEST_CASE("experiment spec json") {
  SUBCASE("round trip preserves the resolved spec") {
    auto spec = quick_spec("/tmp/out");
    spec.baselines = {"vanilla", "weightnorm"};
    spec.baseline_repeats = 3;
    auto back = atlab::experiment_from_json(atlab::to_json(spec));
    CHECK(back == spec);
  }

  SUBCASE("partial base, preset, and overrides compose in order") {
    const char* text = R"({
      "name": "grid",
      "seed": 9,
      "data": {"kind": "synth", "n": 50, "classes": 2, "image_size": 8},
      "base": {"epochs": 3, "attack": {"epsilon": 0.0627450980392157}},
      "runs": [
        {"label": "m", "preset": "fgsm_mask", "repeats": 2,
         "overrides": {"mask": {"ratio": 0.5}}}
      ]
    })";
    auto spec = atlab::experiment_from_json(text);
    CHECK(spec.base.epochs == 3);
    CHECK(spec.base.batch_size == 128);  // untouched default
    REQUIRE(spec.runs.size() == 1);
    const auto& cfg = spec.runs[0].config;
    CHECK(cfg.epochs == 3);
    CHECK(cfg.attack.epsilon == doctest::Approx(16.0 / 255.0));
    CHECK(cfg.mask.mode == atlab::MaskMode::random_per_step);  // from the preset
    CHECK(cfg.mask.ratio == 0.5);                              // override wins
    CHECK(spec.runs[0].repeats == 2);
  }

  SUBCASE("a str2_smooth run resolves to stride 2 with softplus alpha 2") {
    const char* text = R"({
      "name": "combo",
      "runs": [{"label": "str2_smooth", "preset": "str2_smooth"}]
    })";
    auto spec = atlab::experiment_from_json(text);
    REQUIRE(spec.runs.size() == 1);
    CHECK(spec.runs[0].config.model.first_conv_stride == 2);
    CHECK(spec.runs[0].config.model.activation == atlab::Activation::softplus_param);
    CHECK(spec.runs[0].config.model.softplus_alpha == 2.0);
  }

  SUBCASE("malformed input is a config error") {
    CHECK_THROWS_AS(atlab::experiment_from_json("{"), atlab::config_error);
    CHECK_THROWS_AS(atlab::experiment_from_json(R"({"runs": [{"repeats": 1}]})"),
                    atlab::config_error);
  }

  SUBCASE("validation rejects duplicate labels and bad run configs") {
    auto spec = quick_spec("/tmp/out");
    spec.runs[1].label = "alpha";
    CHECK_THROWS_AS(atlab::validate(spec), atlab::config_error);

    spec = quick_spec("/tmp/out");
    spec.baselines = {"str2"};  // collides with an explicit run after expansion
    spec.runs[1].label = "str2";
    CHECK_THROWS_AS(atlab::validate(spec), atlab::config_error);

    spec = quick_spec("/tmp/out");
    spec.runs[0].config.epochs = 0;
    try {
      atlab::validate(spec);
      FAIL("expected config_error");
    } catch (const atlab::config_error& e) {
      CHECK(std::string(e.what()).find("alpha") != std::string::npos);
    }

    spec = quick_spec("/tmp/out");
    spec.runs.clear();
    spec.baselines.clear();
    CHECK_THROWS_AS(atlab::validate(spec), atlab::config_error);
  }
}

TEST_CASE("run seeds") {
  CHECK(atlab::run_seed(7, "a", 0) == atlab::run_seed(7, "a", 0));
  CHECK(atlab::run_seed(7, "a", 0) != atlab::run_seed(7, "a", 1));
  CHECK(atlab::run_seed(7, "a", 0) != atlab::run_seed(7, "b", 0));
  CHECK(atlab::run_seed(7, "a", 0) != atlab::run_seed(8, "a", 0));
}

TEST_CASE("experiment execution") {
  TempDir tmp("exp");
  auto spec = quick_spec(tmp.path);
  auto rows = atlab::run_experiment(spec);

  SUBCASE("two runs times two repeats leave four logs and two summary rows") {
    for (const char* label : {"alpha", "beta"})
      for (const char* rep : {"rep0", "rep1"})
        CHECK(exists(tmp.path + "/exp/" + label + "/" + rep + "/runlog.json"));
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].label == "alpha");
    CHECK(rows[1].label == "beta");
    CHECK(rows[0].repeats == 2);
    CHECK(rows[0].diverged == 0);
    CHECK(exists(tmp.path + "/exp/spec.json"));
    CHECK(exists(tmp.path + "/exp/summary.csv"));
    CHECK(slurp(tmp.path + "/exp/summary.csv") == atlab::summary_csv(rows));
    auto stored = atlab::experiment_from_json(slurp(tmp.path + "/exp/spec.json"));
    CHECK(stored == spec);
  }

  SUBCASE("summaries rebuild from disk without touching the logs") {
    std::map<std::string, std::string> before;
    for (const char* label : {"alpha", "beta"})
      for (const char* rep : {"rep0", "rep1"}) {
        std::string p = tmp.path + "/exp/" + label + "/" + rep + "/runlog.json";
        before[p] = slurp(p);
      }
    auto again = atlab::summarize(tmp.path + "/exp");
    CHECK(again == rows);
    // a second full pass finds every log present and retrains nothing
    auto resumed = atlab::run_experiment(spec);
    CHECK(resumed == rows);
    for (const auto& [p, bytes] : before) CHECK(slurp(p) == bytes);
  }

  SUBCASE("stored logs carry their provenance") {
    auto log = atlab::read_runlog_json(tmp.path + "/exp/beta/rep1/runlog.json");
    auto cfg = atlab::train_config_from_json(log.config_json);
    CHECK(cfg.seed == atlab::run_seed(spec.seed, "beta", 1));
    CHECK(cfg.model.first_conv_stride == 2);
    // the embedded config alone reproduces the run
    auto rerun = atlab::train(cfg, atlab::load_data(spec.data));
    CHECK(atlab::same_trajectory(rerun, log));
  }

  SUBCASE("divergent and missing repeats are accounted, not averaged") {
    atlab::RunLog bad = atlab::read_runlog_json(tmp.path + "/exp/alpha/rep0/runlog.json");
    bad.diverged = true;
    bad.divergence_epoch = 0;
    bad.final_eval = atlab::FinalEval{};
    REQUIRE(std::system(("mkdir -p " + tmp.path + "/exp/alpha/rep2").c_str()) == 0);
    atlab::write_runlog_json(bad, tmp.path + "/exp/alpha/rep2/runlog.json");
    REQUIRE(std::system(("mkdir -p " + tmp.path + "/exp/alpha/rep3").c_str()) == 0);

    auto again = atlab::summarize(tmp.path + "/exp");
    REQUIRE(again.size() == 2);
    CHECK(again[0].repeats == 3);   // rep3 has no log and does not count
    CHECK(again[0].diverged == 1);
    auto a0 = atlab::read_runlog_json(tmp.path + "/exp/alpha/rep0/runlog.json");
    auto a1 = atlab::read_runlog_json(tmp.path + "/exp/alpha/rep1/runlog.json");
    double want = (a0.final_eval.clean_acc + a1.final_eval.clean_acc) / 2.0;
    CHECK(again[0].clean_mean == doctest::Approx(want));
  }
}

TEST_CASE("curve files") {
  TempDir tmp("curves");
  atlab::RunLog log;
  log.config_json = "{}";
  for (int64_t e = 0; e < 30; ++e) {
    atlab::EpochRecord r;
    r.epoch = e;
    r.clean_acc = 0.5 + 0.01 * static_cast<double>(e);
    r.robust_acc = e < 20 ? 0.3 : 0.0;
    r.grad_norm = e == 20 ? 40.0 : 1.0 / 3.0;
    r.collapse = e == 20;
    log.epochs.push_back(r);
  }

  auto paths = atlab::emit_curves(log, tmp.path + "/a");
  REQUIRE(paths.size() == 5);

  SUBCASE("one row per epoch plus a header") {
    std::string robust = slurp(tmp.path + "/a/curve_robust_acc.csv");
    int lines = 0;
    for (char c : robust) lines += c == '\n';
    CHECK(lines == 31);
    CHECK(robust.rfind("epoch,robust_acc,collapse\n", 0) == 0);
  }

  SUBCASE("the spike epoch stays flagged in the grad-norm curve") {
    std::string gnorm = slurp(tmp.path + "/a/curve_grad_norm.csv");
    CHECK(gnorm.find("20,40,1\n") != std::string::npos);
    CHECK(gnorm.find("19,0.33333333333333331,0\n") != std::string::npos);
  }

  SUBCASE("identical logs emit identical bytes") {
    atlab::emit_curves(log, tmp.path + "/b");
    for (const char* name :
         {"curve_clean_acc.csv", "curve_robust_acc.csv", "curve_grad_norm.csv",
          "curve_loss_main.csv", "curve_loss_reg.csv"})
      CHECK(slurp(tmp.path + "/a/" + name) == slurp(tmp.path + "/b/" + name));
  }
}

TEST_CASE("ratio parsing") {
  CHECK(atlab::parse_ratio("8/255") == 8.0 / 255.0);
  CHECK(atlab::parse_ratio("2/255") == 2.0 / 255.0);
  CHECK(atlab::parse_ratio("0.5") == 0.5);
  CHECK(atlab::parse_ratio("1e-2") == 0.01);
  for (const char* bad : {"", "8/", "/3", "abc", "1/0", "1/x"})
    CHECK_THROWS_AS(atlab::parse_ratio(bad), atlab::config_error);
}

TEST_CASE("cli exit codes") {
  SUBCASE("print-config succeeds without running") {
    CHECK(run_cli({"train", "--preset", "str2", "--print-config"}) == 0);
  }

  SUBCASE("config errors exit 2") {
    CHECK(run_cli({"train", "--epochs", "0", "--print-config"}) == 0);  // printing skips checks
    CHECK(run_cli({"train", "--epochs", "0"}) == 2);
    CHECK(run_cli({"train", "--epsilon", "8/0", "--print-config"}) == 2);
    CHECK(run_cli({"train", "--data", "imagenet"}) == 2);
  }

  SUBCASE("parse errors exit 2") {
    CHECK(run_cli({}) == 2);
    CHECK(run_cli({"frobnicate"}) == 2);
    CHECK(run_cli({"eval"}) == 2);  // missing required --checkpoint
  }

  SUBCASE("missing artifacts exit 2") {
    CHECK(run_cli({"summarize", "--dir", "/tmp/atlab_harness_not_there"}) == 2);
    CHECK(run_cli({"curves", "--log", "/tmp/atlab_harness_not_there.json", "--out",
                   "/tmp/atlab_harness_curves_out"}) == 2);
  }

  SUBCASE("divergence exits 3") {
    TempDir tmp("diverge");
    CHECK(run_cli({"train", "--synth-n", "64", "--synth-classes", "2", "--synth-size", "8",
                   "--epochs", "2", "--batch-size", "32", "--lr-decay-epochs", "",
                   "--lr", "1e30", "--eval-size", "16", "--eval-repeats", "1",
                   "--probe-size", "0", "--out", tmp.path + "/run"}) == 3);
    CHECK(exists(tmp.path + "/run/runlog.json"));
  }

  SUBCASE("train, summarize, and curves verbs complete") {
    TempDir tmp("verbs");
    CHECK(run_cli({"train", "--synth-n", "64", "--synth-classes", "2", "--synth-size", "8",
                   "--epochs", "1", "--batch-size", "32", "--lr-decay-epochs", "",
                   "--attack", "none", "--eval-size", "16", "--eval-repeats", "1",
                   "--probe-size", "0", "--out", tmp.path + "/solo"}) == 0);
    CHECK(run_cli({"eval", "--checkpoint", tmp.path + "/solo/checkpoint.bin", "--synth-n",
                   "64", "--synth-classes", "2", "--synth-size", "8", "--attack", "none",
                   "--repeats", "1", "--eval-size", "16"}) == 0);
    CHECK(run_cli({"curves", "--log", tmp.path + "/solo/runlog.json", "--out",
                   tmp.path + "/solo/curves"}) == 0);
    CHECK(exists(tmp.path + "/solo/curves/curve_loss_main.csv"));
  }
}
