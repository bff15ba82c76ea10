#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atlab/nn.hpp>
#include <atlab/ops.hpp>

#include "gradcheck.hpp"
#include "oracle.hpp"

using atlab::Activation;
using atlab::Arch;
using atlab::ModelConfig;
using atlab::ModelD;
using atlab::Shape;
using atlab::TensorD;

namespace {

ModelConfig tiny_config(Arch arch) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.in_channels = 2;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.num_classes = 3;
  return cfg;
}

}  // namespace

TEST_CASE("batch norm") {
  std::mt19937_64 rng(3);
  SUBCASE("train mode normalizes to zero mean and unit variance") {
    auto vals = oracle::random_vec(rng, 2 * 3 * 4 * 4, -2.0, 5.0);
    TensorD x(Shape{2, 3, 4, 4}, vals);
    TensorD gamma = TensorD::ones(Shape{3}), beta = TensorD::zeros(Shape{3});
    TensorD rm = TensorD::zeros(Shape{3}), rv = TensorD::ones(Shape{3});
    auto y = atlab::batchnorm(x, gamma, beta, rm, rv, true, false);
    for (int64_t c = 0; c < 3; ++c) {
      double mean = 0.0, sq = 0.0;
      for (int64_t n = 0; n < 2; ++n)
        for (int64_t i = 0; i < 16; ++i) {
          const double v = y[(n * 3 + c) * 16 + i];
          mean += v;
          sq += v * v;
        }
      mean /= 32.0;
      sq /= 32.0;
      CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
      CHECK(sq - mean * mean == doctest::Approx(1.0).epsilon(1e-3));  // eps skews slightly
    }
  }
  SUBCASE("running statistics blend batch statistics at momentum 0.1") {
    auto vals = oracle::random_vec(rng, 1 * 2 * 2 * 2, 0.0, 4.0);
    TensorD x(Shape{1, 2, 2, 2}, vals);
    TensorD gamma = TensorD::ones(Shape{2}), beta = TensorD::zeros(Shape{2});
    TensorD rm = TensorD::zeros(Shape{2}), rv = TensorD::ones(Shape{2});
    atlab::batchnorm(x, gamma, beta, rm, rv, true, true);
    for (int64_t c = 0; c < 2; ++c) {
      double mu = 0.0;
      for (int64_t i = 0; i < 4; ++i) mu += vals[static_cast<size_t>(c * 4 + i)];
      mu /= 4.0;
      double var = 0.0;
      for (int64_t i = 0; i < 4; ++i) {
        const double d = vals[static_cast<size_t>(c * 4 + i)] - mu;
        var += d * d;
      }
      var /= 3.0;  // unbiased for the running estimate
      CHECK(rm[c] == doctest::Approx(0.1 * mu).epsilon(1e-12));
      CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-12));
    }
  }
  SUBCASE("frozen-statistics forward leaves the buffers untouched") {
    TensorD x(Shape{2, 2, 2, 2}, oracle::random_vec(rng, 16));
    TensorD gamma = TensorD::ones(Shape{2}), beta = TensorD::zeros(Shape{2});
    TensorD rm = TensorD::zeros(Shape{2}), rv = TensorD::ones(Shape{2});
    atlab::batchnorm(x, gamma, beta, rm, rv, true, false);
    for (int64_t c = 0; c < 2; ++c) {
      CHECK(rm[c] == 0.0);
      CHECK(rv[c] == 1.0);
    }
  }
  SUBCASE("eval mode applies running statistics as constants") {
    TensorD x(Shape{1, 1, 1, 2}, {3.0, 5.0});
    TensorD gamma(Shape{1}, {2.0}), beta(Shape{1}, {0.5});
    TensorD rm(Shape{1}, {1.0}), rv(Shape{1}, {4.0});
    auto y = atlab::batchnorm(x, gamma, beta, rm, rv, false, false);
    // (x - 1) / sqrt(4 + 1e-5) * 2 + 0.5
    CHECK(y[0] == doctest::Approx(2.0 * 2.0 / std::sqrt(4.00001) + 0.5).epsilon(1e-9));
    CHECK(y[1] == doctest::Approx(4.0 * 2.0 / std::sqrt(4.00001) + 0.5).epsilon(1e-9));
  }
  SUBCASE("gradients through train-mode normalization match finite differences") {
    std::vector<gradcheck::Input> inputs = {{{2, 2, 3, 3}, oracle::random_vec(rng, 36)},
                                            {{2}, {1.3, 0.7}},
                                            {{2}, {0.1, -0.2}}};
    auto build = [](const std::vector<TensorD>& t) {
      TensorD rm = TensorD::zeros(Shape{2}), rv = TensorD::ones(Shape{2});
      auto y = atlab::batchnorm(t[0], t[1], t[2], rm, rv, true, false);
      return atlab::sum(atlab::mul(y, atlab::sigmoid(y)));
    };
    CHECK(gradcheck::max_gap(build, inputs) < 1e-4);
  }
}

TEST_CASE("logits shape is invariant to the stem stride") {
  for (Arch arch : {Arch::small_cnn, Arch::preact_resnet_lite, Arch::patchify_stem_net}) {
    ModelConfig cfg;
    cfg.arch = arch;
    std::mt19937_64 rng(11);
    auto vals = oracle::random_vec(rng, 2 * 3 * 32 * 32, 0.0, 1.0);
    TensorD x(Shape{2, 3, 32, 32}, vals);
    for (int64_t stride : {1, 2, 3, 4}) {
      cfg.first_conv_stride = stride;
      auto m = ModelD::build(cfg, 7);
      auto logits = m.forward(x, true, false);
      CHECK((logits.shape() == Shape{2, 10}));
    }
  }
}

TEST_CASE("patch stems use non-overlapping windows") {
  ModelConfig cfg;
  cfg.arch = Arch::patchify_stem_net;
  for (int64_t stride : {1, 2, 3, 4}) {
    cfg.first_conv_stride = stride;
    auto m = ModelD::build(cfg, 1);
    const auto& w = m.first_conv_weight();
    CHECK(w.dim(2) == stride);  // kernel extent equals the stride
    CHECK(w.dim(3) == stride);
  }
}

TEST_CASE("identical seeds build bit-identical models") {
  ModelConfig cfg = tiny_config(Arch::preact_resnet_lite);
  auto a = ModelD::build(cfg, 99), b = ModelD::build(cfg, 99), c = ModelD::build(cfg, 100);
  REQUIRE(a.params().size() == b.params().size());
  bool all_equal = true, differs_somewhere = false;
  for (size_t i = 0; i < a.params().size(); ++i) {
    for (int64_t j = 0; j < a.params()[i].value.size(); ++j) {
      if (a.params()[i].value[j] != b.params()[i].value[j]) all_equal = false;
      if (a.params()[i].value[j] != c.params()[i].value[j]) differs_somewhere = true;
    }
  }
  CHECK(all_equal);
  CHECK(differs_somewhere);
}

TEST_CASE("zeroed classifier head yields all-equal logits on any input") {
  ModelConfig cfg = tiny_config(Arch::small_cnn);
  auto m = ModelD::build(cfg, 5);
  auto& w = m.param("fc.weight").value;
  w = TensorD::zeros(w.shape());
  std::mt19937_64 rng(13);
  TensorD x(Shape{2, 2, 8, 8}, oracle::random_vec(rng, 2 * 2 * 8 * 8, 0.0, 1.0));
  auto logits = m.forward(x, true, false);
  for (int64_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == 0.0);
}

TEST_CASE("parameter count does not depend on the activation") {
  for (Arch arch : {Arch::small_cnn, Arch::preact_resnet_lite, Arch::patchify_stem_net}) {
    ModelConfig cfg = tiny_config(arch);
    cfg.activation = Activation::relu;
    const int64_t base = ModelD::build(cfg, 1).num_scalars();
    for (Activation act : {Activation::gelu, Activation::silu, Activation::elu,
                           Activation::softplus_param}) {
      cfg.activation = act;
      CHECK(ModelD::build(cfg, 1).num_scalars() == base);
    }
  }
}

TEST_CASE("very sharp softplus is indistinguishable from relu in the logits") {
  ModelConfig cfg = tiny_config(Arch::small_cnn);
  auto relu_model = ModelD::build(cfg, 21);
  cfg.activation = Activation::softplus_param;
  cfg.softplus_alpha = 1e4;
  auto soft_model = ModelD::build(cfg, 21);  // same seed, same weights
  std::mt19937_64 rng(17);
  TensorD x(Shape{4, 2, 8, 8}, oracle::random_vec(rng, 4 * 2 * 8 * 8, 0.0, 1.0));
  auto a = relu_model.forward(x, true, false);
  auto b = soft_model.forward(x, true, false);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-2);
}

TEST_CASE("eval-mode forward is deterministic across calls") {
  ModelConfig cfg = tiny_config(Arch::patchify_stem_net);
  auto m = ModelD::build(cfg, 31);
  std::mt19937_64 rng(19);
  TensorD x(Shape{2, 2, 8, 8}, oracle::random_vec(rng, 2 * 2 * 8 * 8, 0.0, 1.0));
  auto a = m.forward(x, false, false);
  auto b = m.forward(x, false, false);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("logits are differentiable in the input") {
  for (Arch arch : {Arch::small_cnn, Arch::preact_resnet_lite, Arch::patchify_stem_net}) {
    ModelConfig cfg = tiny_config(arch);
    cfg.activation = Activation::silu;  // smooth everywhere, clean FD
    auto m = ModelD::build(cfg, 41);
    std::mt19937_64 rng(23);
    auto vals = oracle::random_vec(rng, 1 * 2 * 8 * 8, 0.1, 0.9);
    const Shape xs{1, 2, 8, 8};
    auto f = [&](const std::vector<double>& flat) {
      TensorD x(xs, flat);
      return atlab::cross_entropy(m.forward(x, true, false), {1}).item();
    };
    TensorD x(xs, vals);
    x.set_requires_grad();
    auto g = atlab::grad(atlab::cross_entropy(m.forward(x, true, false), {1}), {x});
    double norm = 0.0;
    for (double v : g[0].raw()) norm += v * v;
    CHECK(norm > 0.0);
    auto fd = oracle::fd_grad(f, vals);
    CHECK(oracle::max_rel_err(g[0].raw(), fd) < 1e-4);
  }
}

TEST_CASE("parameter gradients of the gradient norm match finite differences") {
  // second-order path exercised end to end through conv, batch norm, and the
  // smooth activation, probing a sample of parameter coordinates
  ModelConfig cfg = tiny_config(Arch::small_cnn);
  cfg.activation = Activation::softplus_param;
  cfg.softplus_alpha = 2.0;
  auto m = ModelD::build(cfg, 51);
  std::mt19937_64 rng(29);
  TensorD x(Shape{2, 2, 8, 8}, oracle::random_vec(rng, 2 * 2 * 8 * 8, 0.1, 0.9));
  const std::vector<int> labels = {0, 2};

  auto grad_norm_value = [&]() {
    TensorD xi = x.clone();
    xi.set_requires_grad();
    auto loss = atlab::cross_entropy(m.forward(xi, true, false), labels);
    auto g = atlab::grad(loss, {xi}, /*create_graph=*/true);
    return atlab::l2_norm(g[0]);
  };

  auto value = grad_norm_value();
  std::vector<TensorD> leaves;
  for (auto& p : m.params()) leaves.push_back(p.value);
  auto pgrads = atlab::grad(value, leaves, false, /*allow_disconnected=*/true);

  std::uniform_int_distribution<size_t> pick_param(0, m.params().size() - 1);
  const double h = 1e-4;
  int checked = 0;
  while (checked < 12) {
    const size_t pi = pick_param(rng);
    auto& pv = m.params()[pi].value;
    std::uniform_int_distribution<int64_t> pick_coord(0, pv.size() - 1);
    const int64_t j = pick_coord(rng);
    const double keep = pv.raw()[static_cast<size_t>(j)];
    pv.raw()[static_cast<size_t>(j)] = keep + h;
    const double fp = grad_norm_value().item();
    pv.raw()[static_cast<size_t>(j)] = keep - h;
    const double fm = grad_norm_value().item();
    pv.raw()[static_cast<size_t>(j)] = keep;
    const double fd = (fp - fm) / (2 * h);
    CHECK(oracle::rel_err(pgrads[pi][j], fd) < 1e-3);
    ++checked;
  }
}

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config(Arch::small_cnn);
  SUBCASE("stride range") {
    cfg.first_conv_stride = 5;
    CHECK_THROWS_AS(atlab::validate(cfg), atlab::config_error);
    cfg.first_conv_stride = 0;
    CHECK_THROWS_AS(atlab::validate(cfg), atlab::config_error);
  }
  SUBCASE("softplus alpha") {
    cfg.activation = Activation::softplus_param;
    cfg.softplus_alpha = 0.0;
    CHECK_THROWS_AS(atlab::validate(cfg), atlab::config_error);
  }
  SUBCASE("compensation stage range") {
    cfg.compensation_stage = 7;
    CHECK_THROWS_AS(atlab::validate(cfg), atlab::config_error);
  }
  SUBCASE("input smaller than the stem patch") {
    cfg.arch = Arch::patchify_stem_net;
    cfg.in_h = cfg.in_w = 3;
    CHECK_THROWS_AS(atlab::validate(cfg), atlab::config_error);
  }
  SUBCASE("padded convs keep tiny inputs alive") {
    cfg.in_h = cfg.in_w = 2;
    CHECK_NOTHROW(atlab::validate(cfg));
    auto m = ModelD::build(cfg, 4);
    TensorD x(Shape{1, 2, 2, 2}, std::vector<double>(8, 0.25));
    CHECK(m.forward(x, false, false).shape() == Shape({1, cfg.num_classes}));
  }
  SUBCASE("forward rejects mismatched inputs") {
    auto m = ModelD::build(tiny_config(Arch::small_cnn), 1);
    TensorD bad(Shape{1, 3, 8, 8}, std::vector<double>(192, 0.0));
    CHECK_THROWS_AS(m.forward(bad, true, false), atlab::shape_error);
  }
  SUBCASE("enum names round-trip") {
    CHECK(atlab::arch_from_string("patchify_stem_net") == Arch::patchify_stem_net);
    CHECK(atlab::activation_from_string("softplus_param") == Activation::softplus_param);
    CHECK_THROWS_AS(atlab::arch_from_string("resnet50"), atlab::config_error);
    CHECK_THROWS_AS(atlab::activation_from_string("tanh"), atlab::config_error);
  }
}
