#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include <atlab/ops.hpp>
#include <atlab/tensor.hpp>

#include "gradcheck.hpp"
#include "oracle.hpp"

using atlab::Shape;
using atlab::TensorD;
using gradcheck::Input;

TEST_CASE("softplus values") {
  TensorD x(Shape{3}, {0.0, 0.0, 100.0});
  SUBCASE("alpha 1 at zero is log 2") {
    CHECK(atlab::softplus_param(x, 1.0)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("alpha 2 at zero is log(2)/2") {
    CHECK(atlab::softplus_param(x, 2.0)[1] == doctest::Approx(std::log(2.0) / 2).epsilon(1e-12));
  }
  SUBCASE("large input tracks identity without overflow") {
    CHECK(atlab::softplus_param(x, 2.0)[2] == doctest::Approx(100.0).epsilon(1e-9));
  }
  SUBCASE("alpha must be positive") {
    CHECK_THROWS_AS(atlab::softplus_param(x, 0.0), atlab::config_error);
    CHECK_THROWS_AS(atlab::softplus_param(x, -1.0), atlab::config_error);
  }
}

TEST_CASE("softplus sits in the (0, log(2)/alpha] band above relu") {
  // the strict lower bound is representable only while the excess survives
  // rounding: against ulp(x) for x > 0 (alpha*x below ~30) and against exp
  // underflow for x < 0 (alpha*|x| below ~600)
  std::mt19937_64 rng(5);
  for (double alpha : {0.5, 1.0, 2.0, 8.0, 64.0}) {
    const double lo = -std::min(30.0, 600.0 / alpha);
    const double hi = std::min(30.0, 30.0 / alpha);
    auto vals = oracle::random_vec(rng, 512, lo, hi);
    vals.push_back(0.0);
    TensorD x(Shape{static_cast<int64_t>(vals.size())}, vals);
    auto f = atlab::softplus_param(x, alpha);
    for (size_t i = 0; i < vals.size(); ++i) {
      const double excess = f[static_cast<int64_t>(i)] - std::max(0.0, vals[i]);
      CHECK(excess > 0.0);
      CHECK(excess <= std::log(2.0) / alpha + 1e-15);
    }
  }
}

TEST_CASE("softplus collapses onto relu exactly once the gap underflows") {
  TensorD x(Shape{2}, {900.0, -900.0});
  auto f = atlab::softplus_param(x, 1.0);
  CHECK(f[0] == 900.0);
  CHECK(f[1] == 0.0);
}

TEST_CASE("softplus derivative is the scaled logistic") {
  std::mt19937_64 rng(9);
  std::vector<Input> inputs = {{{6}, oracle::random_vec(rng, 6, -3.0, 3.0)}};
  for (double alpha : {1.0, 2.0, 10.0}) {
    auto build = [alpha](const std::vector<TensorD>& t) {
      return atlab::sum(atlab::mul(atlab::softplus_param(t[0], alpha), t[0]));
    };
    CHECK(gradcheck::max_gap(build, inputs) < 1e-4);
  }
}

TEST_CASE("cross entropy values") {
  SUBCASE("uniform two-way logits give log 2") {
    TensorD logits(Shape{1, 2}, {0.0, 0.0});
    CHECK(atlab::cross_entropy(logits, {0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("saturated correct logit gives zero loss without overflow") {
    TensorD logits(Shape{1, 2}, {1000.0, 0.0});
    CHECK(atlab::cross_entropy(logits, {0}).item() == doctest::Approx(0.0));
  }
  SUBCASE("random logits match the log-sum-exp oracle") {
    std::mt19937_64 rng(13);
    auto vals = oracle::random_vec(rng, 12, -4.0, 4.0);
    TensorD logits(Shape{3, 4}, vals);
    std::vector<int> labels = {2, 0, 3};
    const double want = oracle::ce_ref(vals, 3, 4, labels);
    CHECK(std::abs(atlab::cross_entropy(logits, labels).item() - want) < 1e-10);
  }
  SUBCASE("label out of range") {
    TensorD logits(Shape{1, 2}, {0.0, 0.0});
    CHECK_THROWS_AS(atlab::cross_entropy(logits, {2}), atlab::error);
    CHECK_THROWS_AS(atlab::cross_entropy(logits, {-1}), atlab::error);
  }
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
  std::mt19937_64 rng(17);
  auto vals = oracle::random_vec(rng, 8, -3.0, 3.0);
  TensorD logits(Shape{2, 4}, vals);
  logits.set_requires_grad();
  std::vector<int> labels = {1, 3};
  auto g = atlab::grad(atlab::cross_entropy(logits, labels), {logits});
  for (int64_t n = 0; n < 2; ++n) {
    auto p = oracle::softmax_ref(
        std::vector<double>(vals.begin() + n * 4, vals.begin() + (n + 1) * 4));
    for (int64_t c = 0; c < 4; ++c) {
      const double want = (p[static_cast<size_t>(c)] - (labels[static_cast<size_t>(n)] == c)) / 2.0;
      CHECK(g[0][n * 4 + c] == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("euclidean norm") {
  SUBCASE("3-4-5 triangle") {
    TensorD x(Shape{2}, {3.0, 4.0});
    CHECK(atlab::l2_norm(x).item() == doctest::Approx(5.0).epsilon(1e-12));
  }
  SUBCASE("zero tensor has zero norm and zero gradient") {
    TensorD x(Shape{3}, {0.0, 0.0, 0.0});
    x.set_requires_grad();
    auto n = atlab::l2_norm(x);
    CHECK(n.item() == 0.0);
    auto g = atlab::grad(n, {x});
    for (double v : g[0].raw()) CHECK(v == 0.0);
  }
  SUBCASE("random tensor matches the element-loop oracle") {
    std::mt19937_64 rng(19);
    auto vals = oracle::random_vec(rng, 64);
    TensorD x(Shape{64}, vals);
    double acc = 0.0;
    for (double v : vals) acc += v * v;
    CHECK(oracle::rel_err(atlab::l2_norm(x).item(), std::sqrt(acc)) < 1e-12);
  }
  SUBCASE("gradient away from zero matches finite differences") {
    std::mt19937_64 rng(29);
    std::vector<Input> inputs = {{{5}, oracle::random_vec(rng, 5, 0.5, 2.0)}};
    auto build = [](const std::vector<TensorD>& t) { return atlab::l2_norm(t[0]); };
    CHECK(gradcheck::max_gap(build, inputs) < 1e-4);
  }
}

TEST_CASE("sign is three-valued, scale-invariant, and detached") {
  TensorD x(Shape{5}, {-3.0, -0.0, 0.0, 1e-9, 7.0});
  x.set_requires_grad();
  auto s = atlab::sign(x);
  CHECK(s[0] == -1.0);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == 0.0);
  CHECK(s[3] == 1.0);
  CHECK(s[4] == 1.0);
  CHECK(!s.requires_grad());
  auto s2 = atlab::sign(atlab::mul_scalar(x.detach(), 1000.0));
  for (int64_t i = 0; i < 5; ++i) CHECK(s[i] == s2[i]);
}

TEST_CASE("abs gradient follows the sign") {
  TensorD x(Shape{3}, {-2.0, 0.0, 5.0});
  x.set_requires_grad();
  auto g = atlab::grad(atlab::l1_norm(x), {x});
  CHECK(g[0][0] == -1.0);
  CHECK(g[0][1] == 0.0);
  CHECK(g[0][2] == 1.0);
}

TEST_CASE("activation gradients match finite differences") {
  std::mt19937_64 rng(37);
  std::vector<Input> inputs = {{{7}, {-2.1, -0.6, -0.2, 0.3, 0.9, 1.7, 2.4}}};
  auto check = [&](auto f) {
    auto build = [f](const std::vector<TensorD>& t) { return atlab::sum(atlab::mul(f(t[0]), t[0])); };
    CHECK(gradcheck::max_gap(build, inputs) < 1e-4);
  };
  SUBCASE("relu") { check([](const TensorD& x) { return atlab::relu(x); }); }
  SUBCASE("gelu") { check([](const TensorD& x) { return atlab::gelu(x); }); }
  SUBCASE("silu") { check([](const TensorD& x) { return atlab::silu(x); }); }
  SUBCASE("elu") { check([](const TensorD& x) { return atlab::elu(x); }); }
  SUBCASE("sigmoid") { check([](const TensorD& x) { return atlab::sigmoid(x); }); }
  SUBCASE("erf") { check([](const TensorD& x) { return atlab::erf(x); }); }
}

TEST_CASE("second derivatives of smooth activations match finite differences") {
  std::mt19937_64 rng(41);
  Shape shape{5};
  std::vector<double> vals = {-1.9, -0.7, 0.4, 1.1, 2.2};
  auto make_loss = [](const TensorD& x, int which) {
    switch (which) {
      case 0: return atlab::sum(atlab::mul(atlab::gelu(x), x));
      case 1: return atlab::sum(atlab::mul(atlab::silu(x), x));
      case 2: return atlab::sum(atlab::mul(atlab::elu(x), x));
      default: return atlab::sum(atlab::mul(atlab::softplus_param(x, 2.0), x));
    }
  };
  for (int which = 0; which < 4; ++which) {
    auto grad_sum = [&](const std::vector<double>& flat) {
      TensorD x(shape, flat);
      x.set_requires_grad();
      auto g = atlab::grad(make_loss(x, which), {x});
      double s = 0.0;
      for (double v : g[0].raw()) s += v;
      return s;
    };
    TensorD x(shape, vals);
    x.set_requires_grad();
    auto g1 = atlab::grad(make_loss(x, which), {x}, /*create_graph=*/true);
    auto g2 = atlab::grad(atlab::sum(g1[0]), {x});
    auto fd = oracle::fd_grad(grad_sum, vals);
    CHECK(oracle::max_rel_err(g2[0].raw(), fd) < 1e-3);
  }
}

TEST_CASE("matmul against a naive triple loop") {
  std::mt19937_64 rng(43);
  auto a = oracle::random_vec(rng, 3 * 4), b = oracle::random_vec(rng, 4 * 2);
  TensorD ta(Shape{3, 4}, a), tb(Shape{4, 2}, b);
  auto y = atlab::matmul(ta, tb);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < 4; ++k) acc += a[i * 4 + k] * b[k * 2 + j];
      CHECK(y[i * 2 + j] == doctest::Approx(acc).epsilon(1e-12));
    }
  CHECK_THROWS_AS(atlab::matmul(ta, ta), atlab::shape_error);
}

TEST_CASE("reductions against naive loops") {
  std::mt19937_64 rng(47);
  auto vals = oracle::random_vec(rng, 2 * 3 * 4);
  TensorD x(Shape{2, 3, 4}, vals);
  SUBCASE("full sum") {
    double want = 0.0;
    for (double v : vals) want += v;
    CHECK(atlab::sum(x).item() == doctest::Approx(want).epsilon(1e-12));
    CHECK(atlab::mean(x).item() == doctest::Approx(want / 24.0).epsilon(1e-12));
  }
  SUBCASE("middle-axis sum keeps the other extents") {
    auto s = atlab::sum(x, {1}, false);
    REQUIRE((s.shape() == Shape{2, 4}));
    for (int64_t i = 0; i < 2; ++i)
      for (int64_t k = 0; k < 4; ++k) {
        double want = 0.0;
        for (int64_t j = 0; j < 3; ++j) want += vals[(i * 3 + j) * 4 + k];
        CHECK(s[i * 4 + k] == doctest::Approx(want).epsilon(1e-12));
      }
  }
  SUBCASE("keepdims leaves singleton axes") {
    auto s = atlab::sum(x, {0, 2}, true);
    REQUIRE((s.shape() == Shape{1, 3, 1}));
  }
}

TEST_CASE("per-row norms and cosine similarity") {
  SUBCASE("row norms") {
    TensorD x(Shape{2, 2}, {3.0, 4.0, 0.0, 0.0});
    auto n = atlab::row_l2_norm(x);
    CHECK(n[0] == doctest::Approx(5.0));
    CHECK(n[1] == 0.0);
  }
  SUBCASE("aligned rows give one, opposed rows give minus one") {
    TensorD a(Shape{2, 3}, {1.0, 2.0, 2.0, 1.0, 0.0, 0.0});
    TensorD b(Shape{2, 3}, {2.0, 4.0, 4.0, -3.0, 0.0, 0.0});
    auto c = atlab::cosine_rows(a, b);
    CHECK(c[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c[1] == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("zero rows contribute zero similarity and zero gradient") {
    TensorD a(Shape{1, 3}, {0.0, 0.0, 0.0});
    TensorD b(Shape{1, 3}, {1.0, 2.0, 3.0});
    a.set_requires_grad();
    auto c = atlab::cosine_rows(a, b);
    CHECK(c[0] == 0.0);
    auto g = atlab::grad(atlab::sum(c), {a});
    for (double v : g[0].raw()) CHECK(v == 0.0);
  }
  SUBCASE("cosine gradient matches finite differences") {
    std::mt19937_64 rng(53);
    std::vector<Input> inputs = {{{2, 4}, oracle::random_vec(rng, 8, 0.3, 1.4)},
                                 {{2, 4}, oracle::random_vec(rng, 8, 0.3, 1.4)}};
    auto build = [](const std::vector<TensorD>& t) {
      return atlab::sum(atlab::cosine_rows(t[0], t[1]));
    };
    CHECK(gradcheck::max_gap(build, inputs) < 1e-4);
  }
}

TEST_CASE("clamp is a detached projection") {
  TensorD x(Shape{4}, {-2.0, 0.25, 0.75, 2.0});
  x.set_requires_grad();
  auto c = atlab::clamp(x, 0.0, 1.0);
  CHECK(!c.requires_grad());
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 0.25);
  CHECK(c[2] == 0.75);
  CHECK(c[3] == 1.0);
}

TEST_CASE("division composes reciprocal") {
  std::mt19937_64 rng(59);
  std::vector<Input> inputs = {{{4}, oracle::random_vec(rng, 4, 0.5, 2.0)},
                               {{4}, oracle::random_vec(rng, 4, 0.5, 2.0)}};
  auto build = [](const std::vector<TensorD>& t) { return atlab::sum(atlab::div(t[0], t[1])); };
  CHECK(gradcheck::max_gap(build, inputs) < 1e-4);
}
