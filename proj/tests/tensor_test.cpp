#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "of3d/tensor.hpp"
#include "test_support.hpp"

using namespace of3d;
using of3d::testing::probe;
using of3d::testing::random_tensor;

TEST_CASE("matmul fixtures") {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto out = matmul(eye, m);
  CHECK(std::vector<double>(out.data().begin(), out.data().end()) ==
        std::vector<double>{1, 2, 3, 4});

  auto row = Tensor::from({1, 2}, {1, 2});
  auto col = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == 11.0);

  CHECK_THROWS_AS(matmul(row, row), DimensionError);
  try {
    matmul(row, row);
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("[1x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 2});
  std::vector<Tensor> point{a, b};
  auto result = check_gradients(
      [](std::span<const Tensor> in) { return sum(matmul(in[0], in[1])); },
      point);
  CHECK(result.max_rel_error < 1e-6);
}

TEST_CASE("softmax fixtures") {
  auto s = softmax(Tensor::from({2}, {0, 0}), 0);
  CHECK(s.data()[0] == doctest::Approx(0.5));
  auto t = softmax(Tensor::from({2}, {1, 0}), 0);
  CHECK(t.data()[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)));
  CHECK(t.data()[0] == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(t.data()[1] == doctest::Approx(0.26894).epsilon(1e-5));
  auto big = softmax(Tensor::from({2}, {1000, 0}), 0);
  CHECK(big.data()[0] == 1.0);
  CHECK(big.data()[1] == 0.0);
  CHECK_THROWS_AS(softmax(Tensor::from({2}, {1, 0}), 1), DimensionError);
}

TEST_CASE("softmax rows sum to one along either axis") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, {5, 7}, -30, 30);
    for (std::size_t axis : {0u, 1u}) {
      Tensor y = softmax(x, axis);
      const std::size_t groups = axis == 1 ? 5 : 7;
      for (std::size_t g = 0; g < groups; ++g) {
        double total = 0.0;
        for (std::size_t t = 0; t < (axis == 1 ? 7u : 5u); ++t) {
          total += axis == 1 ? y.at(g, t) : y.at(t, g);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("sigmoid fixtures") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
  CHECK(sigmoid(Tensor::scalar(std::log(3.0))).item() == doctest::Approx(0.75));
  Tensor x = Tensor::scalar(0.0, true);
  sigmoid(x).backward();
  CHECK(x.grad()[0] == doctest::Approx(0.25));
  auto extreme = sigmoid(Tensor::from({2}, {-30, 30}));
  CHECK(extreme.data()[0] > 0.0);
  CHECK(extreme.data()[1] < 1.0);
}

TEST_CASE("layer_norm fixtures") {
  auto one = Tensor::from({1, 2}, {1, 1});
  auto zero = Tensor::from({1, 2}, {0, 0});
  auto y = layer_norm(Tensor::from({1, 2}, {1, 3}), one, zero, 1e-12);
  CHECK(y.data()[0] == doctest::Approx(-1.0));
  CHECK(y.data()[1] == doctest::Approx(1.0));
  auto c = layer_norm(Tensor::from({1, 3}, {4, 4, 4}), Tensor::full({3}, 1.0),
                      Tensor::zeros({3}), 1e-5);
  for (double v : c.data()) CHECK(v == 0.0);
  CHECK_THROWS(layer_norm(y, one, zero, 0.0));
}

TEST_CASE("backward contract") {
  Tensor x = Tensor::scalar(3.0, true);
  auto loss = mul(x, x);
  loss.backward();
  CHECK(x.grad()[0] == 6.0);
  loss.backward();
  CHECK(x.grad()[0] == 12.0);  // accumulates without reset
  x.zero_grad();
  loss.backward();
  CHECK(x.grad()[0] == 6.0);

  Tensor v = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(scale(v, 2.0).backward(), std::logic_error);
}

TEST_CASE("backward visits every node once on a diamond graph") {
  Tensor x = Tensor::scalar(2.0, true);
  auto a = scale(x, 3.0);
  auto b = mul(a, a);       // uses a twice
  auto c = add(b, a);       // a reached along two paths
  const std::size_t visited = c.backward();
  CHECK(visited == 4);      // x, a, b, c
  CHECK(x.grad()[0] == doctest::Approx(2 * 9 * 2.0 + 3.0));
}

TEST_CASE("two-layer MLP gradients against central differences") {
  std::mt19937_64 rng(11);
  std::vector<Tensor> point{random_tensor(rng, {5, 3}), random_tensor(rng, {3, 6}),
                            random_tensor(rng, {1, 6}), random_tensor(rng, {6, 2}),
                            random_tensor(rng, {1, 2})};
  auto mlp = [](std::span<const Tensor> p) {
    auto h = silu(linear(p[0], p[1], p[2]));
    return mean(mul(linear(h, p[3], p[4]), linear(h, p[3], p[4])));
  };
  GradCheckOptions opts;
  opts.step = 1e-6;
  CHECK(check_gradients(mlp, point, opts).max_rel_error < 1e-4);
}

TEST_CASE("check_gradients is exact for linear maps") {
  std::mt19937_64 rng(5);
  std::vector<Tensor> point{random_tensor(rng, {4, 3})};
  auto f = [](std::span<const Tensor> p) { return sum(scale(p[0], 2.5)); };
  GradCheckOptions opts;
  opts.step = 1e-3;
  CHECK(check_gradients(f, point, opts).max_rel_error < 1e-10);
}

TEST_CASE("softmax cross-entropy head gradient") {
  std::mt19937_64 rng(9);
  std::vector<Tensor> point{random_tensor(rng, {6, 4}), random_tensor(rng, {4, 5})};
  std::vector<int> targets{0, 4, 2, 1, 3, 4};
  auto f = [&](std::span<const Tensor> p) {
    return cross_entropy(matmul(p[0], p[1]), targets);
  };
  CHECK(check_gradients(f, point).max_rel_error < 1e-4);
}

// Every differentiable op, 20 random configurations each.
TEST_CASE("per-op gradient suite") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const std::uint64_t seed = rng();
    GradCheckOptions opts;
    opts.order = 4;
    opts.step = 1e-3;
    auto run = [&](std::string name, ScalarFunction f, std::vector<Tensor> point) {
      auto r = check_gradients(f, point, opts);
      INFO(name << " trial " << trial << " analytic " << r.analytic << " numeric "
                << r.numeric);
      CHECK(r.max_rel_error < 1e-4);
    };
    run("matmul_nt", [&](auto p) { return probe(matmul_nt(p[0], p[1]), seed); },
        {random_tensor(rng, {m, k}), random_tensor(rng, {n, k})});
    run("transpose", [&](auto p) { return probe(transpose(p[0]), seed); },
        {random_tensor(rng, {m, k})});
    run("add/sub/mul", [&](auto p) {
          return probe(mul(add(p[0], p[1]), sub(p[0], p[1])), seed);
        },
        {random_tensor(rng, {m, k}), random_tensor(rng, {m, k})});
    run("add_row", [&](auto p) { return probe(add_row(p[0], p[1]), seed); },
        {random_tensor(rng, {m, k}), random_tensor(rng, {1, k})});
    run("scale/add_scalar",
        [&](auto p) { return probe(add_scalar(scale(p[0], -1.7), 0.3), seed); },
        {random_tensor(rng, {m, k})});
    run("sigmoid", [&](auto p) { return probe(sigmoid(p[0]), seed); },
        {random_tensor(rng, {m, k})});
    run("silu", [&](auto p) { return probe(silu(p[0]), seed); },
        {random_tensor(rng, {m, k})});
    run("softmax0", [&](auto p) { return probe(softmax(p[0], 0), seed); },
        {random_tensor(rng, {m, k})});
    run("softmax1", [&](auto p) { return probe(softmax(p[0], 1), seed); },
        {random_tensor(rng, {m, k})});
    run("log_softmax", [&](auto p) { return probe(log_softmax(p[0]), seed); },
        {random_tensor(rng, {m, k})});
    const std::size_t w = k + 1;
    run("layer_norm",
        [&](auto p) { return probe(layer_norm(p[0], p[1], p[2], 1e-5), seed); },
        {random_tensor(rng, {m, w}), random_tensor(rng, {w}), random_tensor(rng, {w})});
    run("mean", [&](auto p) { return mean(mul(p[0], p[0])); },
        {random_tensor(rng, {m, k})});
    std::vector<std::size_t> pick{m - 1, 0, m / 2};
    run("gather_rows", [&](auto p) { return probe(gather_rows(p[0], pick), seed); },
        {random_tensor(rng, {m, k})});
    std::vector<std::size_t> cpick{k - 1, 0};
    run("gather_cols", [&](auto p) { return probe(gather_cols(p[0], cpick), seed); },
        {random_tensor(rng, {m, k})});
    run("slice/concat_cols", [&](auto p) {
          std::vector<Tensor> parts{slice_cols(p[0], 0, 1), p[1]};
          return probe(concat_cols(parts), seed);
        },
        {random_tensor(rng, {m, k}), random_tensor(rng, {m, n})});
    run("concat_rows", [&](auto p) { return probe(concat_rows(p[0], p[1]), seed); },
        {random_tensor(rng, {m, k}), random_tensor(rng, {n, k})});
    SparseMatrix sp;
    sp.rows = n;
    sp.cols = m;
    sp.row_offsets.push_back(0);
    std::uniform_real_distribution<double> wd(-1, 1);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < m; ++c) {
        if ((r + c) % 2 == 0) {
          sp.col_index.push_back(c);
          sp.values.push_back(wd(rng));
        }
      }
      sp.row_offsets.push_back(sp.col_index.size());
    }
    run("sparse_matmul", [&](auto p) { return probe(sparse_matmul(sp, p[0]), seed); },
        {random_tensor(rng, {m, k})});
    std::vector<int> targets(m);
    for (auto& t : targets) t = static_cast<int>(rng() % (k + 1));
    run("cross_entropy", [&](auto p) { return cross_entropy(p[0], targets); },
        {random_tensor(rng, {m, k + 1})});
    std::vector<double> bits(m * k);
    for (auto& b : bits) b = static_cast<double>(rng() % 2);
    Tensor target = Tensor::from({m, k}, bits);
    run("bce_with_logits", [&](auto p) { return bce_with_logits(p[0], target); },
        {random_tensor(rng, {m, k})});
    run("dice_with_logits", [&](auto p) { return dice_with_logits(p[0], target); },
        {random_tensor(rng, {m, k})});
  }
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = Tensor::scalar(1.0, true);
  NoGradGuard guard;
  auto y = scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor a = random_tensor(rng, {4, 4}).clone(true);
    Tensor b = random_tensor(rng, {4, 4});
    auto loss = sum(softmax(matmul(a, b), 1));
    loss = add(loss, mean(layer_norm(a, Tensor::full({4}, 1.0), Tensor::zeros({4}), 1e-5)));
    loss.backward();
    return std::vector<double>(a.grad().begin(), a.grad().end());
  };
  CHECK(run() == run());
}

TEST_CASE("fused loss values") {
  // bce at logit 0 is ln 2
  auto t = Tensor::from({1, 2}, {1, 0});
  CHECK(bce_with_logits(Tensor::zeros({1, 2}), t).item() ==
        doctest::Approx(std::log(2.0)));
  // uniform logits over T classes give ln T
  std::vector<int> tgt{2, 0};
  CHECK(cross_entropy(Tensor::zeros({2, 5}), tgt).item() ==
        doctest::Approx(std::log(5.0)));
  // confident identical one-segment masks reach the Laplace-smoothed floor -1/3
  auto d = dice_with_logits(Tensor::from({1, 1}, {40}), Tensor::from({1, 1}, {1}));
  CHECK(d.item() == doctest::Approx(-1.0 / 3.0));
}
