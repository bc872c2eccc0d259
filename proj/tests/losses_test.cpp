#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "of3d/losses.hpp"
#include "test_support.hpp"

using namespace of3d;
using of3d::testing::random_tensor;

namespace {

Assignment pairs_of(std::vector<std::pair<std::size_t, std::size_t>> pairs) {
  Assignment a;
  a.pairs = std::move(pairs);
  return a;
}

GradCheckOptions five_point() {
  GradCheckOptions opts;
  opts.order = 4;
  opts.step = 1e-3;
  return opts;
}

}  // namespace

TEST_CASE("classification loss fixtures") {
  // uniform logits over T + 1 columns
  const Tensor uniform = Tensor::zeros({3, 5});
  const std::vector<int> columns{1, 2};
  CHECK(cls_loss(uniform, pairs_of({{0, 1}}), columns).item() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));

  // unmatched proposals target the no-object column
  const Tensor confident = Tensor::from({2, 3}, {0, 0, 40, 40, 0, 0});
  CHECK(cls_loss(confident, pairs_of({{1, 0}}), std::vector<int>{0}).item() < 1e-15);
  CHECK(cls_loss(confident, pairs_of({}), std::vector<int>{}).item() ==
        doctest::Approx(20.0).epsilon(1e-9));

  CHECK_THROWS_AS(cls_loss(uniform, pairs_of({{5, 0}}), columns), DimensionError);
}

TEST_CASE("mask loss fixtures") {
  const std::vector<std::vector<std::uint8_t>> objects{{1}};
  // a confident correct mask: BCE vanishes, smoothed Dice gives 1 - 4/3
  const Tensor sure = Tensor::from({1, 1}, {40.0});
  const MaskLosses l = mask_losses(sure, pairs_of({{0, 0}}), objects);
  CHECK(l.bce.item() < 1e-15);
  CHECK(l.dice.item() == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
  CHECK_FALSE(l.empty);

  // zero logits: p = 0.5 everywhere
  const std::vector<std::vector<std::uint8_t>> two{{1, 0}};
  const MaskLosses half = mask_losses(Tensor::zeros({2, 1}), pairs_of({{0, 0}}), two);
  CHECK(half.bce.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(half.dice.item() == doctest::Approx(1.0 - 2.0 * 1.5 / 3.0).epsilon(1e-12));

  const MaskLosses none = mask_losses(sure, pairs_of({}), objects);
  CHECK(none.empty);
  CHECK(none.bce.item() == 0.0);
  CHECK(none.dice.item() == 0.0);

  CHECK_THROWS_AS(mask_losses(Tensor::zeros({3, 1}), pairs_of({{0, 0}}), objects),
                  DimensionError);
}

TEST_CASE("unmatched proposals do not touch the mask terms") {
  std::mt19937_64 rng(1);
  Tensor logits = random_tensor(rng, {4, 3}).clone(true);
  const std::vector<std::vector<std::uint8_t>> objects{{1, 1, 0, 0}};
  const MaskLosses l = mask_losses(logits, pairs_of({{1, 0}}), objects);
  add(l.bce, l.dice).backward();
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(logits.grad()[s * 3 + 0] == 0.0);
    CHECK(logits.grad()[s * 3 + 2] == 0.0);
    CHECK(logits.grad()[s * 3 + 1] != 0.0);
  }
}

TEST_CASE("semantic loss fixtures") {
  const std::vector<std::vector<std::uint8_t>> masks{{1, 0, 0}, {0, 1, 1}};
  CHECK(semantic_loss(Tensor::zeros({3, 2}), masks).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // a void segment with an arbitrarily wrong logit is left out
  const Tensor logits = Tensor::from({3, 2}, {40, -40, -40, 40, 40, -40});
  const std::vector<std::uint8_t> ignore{0, 0, 1};
  CHECK(semantic_loss(logits, masks, ignore).item() < 1e-15);
  CHECK(semantic_loss(logits, masks).item() > 10.0);
  const std::vector<std::uint8_t> all{1, 1, 1};
  CHECK(semantic_loss(logits, masks, all).item() == 0.0);

  CHECK_THROWS_AS(semantic_loss(Tensor::zeros({3, 3}), masks), DimensionError);
}

TEST_CASE("total loss combines the parts") {
  LossParts parts;
  parts.cls = Tensor::scalar(1.0);
  parts.bce = Tensor::scalar(1.0);
  parts.dice = Tensor::scalar(1.0);
  parts.sem = Tensor::scalar(1.0);
  total_loss(parts, LossWeights{});
  CHECK(parts.total.item() == 3.5);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double c = dist(rng), b = dist(rng), d = dist(rng), s = dist(rng);
    parts.cls = Tensor::scalar(c);
    parts.bce = Tensor::scalar(b);
    parts.dice = Tensor::scalar(d);
    parts.sem = Tensor::scalar(s);
    LossWeights w;
    w.beta = std::abs(dist(rng));
    total_loss(parts, w);
    CHECK(std::abs(parts.total.item() - (w.beta * c + b + d + s)) < 1e-12);
  }
}

TEST_CASE("loss gradients") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 2 + rng() % 5, k = 2 + rng() % 4, classes = 2 + rng() % 3;
    std::vector<std::vector<std::uint8_t>> objects(2, std::vector<std::uint8_t>(m));
    std::vector<std::vector<std::uint8_t>> class_masks(classes, std::vector<std::uint8_t>(m));
    for (auto& o : objects)
      for (auto& v : o) v = rng() % 2;
    for (std::size_t s = 0; s < m; ++s) class_masks[rng() % classes][s] = 1;
    const Assignment a = pairs_of({{0, 1}, {k - 1, 0}});
    const std::vector<int> columns{0, static_cast<int>(classes) - 1};

    std::vector<Tensor> point{random_tensor(rng, {k, classes + 1}), random_tensor(rng, {m, k}),
                              random_tensor(rng, {m, classes})};
    auto f = [&](std::span<const Tensor> p) {
      LossParts parts;
      parts.cls = cls_loss(p[0], a, columns);
      const MaskLosses ml = mask_losses(p[1], a, objects);
      parts.bce = ml.bce;
      parts.dice = ml.dice;
      parts.sem = semantic_loss(p[2], class_masks);
      total_loss(parts, LossWeights{});
      return parts.total;
    };
    const auto r = check_gradients(f, point, five_point());
    INFO("trial " << trial << " input " << r.input << " analytic " << r.analytic << " numeric "
                  << r.numeric);
    CHECK(r.max_rel_error < 1e-4);
  }
}
