#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "of3d/matching.hpp"
#include "of3d/random.hpp"
#include "oracles.hpp"

using namespace of3d;

namespace {

CostMatrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  CostMatrix c;
  c.rows = rows;
  c.cols = cols;
  c.values.resize(rows * cols);
  for (double& v : c.values) v = rng.uniform(-2.0, 2.0);
  return c;
}

CostMatrix from_rows(std::vector<std::vector<double>> rows) {
  CostMatrix c;
  c.rows = rows.size();
  c.cols = rows.front().size();
  for (const auto& r : rows) c.values.insert(c.values.end(), r.begin(), r.end());
  return c;
}

}  // namespace

TEST_CASE("mask cost fixtures") {
  const double eps = 1e-12;
  const std::vector<std::uint8_t> one{1}, zero{0};
  CHECK(mask_cost(std::vector<double>{1 - eps}, one) == doctest::Approx(-1.0 / 3.0).epsilon(1e-6));
  CHECK(mask_cost(std::vector<double>{0.5}, one) ==
        doctest::Approx(std::log(2.0) + 1.0 - 3.0 / 2.5).epsilon(1e-12));
  CHECK(mask_cost(std::vector<double>{0.5}, one) == doctest::Approx(0.49315).epsilon(1e-5));
  CHECK(mask_cost(std::vector<double>{eps}, zero) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK_THROWS_AS(mask_cost(std::vector<double>{0.5, 0.5}, one), DimensionError);
}

TEST_CASE("cost matrix fixtures") {
  MatchTargets targets;
  targets.masks = {{1}};
  targets.class_column = {0};
  const Tensor class_probs = Tensor::from({1, 2}, {1.0, 0.0});
  const Tensor mask_probs = Tensor::from({1, 1}, {1.0});
  CHECK(cost_matrix(class_probs, mask_probs, targets, 0.5).at(0, 0) ==
        doctest::Approx(-0.5 - 1.0 / 3.0).epsilon(1e-6));
  CHECK(cost_matrix(class_probs, mask_probs, targets, 0.5).at(0, 0) ==
        doctest::Approx(-0.83333).epsilon(1e-5));

  // lambda = 0 leaves the mask term alone
  const Tensor probs = Tensor::from({1, 1}, {0.5});
  CHECK(cost_matrix(class_probs, probs, targets, 0.0).at(0, 0) ==
        mask_cost(std::vector<double>{0.5}, targets.masks[0]));

  // raising the target class probability strictly lowers the cost
  double previous = kInf;
  for (double p : {0.1, 0.3, 0.6, 0.9}) {
    const double c = cost_matrix(Tensor::from({1, 2}, {p, 1 - p}), probs, targets, 0.5).at(0, 0);
    CHECK(c < previous);
    previous = c;
  }

  targets.class_column = {2};
  CHECK_THROWS_AS(cost_matrix(class_probs, mask_probs, targets, 0.5), std::out_of_range);
}

TEST_CASE("hungarian fixtures") {
  const Assignment a = hungarian(from_rows({{1, 2}, {3, 0}}));
  CHECK(a.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}});
  CHECK(assignment_cost(from_rows({{1, 2}, {3, 0}}), a) == 1.0);

  const Assignment id = hungarian(from_rows({{0, 5, 5}, {5, 0, 5}, {5, 5, 0}, {6, 6, 6}}));
  CHECK(id.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}, {2, 2}});
  CHECK(id.unmatched_proposals == std::vector<std::size_t>{3});

  CHECK_THROWS_WITH_AS(hungarian(from_rows({{1, kInf}, {2, kInf}})),
                       doctest::Contains("column 1"), InfeasibleAssignment);
  CHECK_THROWS_AS(hungarian(from_rows({{1, 2}})), InfeasibleAssignment);
  // each column has a finite entry, but both only in row 0
  CHECK_THROWS_AS(hungarian(from_rows({{1, 1}, {kInf, kInf}})), InfeasibleAssignment);
  CHECK_THROWS_AS(hungarian(from_rows({{-kInf}})), std::invalid_argument);
}

TEST_CASE("hungarian equals exhaustive search") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const CostMatrix c = random_matrix(rng, 8, 5);
    const Assignment a = hungarian(c);
    validate_assignment(a, 8, 5);
    CHECK(a.pairs.size() == 5);
    REQUIRE(assignment_cost(c, a) == testing::brute_force_assignment(c));
  }
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t cols = 1 + rng.below(6);
    const std::size_t rows = cols + rng.below(3);
    CostMatrix c = random_matrix(rng, rows, cols);
    // sprinkle forbidden entries, keeping at least one feasible assignment
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = 0; k < cols; ++k)
        if (i != k && rng.uniform() < 0.4) c.at(i, k) = kInf;
    const Assignment a = hungarian(c);
    validate_assignment(a, rows, cols);
    REQUIRE(assignment_cost(c, a) == testing::brute_force_assignment(c));
  }
}

TEST_CASE("constrain") {
  const CostMatrix c = from_rows({{0.4, 0.9}, {0.2, 0.8}, {0.3, 0.7}, {0.5, 0.5}});
  const std::vector<std::size_t> query_segment{0, 1, 2, 3};
  const std::vector<int> segment_object{0, 0, 1, -1};
  const CostMatrix hat = constrain(c, query_segment, segment_object);
  CHECK(hat.row_support == std::vector<int>{0, 0, 1, -1});
  for (std::size_t i = 0; i < 4; ++i) {
    int finite = 0;
    for (std::size_t k = 0; k < 2; ++k) {
      const bool owned = segment_object[query_segment[i]] == static_cast<int>(k);
      CHECK(std::isfinite(hat.at(i, k)) == owned);
      if (owned) CHECK(hat.at(i, k) == c.at(i, k));
      finite += std::isfinite(hat.at(i, k));
    }
    CHECK(finite <= 1);
  }
  // constraining again cannot revive an infinite entry
  const CostMatrix twice = constrain(hat, query_segment, std::vector<int>{1, 0, 1, 0});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 2; ++k)
      if (!std::isfinite(hat.at(i, k))) CHECK_FALSE(std::isfinite(twice.at(i, k)));

  CHECK_THROWS_AS(constrain(c, std::vector<std::size_t>{0, 1}, segment_object), DimensionError);
  CHECK_THROWS_AS(constrain(c, std::vector<std::size_t>{0, 1, 2, 9}, segment_object),
                  std::out_of_range);
}

TEST_CASE("disentangled matching fixtures") {
  // segments {0,1} belong to object 0, segment 2 to object 1
  CostMatrix c = from_rows({{0.4, 9}, {0.2, 9}, {9, 0.7}});
  const std::vector<std::size_t> query_segment{0, 1, 2};
  const std::vector<int> segment_object{0, 0, 1};
  const Assignment a = disentangled_match(constrain(c, query_segment, segment_object));
  CHECK(a.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}, {2, 1}});
  CHECK(a.unmatched_proposals == std::vector<std::size_t>{0});
  CHECK(a.unmatched_objects.empty());

  // ties go to the lower proposal index
  c = from_rows({{0.3}, {0.3}});
  CHECK(disentangled_match(constrain(c, std::vector<std::size_t>{0, 1}, std::vector<int>{0, 0}))
            .pairs.front()
            .first == 0);

  // an object with no proposal is reported, not fatal
  c = from_rows({{0.1, 0.1}});
  const Assignment lonely =
      disentangled_match(constrain(c, std::vector<std::size_t>{0}, std::vector<int>{0}));
  CHECK(lonely.unmatched_objects == std::vector<std::size_t>{1});

  CHECK_THROWS_AS(disentangled_match(c), std::invalid_argument);
}

TEST_CASE("disentangled matching agrees with hungarian on constrained matrices") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t objects = 1 + rng.below(8);
    const std::size_t proposals = objects + rng.below(20);
    const CostMatrix c = random_matrix(rng, proposals, objects);
    // one dedicated segment per object so every column stays feasible
    std::vector<std::size_t> query_segment(proposals);
    std::vector<int> segment_object(proposals);
    for (std::size_t i = 0; i < proposals; ++i) {
      query_segment[i] = i;
      segment_object[i] = i < objects ? static_cast<int>(i)
                                      : static_cast<int>(rng.below(objects + 1)) - 1;
    }
    const CostMatrix hat = constrain(c, query_segment, segment_object);
    const Assignment d = disentangled_match(hat);
    const Assignment h = hungarian(hat);
    validate_assignment(d, proposals, objects);
    CHECK(d.pairs == h.pairs);
    CHECK(assignment_cost(hat, d) == assignment_cost(hat, h));
  }
}

TEST_CASE("benchmark report structure") {
  const std::vector<std::size_t> sizes{8, 16, 32};
  const BenchReport r = bench_matchers(sizes, 1, 5);
  CHECK(r.entries.size() == 9);
  const std::string text = format_bench_report(r);
  CHECK(text.rfind("OF3D-BENCH v1\nhungarian 8 ", 0) == 0);
  CHECK(text.find("\nslope disentangled ") != std::string::npos);
  CHECK(text.find("\nslope hungarian ") != std::string::npos);
  CHECK(text.find("\nhungarian-random 16 ") != std::string::npos);
  for (const auto& e : r.entries) CHECK(e.median_ns > 0.0);
  CHECK_THROWS(bench_matchers(std::vector<std::size_t>{16, 8}, 1, 0));

  const std::vector<double> x{1, 2, 4, 8}, y{1, 8, 64, 512};
  CHECK(log_log_slope(x, y) == doctest::Approx(3.0));
}
