#pragma once

// Proposal-to-object assignment. Costs combine the classifier's probability
// for the object's class with a BCE + smoothed Dice mask term. Two solvers:
// an exact Hungarian solver on any matrix, and a linear-time matcher for
// constrained matrices where each proposal can only match the object that
// owns its source segment.

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "of3d/tensor.hpp"

namespace of3d {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kProbClamp = 1e-7;

class InfeasibleAssignment : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// proposals × objects, row-major. Forbidden pairs hold +infinity.
struct CostMatrix {
  std::size_t rows = 0;  // proposals
  std::size_t cols = 0;  // ground-truth objects
  std::vector<double> values;
  double lambda = 0.5;
  // Set by constrain(): the one finite column of each row, or -1.
  std::vector<int> row_support;

  double at(std::size_t i, std::size_t k) const { return values[i * cols + k]; }
  double& at(std::size_t i, std::size_t k) { return values[i * cols + k]; }
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (proposal, object), by object
  std::vector<std::size_t> unmatched_proposals;            // ascending
  std::vector<std::size_t> unmatched_objects;              // ascending

  bool operator==(const Assignment&) const = default;
};

// Sum of matched costs, accumulated in object order.
double assignment_cost(const CostMatrix& cost, const Assignment& assignment);

// Throws std::logic_error when a proposal or object repeats or an index is
// out of range.
void validate_assignment(const Assignment& assignment, std::size_t proposals,
                         std::size_t objects);

// Mean BCE plus 1 - 2(p·g + 1)/(Σp + Σg + 1); probabilities are clamped to
// [1e-7, 1 - 1e-7].
double mask_cost(std::span<const double> probs, std::span<const std::uint8_t> target);

struct MatchTargets {
  std::vector<std::vector<std::uint8_t>> masks;  // objects × M
  std::vector<int> class_column;                  // classifier column per object
};

// class_probs: proposals × (T+1); mask_probs: M × proposals.
CostMatrix cost_matrix(const Tensor& class_probs, const Tensor& mask_probs,
                       const MatchTargets& targets, double lambda);

// Keeps C[i][k] only where proposal i's source segment belongs to object k.
CostMatrix constrain(const CostMatrix& cost, std::span<const std::size_t> query_segment,
                     std::span<const int> segment_object);

// Exact minimum-cost assignment covering every object; requires
// rows >= cols. Throws InfeasibleAssignment for an object column with no
// finite entry, or when no finite complete assignment exists.
Assignment hungarian(const CostMatrix& cost);

// Per object, the cheapest finite proposal (ties toward the lower proposal
// index). Requires row_support from constrain(). Objects without a finite
// entry end up in unmatched_objects.
Assignment disentangled_match(const CostMatrix& constrained);

// ---- benchmark --------------------------------------------------------------

struct BenchEntry {
  std::string matcher;
  std::size_t size = 0;
  double median_ns = 0.0;
};

struct BenchReport {
  std::vector<BenchEntry> entries;
  double slope_disentangled = 0.0;
  double slope_hungarian = 0.0;
  double slope_hungarian_random = 0.0;

  double median(const std::string& matcher, std::size_t size) const;
};

// Per size K:
//   hungarian         K×K Machol-Wien matrices, c[i][k] = (i+1)(k+1), which
//                     drive the solver to its cubic worst case
//   hungarian-random  K×K matrices with uniform random entries
//   disentangled      K×K constrained matrices, one random finite entry per row
BenchReport bench_matchers(std::span<const std::size_t> sizes, std::size_t trials,
                           std::uint64_t seed);

// OF3D-BENCH v1 / `matcher size median_ns` lines / `slope matcher value` lines.
std::string format_bench_report(const BenchReport& report);

// Least-squares slope of log(y) against log(x).
double log_log_slope(std::span<const double> x, std::span<const double> y);

}  // namespace of3d
