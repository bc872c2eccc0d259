#include "of3d/matching.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "of3d/random.hpp"
#include "of3d/text_io.hpp"

namespace of3d {

double assignment_cost(const CostMatrix& cost, const Assignment& assignment) {
  double total = 0.0;
  for (const auto& [i, k] : assignment.pairs) total += cost.at(i, k);
  return total;
}

void validate_assignment(const Assignment& a, std::size_t proposals, std::size_t objects) {
  std::vector<char> used_p(proposals, 0), used_o(objects, 0);
  for (const auto& [i, k] : a.pairs) {
    if (i >= proposals || k >= objects) throw std::logic_error("assignment index out of range");
    if (used_p[i]++ || used_o[k]++) throw std::logic_error("assignment is not injective");
  }
  for (std::size_t i : a.unmatched_proposals) {
    if (i >= proposals || used_p[i]++) throw std::logic_error("bad unmatched proposal");
  }
  for (std::size_t k : a.unmatched_objects) {
    if (k >= objects || used_o[k]++) throw std::logic_error("bad unmatched object");
  }
  if (std::count(used_p.begin(), used_p.end(), 0) || std::count(used_o.begin(), used_o.end(), 0)) {
    throw std::logic_error("assignment does not cover every index");
  }
}

double mask_cost(std::span<const double> probs, std::span<const std::uint8_t> target) {
  if (probs.size() != target.size() || probs.empty()) {
    throw DimensionError("mask_cost: " + std::to_string(probs.size()) + " probabilities vs " +
                         std::to_string(target.size()) + " targets");
  }
  double bce = 0.0, inter = 0.0, sum_p = 0.0, sum_t = 0.0;
  for (std::size_t s = 0; s < probs.size(); ++s) {
    const double p = std::clamp(probs[s], kProbClamp, 1.0 - kProbClamp);
    const double t = target[s] ? 1.0 : 0.0;
    bce -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    inter += p * t;
    sum_p += p;
    sum_t += t;
  }
  bce /= static_cast<double>(probs.size());
  return bce + 1.0 - 2.0 * (inter + 1.0) / (sum_p + sum_t + 1.0);
}

CostMatrix cost_matrix(const Tensor& class_probs, const Tensor& mask_probs,
                       const MatchTargets& targets, double lambda) {
  const std::size_t k_ins = class_probs.rows();
  const std::size_t classes = class_probs.cols();
  const std::size_t m = mask_probs.rows();
  if (mask_probs.cols() != k_ins || targets.masks.size() != targets.class_column.size()) {
    throw DimensionError("cost_matrix: class probs " + shape_string(class_probs.shape()) +
                         ", mask probs " + shape_string(mask_probs.shape()));
  }
  CostMatrix c;
  c.rows = k_ins;
  c.cols = targets.masks.size();
  c.lambda = lambda;
  c.values.assign(c.rows * c.cols, 0.0);
  const auto cp = class_probs.data();
  const auto mp = mask_probs.data();
  std::vector<double> column(m);
  for (std::size_t i = 0; i < k_ins; ++i) {
    for (std::size_t s = 0; s < m; ++s) column[s] = mp[s * k_ins + i];
    for (std::size_t k = 0; k < c.cols; ++k) {
      const int cls = targets.class_column[k];
      if (cls < 0 || static_cast<std::size_t>(cls) >= classes) {
        throw std::out_of_range("cost_matrix: class column " + std::to_string(cls) +
                                " outside [0, " + std::to_string(classes) + ")");
      }
      c.at(i, k) = -lambda * cp[i * classes + static_cast<std::size_t>(cls)] +
                   mask_cost(column, targets.masks[k]);
    }
  }
  return c;
}

CostMatrix constrain(const CostMatrix& cost, std::span<const std::size_t> query_segment,
                     std::span<const int> segment_object) {
  if (query_segment.size() != cost.rows) {
    throw DimensionError("constrain: " + std::to_string(query_segment.size()) +
                         " source segments for " + std::to_string(cost.rows) + " proposals");
  }
  CostMatrix out = cost;
  out.row_support.assign(cost.rows, -1);
  std::fill(out.values.begin(), out.values.end(), kInf);
  for (std::size_t i = 0; i < cost.rows; ++i) {
    if (query_segment[i] >= segment_object.size()) {
      throw std::out_of_range("constrain: segment " + std::to_string(query_segment[i]) +
                              " out of range");
    }
    const int k = segment_object[query_segment[i]];
    if (k < 0) continue;
    if (static_cast<std::size_t>(k) >= cost.cols) {
      throw std::out_of_range("constrain: object " + std::to_string(k) + " out of range");
    }
    out.at(i, static_cast<std::size_t>(k)) = cost.at(i, static_cast<std::size_t>(k));
    out.row_support[i] = k;
  }
  return out;
}

namespace {

Assignment complete(std::vector<std::pair<std::size_t, std::size_t>> pairs, std::size_t rows,
                    std::size_t cols) {
  Assignment a;
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& x, const auto& y) { return x.second < y.second; });
  std::vector<char> row_used(rows, 0), col_used(cols, 0);
  for (const auto& [i, k] : pairs) {
    row_used[i] = 1;
    col_used[k] = 1;
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (!row_used[i]) a.unmatched_proposals.push_back(i);
  }
  for (std::size_t k = 0; k < cols; ++k) {
    if (!col_used[k]) a.unmatched_objects.push_back(k);
  }
  a.pairs = std::move(pairs);
  return a;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  const std::size_t n = cost.cols;  // objects: the side that is fully assigned
  const std::size_t m = cost.rows;  // proposals
  if (n > m) {
    throw InfeasibleAssignment("hungarian: " + std::to_string(n) + " objects but only " +
                               std::to_string(m) + " proposals");
  }
  if (cost.values.size() != n * m) throw DimensionError("hungarian: malformed cost matrix");
  if (n == 0) return complete({}, m, 0);

  double largest = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    bool any = false;
    for (std::size_t i = 0; i < m; ++i) {
      const double v = cost.at(i, k);
      if (std::isfinite(v)) {
        any = true;
        largest = std::max(largest, std::abs(v));
      } else if (!(v > 0.0)) {
        throw std::invalid_argument("hungarian: cost entries must be finite or +infinity");
      }
    }
    if (!any) {
      throw InfeasibleAssignment("hungarian: object column " + std::to_string(k) +
                                 " has no finite cost");
    }
  }
  // Forbidden pairs get a cost larger than any finite complete assignment.
  const double big = (largest + 1.0) * static_cast<double>(n + 1) * 4.0;
  auto a = [&](std::size_t row, std::size_t col) {
    const double v = cost.at(col - 1, row - 1);
    return std::isfinite(v) ? v : big;
  };

  // Shortest augmenting paths with potentials; rows are objects (1-based),
  // columns are proposals (1-based), column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (std::size_t row = 1; row <= n; ++row) {
    p[0] = row;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t proposal = j - 1, object = p[j] - 1;
    if (!std::isfinite(cost.at(proposal, object))) {
      throw InfeasibleAssignment("hungarian: no finite assignment covers every object");
    }
    pairs.emplace_back(proposal, object);
  }
  return complete(std::move(pairs), m, n);
}

Assignment disentangled_match(const CostMatrix& constrained) {
  if (constrained.row_support.size() != constrained.rows) {
    throw std::invalid_argument("disentangled_match: matrix was not produced by constrain()");
  }
  const std::size_t n = constrained.cols;
  std::vector<int> best(n, -1);
  std::vector<double> best_cost(n, kInf);
  for (std::size_t i = 0; i < constrained.rows; ++i) {
    const int k = constrained.row_support[i];
    if (k < 0) continue;
    const double c = constrained.values[i * n + static_cast<std::size_t>(k)];
    // Strict comparison keeps the lowest proposal index on ties.
    if (best[k] < 0 || c < best_cost[k]) {
      best[k] = static_cast<int>(i);
      best_cost[k] = c;
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t k = 0; k < n; ++k) {
    if (best[k] >= 0) pairs.emplace_back(static_cast<std::size_t>(best[k]), k);
  }
  return complete(std::move(pairs), constrained.rows, n);
}

// ---- benchmark --------------------------------------------------------------

double BenchReport::median(const std::string& matcher, std::size_t size) const {
  for (const auto& e : entries) {
    if (e.matcher == matcher && e.size == size) return e.median_ns;
  }
  throw std::out_of_range("no bench entry for " + matcher + " at " + std::to_string(size));
}

double log_log_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("log_log_slope needs two or more points");
  }
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

using Clock = std::chrono::steady_clock;

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Nanoseconds per call, repeating until at least a millisecond has elapsed.
template <typename F>
double time_call(F&& f) {
  std::size_t reps = 0;
  const auto start = Clock::now();
  Clock::duration elapsed{};
  do {
    f();
    ++reps;
    elapsed = Clock::now() - start;
  } while (elapsed < std::chrono::milliseconds(1));
  return static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(elapsed).count()) /
         static_cast<double>(reps);
}

}  // namespace

BenchReport bench_matchers(std::span<const std::size_t> sizes, std::size_t trials,
                           std::uint64_t seed) {
  if (trials == 0) throw std::invalid_argument("bench_matchers: trials must be >= 1");
  if (!std::is_sorted(sizes.begin(), sizes.end()) || sizes.empty() || sizes.front() == 0) {
    throw std::invalid_argument("bench_matchers: sizes must be positive and ascending");
  }
  BenchReport report;
  std::vector<double> xs, hung, hung_random, dis;
  volatile std::size_t sink = 0;
  for (std::size_t size : sizes) {
    CostMatrix worst;
    worst.rows = worst.cols = size;
    worst.values.resize(size * size);
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t k = 0; k < size; ++k)
        worst.at(i, k) = static_cast<double>((i + 1) * (k + 1));
    std::vector<double> t_h, t_r, t_d;
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng(mix_seed(seed, size, t));
      CostMatrix dense;
      dense.rows = dense.cols = size;
      dense.values.resize(size * size);
      for (double& v : dense.values) v = rng.uniform();
      std::vector<std::size_t> query_segment(size);
      std::vector<int> segment_object(size);
      for (std::size_t i = 0; i < size; ++i) {
        query_segment[i] = i;
        segment_object[i] = static_cast<int>(rng.below(size));
      }
      const CostMatrix constrained = constrain(dense, query_segment, segment_object);
      t_h.push_back(time_call([&] { sink = sink + hungarian(worst).pairs.size(); }));
      t_r.push_back(time_call([&] { sink = sink + hungarian(dense).pairs.size(); }));
      t_d.push_back(time_call([&] { sink = sink + disentangled_match(constrained).pairs.size(); }));
    }
    xs.push_back(static_cast<double>(size));
    hung.push_back(median_of(t_h));
    hung_random.push_back(median_of(t_r));
    dis.push_back(median_of(t_d));
    report.entries.push_back({"hungarian", size, hung.back()});
    report.entries.push_back({"hungarian-random", size, hung_random.back()});
    report.entries.push_back({"disentangled", size, dis.back()});
  }
  if (xs.size() >= 2) {
    report.slope_hungarian = log_log_slope(xs, hung);
    report.slope_hungarian_random = log_log_slope(xs, hung_random);
    report.slope_disentangled = log_log_slope(xs, dis);
  }
  return report;
}

std::string format_bench_report(const BenchReport& report) {
  std::string out = "OF3D-BENCH v1\n";
  for (const auto& e : report.entries) {
    out += e.matcher + " " + std::to_string(e.size) + " " + format_double(e.median_ns) + "\n";
  }
  out += "slope disentangled " + format_double(report.slope_disentangled) + "\n";
  out += "slope hungarian " + format_double(report.slope_hungarian) + "\n";
  out += "slope hungarian-random " + format_double(report.slope_hungarian_random) + "\n";
  return out;
}

}  // namespace of3d
