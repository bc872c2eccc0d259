#include "of3d/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace of3d {

std::size_t GridIndex::KeyHash::operator()(const Key& k) const noexcept {
  std::uint64_t h = 1469598103934665603ull;
  for (std::int64_t v : k) {
    h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  }
  return static_cast<std::size_t>(h);
}

GridIndex::GridIndex(std::span<const Point> points, double cell_size)
    : points_(points), cell_(cell_size) {
  if (!(cell_size > 0.0)) throw std::invalid_argument("grid cell size must be > 0");
  lo_ = {std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::max(),
         std::numeric_limits<std::int64_t>::max()};
  hi_ = {std::numeric_limits<std::int64_t>::min(), std::numeric_limits<std::int64_t>::min(),
         std::numeric_limits<std::int64_t>::min()};
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Key k = key_of(points[i]);
    cells_[k].push_back(i);
    for (int d = 0; d < 3; ++d) {
      lo_[d] = std::min(lo_[d], k[d]);
      hi_[d] = std::max(hi_[d], k[d]);
    }
  }
}

GridIndex::Key GridIndex::key_of(const Point& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x / cell_)),
          static_cast<std::int64_t>(std::floor(p.y / cell_)),
          static_cast<std::int64_t>(std::floor(p.z / cell_))};
}

double GridIndex::dist2(std::size_t a, std::size_t b) const {
  const Point& p = points_[a];
  const Point& q = points_[b];
  const double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
  return dx * dx + dy * dy + dz * dz;
}

std::vector<std::size_t> GridIndex::radius(std::size_t i, double r) const {
  const Key c = key_of(points_[i]);
  const auto reach = static_cast<std::int64_t>(std::ceil(r / cell_));
  const double r2 = r * r;
  std::vector<std::pair<double, std::size_t>> found;
  for (std::int64_t dx = -reach; dx <= reach; ++dx)
    for (std::int64_t dy = -reach; dy <= reach; ++dy)
      for (std::int64_t dz = -reach; dz <= reach; ++dz) {
        auto it = cells_.find({c[0] + dx, c[1] + dy, c[2] + dz});
        if (it == cells_.end()) continue;
        for (std::size_t j : it->second) {
          const double d = dist2(i, j);
          if (d <= r2) found.emplace_back(d, j);
        }
      }
  std::sort(found.begin(), found.end());
  std::vector<std::size_t> out;
  out.reserve(found.size());
  for (const auto& f : found) out.push_back(f.second);
  return out;
}

std::vector<std::size_t> GridIndex::knn(std::size_t i, std::size_t k) const {
  if (k == 0) return {};
  const Key c = key_of(points_[i]);
  std::int64_t max_shell = 0;
  for (int d = 0; d < 3; ++d) {
    max_shell = std::max({max_shell, c[d] - lo_[d], hi_[d] - c[d]});
  }
  std::vector<std::pair<double, std::size_t>> found;
  for (std::int64_t shell = 0; shell <= max_shell; ++shell) {
    for (std::int64_t dx = -shell; dx <= shell; ++dx)
      for (std::int64_t dy = -shell; dy <= shell; ++dy)
        for (std::int64_t dz = -shell; dz <= shell; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != shell) continue;
          auto it = cells_.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it == cells_.end()) continue;
          for (std::size_t j : it->second) {
            if (j != i) found.emplace_back(dist2(i, j), j);
          }
        }
    if (found.size() >= k) {
      std::nth_element(found.begin(), found.begin() + (k - 1), found.end());
      const double kth = found[k - 1].first;
      // Unvisited cells lie at least `shell` cells away from the query.
      const double reach = static_cast<double>(shell) * cell_;
      if (kth <= reach * reach) break;
    }
  }
  std::sort(found.begin(), found.end());
  if (found.size() > k) found.resize(k);
  std::vector<std::size_t> out;
  out.reserve(found.size());
  for (const auto& f : found) out.push_back(f.second);
  return out;
}

}  // namespace of3d
