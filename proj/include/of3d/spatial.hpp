#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "of3d/scene.hpp"

namespace of3d {

// Uniform hash grid over point coordinates for exact radius and k-nearest
// queries. Results are ordered by (distance, index), so ties are resolved
// deterministically.
class GridIndex {
 public:
  GridIndex(std::span<const Point> points, double cell_size);

  // Indices within `radius` of point `i`, including `i` itself.
  std::vector<std::size_t> radius(std::size_t i, double radius) const;
  // The k nearest points to point `i`, excluding `i`. Fewer when the cloud
  // is smaller than k + 1.
  std::vector<std::size_t> knn(std::size_t i, std::size_t k) const;

 private:
  using Key = std::array<std::int64_t, 3>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };
  Key key_of(const Point& p) const;
  double dist2(std::size_t a, std::size_t b) const;

  std::span<const Point> points_;
  double cell_;
  std::unordered_map<Key, std::vector<std::size_t>, KeyHash> cells_;
  Key lo_{}, hi_{};
};

}  // namespace of3d
