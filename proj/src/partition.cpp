#include "of3d/partition.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "of3d/spatial.hpp"

namespace of3d {

std::string to_string(PoolingMode mode) {
  return mode == PoolingMode::voxel ? "voxel" : "superpoint";
}

PoolingMode pooling_mode_from_string(const std::string& s) {
  if (s == "voxel") return PoolingMode::voxel;
  if (s == "superpoint") return PoolingMode::superpoint;
  throw std::invalid_argument("unknown pooling mode '" + s + "'");
}

std::vector<std::size_t> Partition::sizes() const {
  std::vector<std::size_t> out(segments, 0);
  for (std::size_t s : segment_of) ++out[s];
  return out;
}

std::vector<std::vector<std::size_t>> Partition::members() const {
  std::vector<std::vector<std::size_t>> out(segments);
  for (std::size_t i = 0; i < segment_of.size(); ++i) out[segment_of[i]].push_back(i);
  return out;
}

void validate_partition(const Partition& p) {
  if (p.segments == 0 || p.segments > p.points()) {
    throw std::invalid_argument("partition has " + std::to_string(p.segments) +
                                " segments for " + std::to_string(p.points()) + " points");
  }
  std::vector<bool> used(p.segments, false);
  for (std::size_t s : p.segment_of) {
    if (s >= p.segments) throw std::invalid_argument("segment index out of range");
    used[s] = true;
  }
  if (std::find(used.begin(), used.end(), false) != used.end()) {
    throw std::invalid_argument("partition has an empty segment");
  }
}

Partition voxelize(const Scene& scene, double voxel_size) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("voxel_size must be > 0");
  using Key = std::array<std::int64_t, 3>;
  std::vector<Key> keys;
  keys.reserve(scene.size());
  for (const Point& p : scene.points) {
    keys.push_back({static_cast<std::int64_t>(std::floor(p.x / voxel_size)),
                    static_cast<std::int64_t>(std::floor(p.y / voxel_size)),
                    static_cast<std::int64_t>(std::floor(p.z / voxel_size))});
  }
  std::vector<Key> occupied = keys;
  std::sort(occupied.begin(), occupied.end());
  occupied.erase(std::unique(occupied.begin(), occupied.end()), occupied.end());
  Partition out;
  out.mode = PoolingMode::voxel;
  out.voxel_size = voxel_size;
  out.segments = occupied.size();
  out.segment_of.reserve(keys.size());
  for (const Key& k : keys) {
    out.segment_of.push_back(static_cast<std::size_t>(
        std::lower_bound(occupied.begin(), occupied.end(), k) - occupied.begin()));
  }
  return out;
}

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  std::size_t size_of(std::size_t x) { return size_[find(x)]; }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  // Keeps the smaller root so representatives are stable.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

// Labels in order of each set's first point.
Partition canonical_labels(DisjointSets& sets, std::size_t n) {
  Partition out;
  out.mode = PoolingMode::superpoint;
  out.segment_of.resize(n);
  std::map<std::size_t, std::size_t> label_of_root;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, fresh] = label_of_root.emplace(sets.find(i), label_of_root.size());
    out.segment_of[i] = it->second;
  }
  out.segments = label_of_root.size();
  return out;
}

double scene_cell_size(const Scene& scene, std::size_t k) {
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (const Point& p : scene.points) {
    const double c[3] = {p.x, p.y, p.z};
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], c[d]);
      hi[d] = std::max(hi[d], c[d]);
    }
  }
  // Treat the cloud as a surface: expected spacing ~ sqrt(area / N).
  double area = 0.0;
  const double e[3] = {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
  area = 2.0 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2]);
  const double spacing = std::sqrt(std::max(area, 1e-12) / static_cast<double>(scene.size()));
  // Flat or collinear clouds have near-zero area; bound the shell count.
  const double extent = std::max({e[0], e[1], e[2]});
  return std::max({spacing * std::sqrt(static_cast<double>(k)), extent / 32.0, 1e-6});
}

}  // namespace

Partition build_superpoints(const Scene& scene, const SuperpointParams& params,
                            SuperpointDiagnostics* diagnostics) {
  const std::size_t n = scene.size();
  const std::size_t k = static_cast<std::size_t>(params.k);
  if (params.k < 1 || n < k) {
    throw std::invalid_argument("build_superpoints needs at least k=" +
                                std::to_string(params.k) + " points, got " +
                                std::to_string(n));
  }
  SuperpointDiagnostics local;
  SuperpointDiagnostics& diag = diagnostics ? *diagnostics : local;
  diag = {};

  GridIndex grid(scene.points, scene_cell_size(scene, k));
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) neighbors[i] = grid.knn(i, k);

  auto color_dist = [&](std::size_t a, std::size_t b) {
    const Point& p = scene.points[a];
    const Point& q = scene.points[b];
    return std::sqrt((p.r - q.r) * (p.r - q.r) + (p.g - q.g) * (p.g - q.g) +
                     (p.b - q.b) * (p.b - q.b));
  };

  // Plane fit over the color-compatible part of each neighborhood, so that
  // surfaces of different material do not bend each other's normals.
  std::vector<Eigen::Vector3d> normals(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> support{i};
    for (std::size_t j : neighbors[i]) {
      if (color_dist(i, j) < params.color_bound) support.push_back(j);
    }
    auto at = [&](std::size_t j) {
      const Point& p = scene.points[j];
      return Eigen::Vector3d(p.x, p.y, p.z);
    };
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (std::size_t j : support) centroid += at(j);
    const double count = static_cast<double>(support.size());
    centroid /= count;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (std::size_t j : support) {
      const Eigen::Vector3d d = at(j) - centroid;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov / count);
    const Eigen::Vector3d ev = eig.eigenvalues();  // ascending
    if (support.size() < 3 || ev(1) <= 1e-10 * std::max(ev(2), 1e-300)) {
      normals[i] = Eigen::Vector3d::UnitZ();
      ++diag.degenerate_normals;
    } else {
      normals[i] = eig.eigenvectors().col(0).normalized();
    }
  }

  const double cos_limit = std::cos(params.angle_deg * M_PI / 180.0);
  DisjointSets sets(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : neighbors[i]) {
      // |cos| > cos(limit) <=> unoriented angle < limit.
      if (std::abs(normals[i].dot(normals[j])) > cos_limit &&
          color_dist(i, j) < params.color_bound) {
        sets.unite(i, j);
      }
    }
  }

  auto dist2 = [&](std::size_t a, std::size_t b) {
    const Point& p = scene.points[a];
    const Point& q = scene.points[b];
    return (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y) + (p.z - q.z) * (p.z - q.z);
  };
  const std::size_t min_size = static_cast<std::size_t>(std::max(params.min_size, 1));
  for (bool changed = true; changed;) {
    changed = false;
    Partition current = canonical_labels(sets, n);
    const auto members = current.members();
    for (std::size_t s = 0; s < current.segments; ++s) {
      if (members[s].size() >= min_size) continue;
      const std::size_t root = sets.find(members[s].front());
      // An earlier merge in this pass may have grown the set.
      const std::size_t size = sets.size_of(root);
      // Nearest outside point, preferring color-compatible ones.
      double best = 0.0;
      bool best_compatible = false;
      std::size_t target = n;
      for (std::size_t i : members[s]) {
        for (std::size_t j : neighbors[i]) {
          if (sets.find(j) == root) continue;
          const double d = dist2(i, j);
          const bool compatible = color_dist(i, j) < params.color_bound;
          const bool better =
              target == n || (compatible && !best_compatible) ||
              (compatible == best_compatible && (d < best || (d == best && j < target)));
          if (better) {
            best = d;
            best_compatible = compatible;
            target = j;
          }
        }
      }
      if (target != n && size < min_size) {
        sets.unite(root, target);
        ++diag.merged_small_segments;
        changed = true;
      }
    }
  }
  return canonical_labels(sets, n);
}

Partition partition_from_labels(std::span<const int> labels) {
  std::vector<int> distinct(labels.begin(), labels.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  Partition out;
  out.mode = PoolingMode::superpoint;
  out.segments = distinct.size();
  out.segment_of.reserve(labels.size());
  for (int l : labels) {
    out.segment_of.push_back(static_cast<std::size_t>(
        std::lower_bound(distinct.begin(), distinct.end(), l) - distinct.begin()));
  }
  return out;
}

Partition make_partition(const Scene& scene, const PartitionConfig& config,
                         SuperpointDiagnostics* diagnostics) {
  if (config.mode == PoolingMode::voxel) return voxelize(scene, config.voxel_size);
  if (scene.segment_id) return partition_from_labels(*scene.segment_id);
  return build_superpoints(scene, config.superpoint, diagnostics);
}

SparseMatrix pooling_matrix(const Partition& partition) {
  const auto members = partition.members();
  SparseMatrix m;
  m.rows = partition.segments;
  m.cols = partition.points();
  m.row_offsets.reserve(m.rows + 1);
  m.row_offsets.push_back(0);
  for (const auto& seg : members) {
    const double w = 1.0 / static_cast<double>(seg.size());
    for (std::size_t i : seg) {
      m.col_index.push_back(i);
      m.values.push_back(w);
    }
    m.row_offsets.push_back(m.col_index.size());
  }
  return m;
}

Tensor pool(const Tensor& features, const Partition& partition) {
  if (features.rank() != 2 || features.rows() != partition.points()) {
    throw DimensionError("pool: features " + shape_string(features.shape()) +
                         " for " + std::to_string(partition.points()) + " points");
  }
  return sparse_matmul(pooling_matrix(partition), features);
}

namespace {

// Plurality with ties toward the smaller label; -1 only by strict majority.
int vote(const std::map<int, std::size_t>& counts, std::size_t total) {
  auto unlabeled = counts.find(-1);
  if (unlabeled != counts.end() && 2 * unlabeled->second > total) return -1;
  int best = -1;
  std::size_t best_count = 0;
  for (const auto& [label, count] : counts) {
    if (label < 0) continue;
    if (count > best_count) {  // ascending iteration keeps the smaller label on ties
      best = label;
      best_count = count;
    }
  }
  return best;
}

}  // namespace

SegmentGroundTruth project_ground_truth(const Scene& scene, const Partition& partition) {
  if (partition.points() != scene.size()) {
    throw DimensionError("project_ground_truth: partition covers " +
                         std::to_string(partition.points()) + " points, scene has " +
                         std::to_string(scene.size()));
  }
  const std::size_t m = partition.segments;
  const auto members = partition.members();
  std::map<int, int> class_of_instance;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (scene.instance_id[i] >= 0) class_of_instance[scene.instance_id[i]] = scene.semantic_id[i];
  }

  SegmentGroundTruth gt;
  gt.segment_instance.resize(m);
  gt.segment_semantic.resize(m);
  for (std::size_t s = 0; s < m; ++s) {
    std::map<int, std::size_t> inst_votes, sem_votes;
    for (std::size_t i : members[s]) {
      ++inst_votes[scene.instance_id[i]];
      ++sem_votes[scene.semantic_id[i]];
    }
    const int inst = vote(inst_votes, members[s].size());
    gt.segment_instance[s] = inst;
    gt.segment_semantic[s] =
        inst >= 0 ? class_of_instance.at(inst) : vote(sem_votes, members[s].size());
  }

  std::vector<int> owners;
  for (int inst : gt.segment_instance) {
    if (inst >= 0) owners.push_back(inst);
  }
  std::sort(owners.begin(), owners.end());
  owners.erase(std::unique(owners.begin(), owners.end()), owners.end());
  gt.instance_ids = owners;
  gt.lost_instances = class_of_instance.size() - owners.size();
  gt.segment_gt.assign(m, -1);
  gt.instance_masks.assign(owners.size(), std::vector<std::uint8_t>(m, 0));
  for (std::size_t k = 0; k < owners.size(); ++k) {
    gt.instance_class.push_back(class_of_instance.at(owners[k]));
  }
  for (std::size_t s = 0; s < m; ++s) {
    if (gt.segment_instance[s] < 0) continue;
    const auto k = static_cast<std::size_t>(
        std::lower_bound(owners.begin(), owners.end(), gt.segment_instance[s]) - owners.begin());
    gt.segment_gt[s] = static_cast<int>(k);
    gt.instance_masks[k][s] = 1;
  }
  gt.semantic_masks.assign(scene.catalog.size(), std::vector<std::uint8_t>(m, 0));
  for (std::size_t s = 0; s < m; ++s) {
    if (gt.segment_semantic[s] >= 0) gt.semantic_masks[gt.segment_semantic[s]][s] = 1;
  }
  return gt;
}

}  // namespace of3d
