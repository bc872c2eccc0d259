#pragma once

// Annotated point clouds and the OF3D-SCENE text format.
//
//   OF3D-SCENE v1            (or v1.1 with a trailing segment_id column)
//   classes <K>
//   <name> <thing|stuff>     × K
//   points <N>
//   x y z r g b instance_id semantic_id [segment_id]   × N

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace of3d {

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClassInfo {
  std::string name;
  bool is_thing = false;
  bool operator==(const ClassInfo&) const = default;
};

class ClassCatalog {
 public:
  ClassCatalog() = default;
  explicit ClassCatalog(std::vector<ClassInfo> classes);

  // floor, wall, ceiling (stuff); table, chair, sofa, bookcase (thing)
  static ClassCatalog synthetic_default();

  std::size_t size() const { return classes_.size(); }
  bool empty() const { return classes_.empty(); }
  const ClassInfo& operator[](std::size_t i) const { return classes_[i]; }
  bool is_thing(int semantic_id) const;
  // Catalog ids of thing classes, ascending. Position in this list is the
  // class index used by the instance classifier.
  const std::vector<int>& thing_ids() const { return thing_ids_; }
  // Position of `semantic_id` among thing classes, or -1.
  int thing_index(int semantic_id) const;
  const std::vector<ClassInfo>& classes() const { return classes_; }

  bool operator==(const ClassCatalog& o) const { return classes_ == o.classes_; }

 private:
  std::vector<ClassInfo> classes_;
  std::vector<int> thing_ids_;
};

struct Point {
  double x = 0, y = 0, z = 0;
  double r = 0, g = 0, b = 0;
  bool operator==(const Point&) const = default;
};

struct Scene {
  ClassCatalog catalog;
  std::vector<Point> points;
  std::vector<int> instance_id;  // -1: no instance
  std::vector<int> semantic_id;  // -1: unlabeled
  // Precomputed partition labels (v1.1 files only).
  std::optional<std::vector<int>> segment_id;

  std::size_t size() const { return points.size(); }
  bool operator==(const Scene&) const = default;
};

// Throws SceneError naming the first violated invariant.
void validate_scene(const Scene& scene);

Scene parse_scene(const std::string& text, const std::string& source = "<scene>");
std::string format_scene(const Scene& scene);
Scene load_scene(const std::filesystem::path& path);
void save_scene(const Scene& scene, const std::filesystem::path& path);

// ---- synthetic rooms ------------------------------------------------------

struct AxisBox {
  std::array<double, 3> min{};
  std::array<double, 3> max{};
};

struct SyntheticParams {
  std::array<double, 3> room{4.0, 4.0, 2.5};
  int n_things = 8;
  // Points sampled on each room surface and on each thing.
  int points_per_surface = 140;
  double noise = 0.005;
  ClassCatalog catalog = ClassCatalog::synthetic_default();
};

struct SyntheticScene {
  Scene scene;
  std::vector<AxisBox> things;  // indexed by instance id
};

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

SyntheticScene generate_synthetic_scene(std::uint64_t seed,
                                        const SyntheticParams& params = {});

// ---- augmentation ---------------------------------------------------------

struct AugmentFlags {
  bool flip = true;
  bool z_rotate = true;
  bool scale = true;
};

struct AugmentTransform {
  bool flip_x = false;
  double angle = 0.0;  // radians about +z
  double scale = 1.0;
};

AugmentTransform sample_augment(std::uint64_t seed, const AugmentFlags& flags);
Scene apply_augment(const Scene& scene, const AugmentTransform& transform);
Scene augment(const Scene& scene, std::uint64_t seed, const AugmentFlags& flags);

}  // namespace of3d
