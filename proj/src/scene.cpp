#include "of3d/scene.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "of3d/random.hpp"
#include "of3d/text_io.hpp"

namespace of3d {

// ---- catalog --------------------------------------------------------------

ClassCatalog::ClassCatalog(std::vector<ClassInfo> classes)
    : classes_(std::move(classes)) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    const auto& c = classes_[i];
    if (c.name.empty() || c.name.find_first_of(" \t\r\n") != std::string::npos) {
      throw SceneError("class name must be a non-empty token: '" + c.name + "'");
    }
    if (!names.insert(c.name).second) {
      throw SceneError("duplicate class name '" + c.name + "'");
    }
    if (c.is_thing) thing_ids_.push_back(static_cast<int>(i));
  }
}

ClassCatalog ClassCatalog::synthetic_default() {
  return ClassCatalog({{"floor", false},
                       {"wall", false},
                       {"ceiling", false},
                       {"table", true},
                       {"chair", true},
                       {"sofa", true},
                       {"bookcase", true}});
}

bool ClassCatalog::is_thing(int semantic_id) const {
  return semantic_id >= 0 && static_cast<std::size_t>(semantic_id) < classes_.size() &&
         classes_[semantic_id].is_thing;
}

int ClassCatalog::thing_index(int semantic_id) const {
  auto it = std::lower_bound(thing_ids_.begin(), thing_ids_.end(), semantic_id);
  if (it == thing_ids_.end() || *it != semantic_id) return -1;
  return static_cast<int>(it - thing_ids_.begin());
}

// ---- validation -----------------------------------------------------------

namespace {

// Returns an empty string when point `i` is consistent, else a description.
// `owner` tracks the semantic id first seen for each instance.
std::string check_point(const Scene& s, std::size_t i, std::map<int, int>& owner) {
  const Point& p = s.points[i];
  for (double v : {p.x, p.y, p.z}) {
    if (!std::isfinite(v)) return "non-finite coordinate";
  }
  for (double v : {p.r, p.g, p.b}) {
    if (!(v >= 0.0 && v <= 1.0)) return "color outside [0,1]";
  }
  const int sem = s.semantic_id[i];
  const int inst = s.instance_id[i];
  if (sem < -1 || sem >= static_cast<int>(s.catalog.size())) {
    return "semantic id " + std::to_string(sem) + " outside catalog";
  }
  if (inst < -1) return "instance id " + std::to_string(inst) + " below -1";
  if (inst >= 0) {
    if (!s.catalog.is_thing(sem)) {
      return "instance " + std::to_string(inst) + " has non-thing semantic id " +
             std::to_string(sem);
    }
    auto [it, fresh] = owner.emplace(inst, sem);
    if (!fresh && it->second != sem) {
      return "instance " + std::to_string(inst) + " carries semantic ids " +
             std::to_string(it->second) + " and " + std::to_string(sem);
    }
  }
  if (s.segment_id && (*s.segment_id)[i] < 0) return "negative segment id";
  return {};
}

}  // namespace

void validate_scene(const Scene& scene) {
  if (scene.catalog.empty()) throw SceneError("empty class catalog");
  if (scene.points.empty()) throw SceneError("scene has no points");
  const std::size_t n = scene.points.size();
  if (scene.instance_id.size() != n || scene.semantic_id.size() != n ||
      (scene.segment_id && scene.segment_id->size() != n)) {
    throw SceneError("per-point label arrays do not match point count");
  }
  std::map<int, int> owner;
  for (std::size_t i = 0; i < n; ++i) {
    if (auto err = check_point(scene, i, owner); !err.empty()) {
      throw SceneError("point " + std::to_string(i) + ": " + err);
    }
  }
}

// ---- text format ----------------------------------------------------------

Scene parse_scene(const std::string& text, const std::string& source) {
  LineReader in(source, text);
  Scene scene;
  const std::string_view header = in.expect("header");
  bool with_segments = false;
  if (header == "OF3D-SCENE v1.1") {
    with_segments = true;
  } else if (header != "OF3D-SCENE v1") {
    in.fail("malformed header '" + std::string(header) + "'");
  }

  long long k = 0;
  {
    auto tok = split_ws(in.expect("classes line"));
    if (tok.size() != 2 || tok[0] != "classes" || !parse_int(tok[1], k) || k < 1) {
      in.fail("expected 'classes <K>' with K >= 1");
    }
  }
  std::vector<ClassInfo> classes;
  for (long long c = 0; c < k; ++c) {
    auto tok = split_ws(in.expect("class line"));
    if (tok.size() != 2 || (tok[1] != "thing" && tok[1] != "stuff")) {
      in.fail("expected '<name> <thing|stuff>'");
    }
    classes.push_back({std::string(tok[0]), tok[1] == "thing"});
  }
  try {
    scene.catalog = ClassCatalog(std::move(classes));
  } catch (const SceneError& e) {
    in.fail(e.what());
  }

  long long n = 0;
  {
    auto tok = split_ws(in.expect("points line"));
    if (tok.size() != 2 || tok[0] != "points" || !parse_int(tok[1], n) || n < 1) {
      in.fail("expected 'points <N>' with N >= 1");
    }
  }
  const std::size_t columns = with_segments ? 9 : 8;
  scene.points.reserve(n);
  scene.instance_id.reserve(n);
  scene.semantic_id.reserve(n);
  if (with_segments) scene.segment_id.emplace().reserve(n);
  std::map<int, int> owner;
  for (long long i = 0; i < n; ++i) {
    auto tok = split_ws(in.expect("point line"));
    if (tok.size() != columns) {
      in.fail("expected " + std::to_string(columns) + " columns, got " +
              std::to_string(tok.size()) + " (point count mismatch?)");
    }
    Point p;
    double* fields[] = {&p.x, &p.y, &p.z, &p.r, &p.g, &p.b};
    for (int f = 0; f < 6; ++f) {
      if (!parse_double(tok[f], *fields[f])) {
        in.fail("bad number '" + std::string(tok[f]) + "'");
      }
    }
    long long inst = 0, sem = 0, seg = 0;
    if (!parse_int(tok[6], inst) || !parse_int(tok[7], sem)) in.fail("bad label");
    if (with_segments && !parse_int(tok[8], seg)) in.fail("bad segment id");
    scene.points.push_back(p);
    scene.instance_id.push_back(static_cast<int>(inst));
    scene.semantic_id.push_back(static_cast<int>(sem));
    if (with_segments) scene.segment_id->push_back(static_cast<int>(seg));
    if (auto err = check_point(scene, scene.points.size() - 1, owner); !err.empty()) {
      in.fail(err);
    }
  }
  std::string_view rest;
  while (in.next(rest)) {
    if (!split_ws(rest).empty()) in.fail("trailing content after point block");
  }
  return scene;
}

std::string format_scene(const Scene& scene) {
  validate_scene(scene);
  std::string out;
  out.reserve(scene.size() * 64 + 256);
  out += scene.segment_id ? "OF3D-SCENE v1.1\n" : "OF3D-SCENE v1\n";
  out += "classes " + std::to_string(scene.catalog.size()) + "\n";
  for (const auto& c : scene.catalog.classes()) {
    out += c.name + (c.is_thing ? " thing\n" : " stuff\n");
  }
  out += "points " + std::to_string(scene.size()) + "\n";
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Point& p = scene.points[i];
    for (double v : {p.x, p.y, p.z, p.r, p.g, p.b}) {
      out += format_double(v);
      out += ' ';
    }
    out += std::to_string(scene.instance_id[i]);
    out += ' ';
    out += std::to_string(scene.semantic_id[i]);
    if (scene.segment_id) {
      out += ' ';
      out += std::to_string((*scene.segment_id)[i]);
    }
    out += '\n';
  }
  return out;
}

Scene load_scene(const std::filesystem::path& path) {
  return parse_scene(read_file(path), path.string());
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  write_file(path, format_scene(scene));
}

// ---- synthetic rooms ------------------------------------------------------

namespace {

std::array<double, 3> class_color(std::size_t id) {
  static constexpr std::array<std::array<double, 3>, 7> kPalette{{
      {0.60, 0.40, 0.20},  // floor
      {0.90, 0.90, 0.90},  // wall
      {0.20, 0.60, 0.90},  // ceiling
      {0.90, 0.10, 0.10},  // table
      {0.10, 0.80, 0.20},  // chair
      {0.55, 0.10, 0.80},  // sofa
      {0.10, 0.20, 0.45},  // bookcase
  }};
  if (id < kPalette.size()) return kPalette[id];
  const std::uint64_t h = mix_seed(0x5eed, id);
  return {0.1 + 0.8 * static_cast<double>(h & 0xff) / 255.0,
          0.1 + 0.8 * static_cast<double>((h >> 8) & 0xff) / 255.0,
          0.1 + 0.8 * static_cast<double>((h >> 16) & 0xff) / 255.0};
}

// Axis-aligned rectangle: origin plus two edge vectors along coordinate axes.
struct Rect {
  std::array<double, 3> origin;
  std::array<double, 3> u;
  std::array<double, 3> v;
  double area() const {
    auto len = [](const std::array<double, 3>& a) {
      return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    };
    return len(u) * len(v);
  }
};

double truncated_normal(Rng& rng) {
  double z;
  do {
    z = rng.normal();
  } while (std::abs(z) > 3.0);
  return z;
}

}  // namespace

SyntheticScene generate_synthetic_scene(std::uint64_t seed,
                                        const SyntheticParams& params) {
  const auto& room = params.room;
  if (!(room[0] > 0 && room[1] > 0 && room[2] > 0)) {
    throw std::invalid_argument("room dimensions must be positive");
  }
  if (params.n_things < 0) throw std::invalid_argument("n_things must be >= 0");
  if (params.points_per_surface < 1) {
    throw std::invalid_argument("points_per_surface must be >= 1");
  }
  const ClassCatalog& catalog = params.catalog;
  const auto& things = catalog.thing_ids();
  if (params.n_things > 0 && things.empty()) {
    throw std::invalid_argument("catalog has no thing classes");
  }
  auto find_class = [&](const char* name, int fallback) {
    for (std::size_t i = 0; i < catalog.size(); ++i) {
      if (catalog[i].name == name) return static_cast<int>(i);
    }
    return fallback;
  };
  int first_stuff = -1;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    if (!catalog[i].is_thing) {
      first_stuff = static_cast<int>(i);
      break;
    }
  }
  if (first_stuff < 0) throw std::invalid_argument("catalog has no stuff classes");
  const int floor_id = find_class("floor", first_stuff);
  const int wall_id = find_class("wall", first_stuff);
  const int ceiling_id = find_class("ceiling", first_stuff);

  Rng rng(seed);

  // Place non-overlapping boxes resting on the floor.
  constexpr double kWallMargin = 0.2;
  constexpr double kGap = 0.3;
  constexpr int kRetries = 2000;
  std::vector<AxisBox> boxes;
  for (int t = 0; t < params.n_things; ++t) {
    bool placed = false;
    for (int attempt = 0; attempt < kRetries && !placed; ++attempt) {
      const double sx = rng.uniform(0.4, 0.9);
      const double sy = rng.uniform(0.4, 0.9);
      const double sz = std::min(rng.uniform(0.3, 1.0), room[2] * 0.8);
      const double span_x = room[0] - 2 * kWallMargin - sx;
      const double span_y = room[1] - 2 * kWallMargin - sy;
      if (span_x <= 0 || span_y <= 0) continue;
      AxisBox b;
      b.min = {kWallMargin + rng.uniform() * span_x, kWallMargin + rng.uniform() * span_y, 0.0};
      b.max = {b.min[0] + sx, b.min[1] + sy, sz};
      placed = std::none_of(boxes.begin(), boxes.end(), [&](const AxisBox& o) {
        return b.min[0] < o.max[0] + kGap && o.min[0] < b.max[0] + kGap &&
               b.min[1] < o.max[1] + kGap && o.min[1] < b.max[1] + kGap;
      });
      if (placed) boxes.push_back(b);
    }
    if (!placed) {
      throw PlacementError("could not place thing " + std::to_string(t) + " of " +
                           std::to_string(params.n_things) + " without overlap after " +
                           std::to_string(kRetries) + " attempts");
    }
  }

  SyntheticScene out;
  Scene& scene = out.scene;
  scene.catalog = catalog;
  auto emit = [&](std::array<double, 3> pos, int sem, int inst) {
    const auto base = class_color(static_cast<std::size_t>(sem));
    Point p;
    p.x = pos[0] + params.noise * truncated_normal(rng);
    p.y = pos[1] + params.noise * truncated_normal(rng);
    p.z = pos[2] + params.noise * truncated_normal(rng);
    p.r = std::clamp(base[0] + 0.02 * rng.normal(), 0.0, 1.0);
    p.g = std::clamp(base[1] + 0.02 * rng.normal(), 0.0, 1.0);
    p.b = std::clamp(base[2] + 0.02 * rng.normal(), 0.0, 1.0);
    scene.points.push_back(p);
    scene.semantic_id.push_back(sem);
    scene.instance_id.push_back(inst);
  };
  auto on_rect = [&](const Rect& r) {
    const double a = rng.uniform(), b = rng.uniform();
    return std::array<double, 3>{r.origin[0] + a * r.u[0] + b * r.v[0],
                                 r.origin[1] + a * r.u[1] + b * r.v[1],
                                 r.origin[2] + a * r.u[2] + b * r.v[2]};
  };
  auto under_box = [&](const std::array<double, 3>& p) {
    return std::any_of(boxes.begin(), boxes.end(), [&](const AxisBox& b) {
      return p[0] >= b.min[0] && p[0] <= b.max[0] && p[1] >= b.min[1] && p[1] <= b.max[1];
    });
  };

  const double lx = room[0], ly = room[1], lz = room[2];
  const int n = params.points_per_surface;
  // Floor, skipping the footprints hidden under things.
  for (int i = 0, tries = 0; i < n && tries < 1000 * n; ++tries) {
    auto p = on_rect({{0, 0, 0}, {lx, 0, 0}, {0, ly, 0}});
    if (under_box(p)) continue;
    emit(p, floor_id, -1);
    ++i;
  }
  for (int i = 0; i < n; ++i) emit(on_rect({{0, 0, lz}, {lx, 0, 0}, {0, ly, 0}}), ceiling_id, -1);
  const std::array<Rect, 4> walls{{{{0, 0, 0}, {lx, 0, 0}, {0, 0, lz}},
                                   {{0, ly, 0}, {lx, 0, 0}, {0, 0, lz}},
                                   {{0, 0, 0}, {0, ly, 0}, {0, 0, lz}},
                                   {{lx, 0, 0}, {0, ly, 0}, {0, 0, lz}}}};
  for (const Rect& w : walls)
    for (int i = 0; i < n; ++i) emit(on_rect(w), wall_id, -1);

  for (std::size_t t = 0; t < boxes.size(); ++t) {
    const AxisBox& b = boxes[t];
    const int sem = things[t % things.size()];
    const double dx = b.max[0] - b.min[0], dy = b.max[1] - b.min[1],
                 dz = b.max[2] - b.min[2];
    const std::array<Rect, 5> faces{{{{b.min[0], b.min[1], b.max[2]}, {dx, 0, 0}, {0, dy, 0}},
                                     {{b.min[0], b.min[1], 0}, {dx, 0, 0}, {0, 0, dz}},
                                     {{b.min[0], b.max[1], 0}, {dx, 0, 0}, {0, 0, dz}},
                                     {{b.min[0], b.min[1], 0}, {0, dy, 0}, {0, 0, dz}},
                                     {{b.max[0], b.min[1], 0}, {0, dy, 0}, {0, 0, dz}}}};
    double total = 0;
    for (const Rect& f : faces) total += f.area();
    for (int i = 0; i < n; ++i) {
      double pick = rng.uniform() * total;
      std::size_t f = 0;
      while (f + 1 < faces.size() && pick >= faces[f].area()) pick -= faces[f++].area();
      emit(on_rect(faces[f]), sem, static_cast<int>(t));
    }
    out.things.push_back(b);
  }
  validate_scene(scene);
  return out;
}

// ---- augmentation ---------------------------------------------------------

AugmentTransform sample_augment(std::uint64_t seed, const AugmentFlags& flags) {
  Rng rng(mix_seed(seed, 0xa06));
  AugmentTransform t;
  // Draw all three regardless of flags so toggling one leaves the others fixed.
  const double flip = rng.uniform();
  const double angle = rng.uniform(0.0, 2.0 * M_PI);
  const double scale = rng.uniform(0.9, 1.1);
  if (flags.flip) t.flip_x = flip < 0.5;
  if (flags.z_rotate) t.angle = angle;
  if (flags.scale) t.scale = scale;
  return t;
}

Scene apply_augment(const Scene& scene, const AugmentTransform& t) {
  Scene out = scene;
  const double c = std::cos(t.angle), s = std::sin(t.angle);
  for (Point& p : out.points) {
    double x = t.flip_x ? -p.x : p.x;
    double y = p.y;
    const double rx = c * x - s * y;
    const double ry = s * x + c * y;
    p.x = rx * t.scale;
    p.y = ry * t.scale;
    p.z = p.z * t.scale;
  }
  return out;
}

Scene augment(const Scene& scene, std::uint64_t seed, const AugmentFlags& flags) {
  if (!flags.flip && !flags.z_rotate && !flags.scale) return scene;
  return apply_augment(scene, sample_augment(seed, flags));
}

}  // namespace of3d
