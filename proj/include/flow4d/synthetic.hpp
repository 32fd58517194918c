#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flow4d/geometry.hpp"
#include "flow4d/rng.hpp"

namespace flow4d {

// All shapes live in [-0.5, 0.5]^3 and must stay within [-0.45, 0.45]^3 over
// t in [0, 1]. Each family is a static reference solid carried by a global
// smooth bijection of space, so the indicator, the point flow between any two
// times, and flow composition are all exact.
enum class ShapeKind {
  translating_sphere,
  breathing_sphere,
  two_lobe_capsule,
  articulated_dumbbell,
};

const char* shape_kind_name(ShapeKind k);
ShapeKind shape_kind_from_name(const std::string& name);

struct SurfaceSample {
  Point3 ref;     // position on the reference (t = 0) surface
  Point3 normal;  // outward normal at ref
};

struct DeformingShape {
  ShapeKind kind = ShapeKind::translating_sphere;
  int duration = 8;  // T frames

  Point3 center;   // spheres, capsule
  Point3 velocity; // translating_sphere
  double radius = 0.0;  // sphere radius
  double amp = 0.0;     // breathing / stretch amplitude, twist angle (rad)
  double half_len = 0.0;  // capsule half length
  double r_end = 0.0;     // capsule lobe radius
  double r_tube = 0.0;    // capsule / dumbbell tube radius
  Point3 ball_a, ball_b;  // dumbbell lobe centers (reference)
  double ra = 0.0, rb = 0.0;  // dumbbell lobe radii
  double blend_x0 = 0.0, blend_x1 = 0.0;  // twist ramp along x

  static DeformingShape make_translating_sphere(int T = 8);
  static DeformingShape make_breathing_sphere(int T = 8);
  static DeformingShape make_two_lobe_capsule(int T = 8);
  static DeformingShape make_articulated_dumbbell(int T = 8,
                                                  double theta_max = 0.35);
  static DeformingShape make(ShapeKind kind, int T = 8);

  // tol > 0 accepts points within tol of the boundary (flow preconditions);
  // occupancy labels use the exact indicator (tol = 0).
  bool inside(const Point3& p, double t, double tol = 0.0) const;
  // Exact material map from time t_from to t_to.
  Point3 deform(const Point3& p, double t_from, double t_to) const;
  SurfaceSample sample_reference_surface(Rng& rng) const;
  Point3 map_point(const SurfaceSample& s, double t) const;
  Point3 map_normal(const SurfaceSample& s, double t) const;
  // Largest |coordinate| reached by any shape point over t in [0, 1].
  double max_extent() const;

  std::vector<double> pack_params() const;
  void unpack_params(const std::vector<double>& p);
};

struct PointCloudFrame {
  std::vector<Point3> points;
  double time = 0.0;
};

struct PointCloudSequence {
  std::vector<PointCloudFrame> frames;
  std::vector<std::uint32_t> correspondence_ids;  // empty when absent

  std::size_t num_frames() const { return frames.size(); }
  void validate() const;  // strictly increasing times, sizes consistent
  // Same motion viewed backwards: frame order reversed, times remapped to
  // t_min + t_max - t so they increase again with the same spacing.
  PointCloudSequence reversed() const;
};

struct OccupancySample {
  Point3 point;
  double time = 0.0;
  int label = 0;
};

struct FlowSample {
  Point3 point_t;
  Point3 point_t_next;
  double time = 0.0;
};

enum class TemporalMode { even, uneven };

PointCloudSequence sample_surface_sequence(const DeformingShape& shape,
                                           int n_points, TemporalMode mode,
                                           double noise_sigma,
                                           std::uint64_t seed);

std::vector<OccupancySample> sample_occupancy_queries(
    const DeformingShape& shape, double time, int n_uniform,
    int n_near_surface, double band, std::uint64_t seed);

std::vector<FlowSample> ground_truth_flow(const DeformingShape& shape,
                                          const std::vector<Point3>& points,
                                          double t_from, double t_to);

// ---------------------------------------------------------------------------
// Dataset container: one binary file per sequence (magic "F4D1") plus a JSON
// sidecar with the generation settings.

struct GenSettings {
  ShapeKind kind = ShapeKind::translating_sphere;
  int T = 8;
  int n_points = 300;
  TemporalMode temporal_mode = TemporalMode::even;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct SequenceRecord {
  DeformingShape shape;
  PointCloudSequence sequence;
  GenSettings settings;
};

void save_sequence(const SequenceRecord& rec, const std::string& base_path);
SequenceRecord load_sequence(const std::string& base_path);

// Directory of seq_XXXX.f4d files.
std::vector<std::string> list_dataset(const std::string& dir);
std::vector<SequenceRecord> load_dataset(const std::string& dir);

}  // namespace flow4d
