#include "flow4d/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace flow4d {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kWorkingHalf = 0.5;
constexpr double kSafeHalf = 0.45;

double dist_to_segment(const Point3& p, const Point3& a, const Point3& b) {
  const Point3 ab = b - a;
  const double len2 = ab.norm2();
  double s = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  return (p - (a + ab * s)).norm();
}

Point3 uniform_dir(Rng& rng) {
  // Marsaglia rejection on the unit ball.
  for (;;) {
    const double x = rng.uniform(-1.0, 1.0);
    const double y = rng.uniform(-1.0, 1.0);
    const double z = rng.uniform(-1.0, 1.0);
    const double n2 = x * x + y * y + z * z;
    if (n2 > 1e-12 && n2 <= 1.0) {
      const double n = std::sqrt(n2);
      return {x / n, y / n, z / n};
    }
  }
}

// smoothstep ramp of the twist: 0 below x0, 1 above x1
double twist_weight(const DeformingShape& s, double x) {
  if (x <= s.blend_x0) return 0.0;
  if (x >= s.blend_x1) return 1.0;
  const double u = (x - s.blend_x0) / (s.blend_x1 - s.blend_x0);
  return u * u * (3.0 - 2.0 * u);
}

double breathing_scale(const DeformingShape& s, double t) {
  return 1.0 + s.amp * std::sin(2.0 * kPi * t);
}

double stretch_x(const DeformingShape& s, double t) {
  return 1.0 + s.amp * std::sin(2.0 * kPi * t);
}

double twist_angle(const DeformingShape& s, double t) {
  // monotone articulation: every frame is geometrically distinct, so the
  // frame codes can tell the motion's phases apart
  return s.amp * t;
}

Point3 rotate_x(const Point3& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {p.x, c * p.y - s * p.z, s * p.y + c * p.z};
}

}  // namespace

const char* shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::translating_sphere:
      return "translating_sphere";
    case ShapeKind::breathing_sphere:
      return "breathing_sphere";
    case ShapeKind::two_lobe_capsule:
      return "two_lobe_capsule";
    case ShapeKind::articulated_dumbbell:
      return "articulated_dumbbell";
  }
  return "unknown";
}

ShapeKind shape_kind_from_name(const std::string& name) {
  if (name == "translating_sphere") return ShapeKind::translating_sphere;
  if (name == "breathing_sphere") return ShapeKind::breathing_sphere;
  if (name == "two_lobe_capsule") return ShapeKind::two_lobe_capsule;
  if (name == "articulated_dumbbell") return ShapeKind::articulated_dumbbell;
  throw std::runtime_error("unknown shape kind: " + name);
}

DeformingShape DeformingShape::make_translating_sphere(int T) {
  DeformingShape s;
  s.kind = ShapeKind::translating_sphere;
  s.duration = T;
  s.center = {-0.15, 0.0, 0.0};
  s.velocity = {0.3, 0.0, 0.0};
  s.radius = 0.2;
  return s;
}

DeformingShape DeformingShape::make_breathing_sphere(int T) {
  DeformingShape s;
  s.kind = ShapeKind::breathing_sphere;
  s.duration = T;
  s.center = {0.0, 0.0, 0.0};
  s.radius = 0.25;
  s.amp = 0.3;
  return s;
}

DeformingShape DeformingShape::make_two_lobe_capsule(int T) {
  DeformingShape s;
  s.kind = ShapeKind::two_lobe_capsule;
  s.duration = T;
  s.center = {0.0, 0.0, 0.0};
  s.half_len = 0.22;
  s.r_end = 0.12;
  s.r_tube = 0.06;
  s.amp = 0.2;
  return s;
}

DeformingShape DeformingShape::make_articulated_dumbbell(int T,
                                                         double theta_max) {
  DeformingShape s;
  s.kind = ShapeKind::articulated_dumbbell;
  s.duration = T;
  s.ball_a = {-0.22, 0.0, 0.0};
  s.ball_b = {0.22, 0.14, 0.0};
  s.ra = 0.13;
  s.rb = 0.11;
  s.r_tube = 0.05;
  s.blend_x0 = -0.05;
  s.blend_x1 = 0.18;
  s.amp = theta_max;
  return s;
}

DeformingShape DeformingShape::make(ShapeKind kind, int T) {
  switch (kind) {
    case ShapeKind::translating_sphere:
      return make_translating_sphere(T);
    case ShapeKind::breathing_sphere:
      return make_breathing_sphere(T);
    case ShapeKind::two_lobe_capsule:
      return make_two_lobe_capsule(T);
    case ShapeKind::articulated_dumbbell:
      return make_articulated_dumbbell(T);
  }
  throw std::runtime_error("bad shape kind");
}

// Pull p back to reference (t = 0) coordinates.
static Point3 pull_back(const DeformingShape& s, const Point3& p, double t) {
  switch (s.kind) {
    case ShapeKind::translating_sphere:
      return p - s.velocity * t;
    case ShapeKind::breathing_sphere:
      return s.center + (p - s.center) * (1.0 / breathing_scale(s, t));
    case ShapeKind::two_lobe_capsule: {
      const double sx = stretch_x(s, t);
      const double syz = 1.0 / std::sqrt(sx);
      const Point3 d = p - s.center;
      return s.center + Point3{d.x / sx, d.y / syz, d.z / syz};
    }
    case ShapeKind::articulated_dumbbell:
      return rotate_x(p, -twist_angle(s, t) * twist_weight(s, p.x));
  }
  return p;
}

static Point3 push_forward(const DeformingShape& s, const Point3& ref,
                           double t) {
  switch (s.kind) {
    case ShapeKind::translating_sphere:
      return ref + s.velocity * t;
    case ShapeKind::breathing_sphere:
      return s.center + (ref - s.center) * breathing_scale(s, t);
    case ShapeKind::two_lobe_capsule: {
      const double sx = stretch_x(s, t);
      const double syz = 1.0 / std::sqrt(sx);
      const Point3 d = ref - s.center;
      return s.center + Point3{d.x * sx, d.y * syz, d.z * syz};
    }
    case ShapeKind::articulated_dumbbell:
      return rotate_x(ref, twist_angle(s, t) * twist_weight(s, ref.x));
  }
  return ref;
}

static bool inside_reference(const DeformingShape& s, const Point3& q,
                             double tol) {
  switch (s.kind) {
    case ShapeKind::translating_sphere:
    case ShapeKind::breathing_sphere:
      return (q - s.center).norm() <= s.radius + tol;
    case ShapeKind::two_lobe_capsule: {
      const Point3 a = s.center + Point3{-s.half_len, 0, 0};
      const Point3 b = s.center + Point3{s.half_len, 0, 0};
      return (q - a).norm() <= s.r_end + tol ||
             (q - b).norm() <= s.r_end + tol ||
             dist_to_segment(q, a, b) <= s.r_tube + tol;
    }
    case ShapeKind::articulated_dumbbell:
      return (q - s.ball_a).norm() <= s.ra + tol ||
             (q - s.ball_b).norm() <= s.rb + tol ||
             dist_to_segment(q, s.ball_a, s.ball_b) <= s.r_tube + tol;
  }
  return false;
}

bool DeformingShape::inside(const Point3& p, double t, double tol) const {
  return inside_reference(*this, pull_back(*this, p, t), tol);
}

Point3 DeformingShape::deform(const Point3& p, double t_from,
                              double t_to) const {
  return push_forward(*this, pull_back(*this, p, t_from), t_to);
}

SurfaceSample DeformingShape::sample_reference_surface(Rng& rng) const {
  switch (kind) {
    case ShapeKind::translating_sphere:
    case ShapeKind::breathing_sphere: {
      const Point3 n = uniform_dir(rng);
      return {center + n * radius, n};
    }
    case ShapeKind::two_lobe_capsule:
    case ShapeKind::articulated_dumbbell: {
      Point3 ca, cb;
      double r_a, r_b;
      if (kind == ShapeKind::two_lobe_capsule) {
        ca = center + Point3{-half_len, 0, 0};
        cb = center + Point3{half_len, 0, 0};
        r_a = r_b = r_end;
      } else {
        ca = ball_a;
        cb = ball_b;
        r_a = ra;
        r_b = rb;
      }
      const double tube_len = (cb - ca).norm();
      const double area_a = 4.0 * kPi * r_a * r_a;
      const double area_b = 4.0 * kPi * r_b * r_b;
      const double area_t = 2.0 * kPi * r_tube * tube_len;
      const double total = area_a + area_b + area_t;
      const Point3 axis = (cb - ca).normalized();
      // orthonormal frame around the tube axis
      Point3 u = std::abs(axis.x) < 0.9 ? Point3{1, 0, 0} : Point3{0, 1, 0};
      u = (u - axis * u.dot(axis)).normalized();
      const Point3 v = axis.cross(u);
      for (int attempt = 0; attempt < 10000; ++attempt) {
        const double pick = rng.uniform(0.0, total);
        Point3 ref, n;
        bool on_a = false, on_b = false, on_tube = false;
        if (pick < area_a) {
          n = uniform_dir(rng);
          ref = ca + n * r_a;
          on_a = true;
        } else if (pick < area_a + area_b) {
          n = uniform_dir(rng);
          ref = cb + n * r_b;
          on_b = true;
        } else {
          const double st = rng.uniform();
          const double phi = rng.uniform(0.0, 2.0 * kPi);
          n = u * std::cos(phi) + v * std::sin(phi);
          ref = ca + (cb - ca) * st + n * r_tube;
          on_tube = true;
        }
        // reject samples buried inside one of the other parts
        const bool in_a = !on_a && (ref - ca).norm() < r_a;
        const bool in_b = !on_b && (ref - cb).norm() < r_b;
        const bool in_t = !on_tube && dist_to_segment(ref, ca, cb) < r_tube;
        if (!in_a && !in_b && !in_t) return {ref, n};
      }
      throw std::runtime_error("surface sampling failed to converge");
    }
  }
  throw std::runtime_error("bad shape kind");
}

Point3 DeformingShape::map_point(const SurfaceSample& s, double t) const {
  return push_forward(*this, s.ref, t);
}

Point3 DeformingShape::map_normal(const SurfaceSample& s, double t) const {
  switch (kind) {
    case ShapeKind::translating_sphere:
    case ShapeKind::breathing_sphere:
      return s.normal;
    case ShapeKind::two_lobe_capsule: {
      const double sx = stretch_x(*this, t);
      const double syz = 1.0 / std::sqrt(sx);
      // inverse-transpose of diag(sx, syz, syz)
      return Point3{s.normal.x / sx, s.normal.y / syz, s.normal.z / syz}
          .normalized();
    }
    case ShapeKind::articulated_dumbbell:
      // local rotation; the ramp's shear term is ignored (jitter use only)
      return rotate_x(s.normal, twist_angle(*this, t) *
                                    twist_weight(*this, s.ref.x));
  }
  return s.normal;
}

double DeformingShape::max_extent() const {
  switch (kind) {
    case ShapeKind::translating_sphere: {
      double m = 0.0;
      for (double t : {0.0, 1.0}) {
        const Point3 c = center + velocity * t;
        m = std::max({m, std::abs(c.x) + radius, std::abs(c.y) + radius,
                      std::abs(c.z) + radius});
      }
      return m;
    }
    case ShapeKind::breathing_sphere: {
      const double rmax = radius * (1.0 + std::abs(amp));
      return std::max({std::abs(center.x), std::abs(center.y),
                       std::abs(center.z)}) +
             rmax;
    }
    case ShapeKind::two_lobe_capsule: {
      const double sx_max = 1.0 + std::abs(amp);
      const double syz_max = 1.0 / std::sqrt(std::max(1e-9, 1.0 - std::abs(amp)));
      const double x = (half_len + r_end) * sx_max + std::abs(center.x);
      const double yz = std::max(r_end, r_tube) * syz_max +
                        std::max(std::abs(center.y), std::abs(center.z));
      return std::max(x, yz);
    }
    case ShapeKind::articulated_dumbbell: {
      // rotation about the x-axis preserves x and the (y,z) radius
      auto part = [&](const Point3& c, double r) {
        const double ryz = std::sqrt(c.y * c.y + c.z * c.z) + r;
        return std::max(std::abs(c.x) + r, ryz);
      };
      const double tube =
          std::max(part(ball_a, r_tube), part(ball_b, r_tube));
      return std::max({part(ball_a, ra), part(ball_b, rb), tube});
    }
  }
  return kWorkingHalf;
}

std::vector<double> DeformingShape::pack_params() const {
  return {static_cast<double>(duration),
          center.x,   center.y,   center.z,   velocity.x, velocity.y,
          velocity.z, radius,     amp,        half_len,   r_end,
          r_tube,     ball_a.x,   ball_a.y,   ball_a.z,   ball_b.x,
          ball_b.y,   ball_b.z,   ra,         rb,         blend_x0,
          blend_x1};
}

void DeformingShape::unpack_params(const std::vector<double>& p) {
  if (p.size() != 22) throw std::runtime_error("bad shape parameter count");
  duration = static_cast<int>(p[0]);
  center = {p[1], p[2], p[3]};
  velocity = {p[4], p[5], p[6]};
  radius = p[7];
  amp = p[8];
  half_len = p[9];
  r_end = p[10];
  r_tube = p[11];
  ball_a = {p[12], p[13], p[14]};
  ball_b = {p[15], p[16], p[17]};
  ra = p[18];
  rb = p[19];
  blend_x0 = p[20];
  blend_x1 = p[21];
}

// ---------------------------------------------------------------------------

void PointCloudSequence::validate() const {
  if (frames.empty()) throw std::runtime_error("sequence has no frames");
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (!(frames[i].time > frames[i - 1].time))
      throw std::runtime_error("frame times not strictly increasing");
  for (const auto& f : frames) {
    if (f.points.empty()) throw std::runtime_error("empty frame");
    if (!std::isfinite(f.time)) throw std::runtime_error("non-finite time");
    if (!correspondence_ids.empty() &&
        f.points.size() != correspondence_ids.size())
      throw std::runtime_error("correspondence id count mismatch");
  }
}

PointCloudSequence PointCloudSequence::reversed() const {
  PointCloudSequence out;
  out.correspondence_ids = correspondence_ids;
  const double tmin = frames.front().time;
  const double tmax = frames.back().time;
  for (auto it = frames.rbegin(); it != frames.rend(); ++it) {
    PointCloudFrame f = *it;
    f.time = tmin + tmax - f.time;
    out.frames.push_back(std::move(f));
  }
  return out;
}

PointCloudSequence sample_surface_sequence(const DeformingShape& shape,
                                           int n_points, TemporalMode mode,
                                           double noise_sigma,
                                           std::uint64_t seed) {
  if (n_points < 10) throw std::runtime_error("n_points must be >= 10");
  if (noise_sigma < 0.0) throw std::runtime_error("noise_sigma must be >= 0");
  if (shape.max_extent() > kSafeHalf)
    throw std::runtime_error("shape out of bounds");
  const int T = shape.duration;
  if (T < 2) throw std::runtime_error("duration must be >= 2");

  Rng rng(seed);
  std::vector<double> times(T);
  if (mode == TemporalMode::even) {
    for (int k = 0; k < T; ++k) times[k] = double(k) / double(T - 1);
  } else {
    for (;;) {
      times[0] = 0.0;
      times[T - 1] = 1.0;
      for (int k = 1; k < T - 1; ++k) times[k] = rng.uniform();
      std::sort(times.begin() + 1, times.end() - 1);
      if (std::adjacent_find(times.begin(), times.end()) == times.end())
        break;
    }
  }

  std::vector<SurfaceSample> trajectories(n_points);
  for (int i = 0; i < n_points; ++i)
    trajectories[i] = shape.sample_reference_surface(rng);

  PointCloudSequence seq;
  seq.correspondence_ids.resize(n_points);
  for (int i = 0; i < n_points; ++i)
    seq.correspondence_ids[i] = static_cast<std::uint32_t>(i);
  seq.frames.resize(T);
  for (int k = 0; k < T; ++k) {
    auto& frame = seq.frames[k];
    frame.time = times[k];
    frame.points.resize(n_points);
    for (int i = 0; i < n_points; ++i) {
      Point3 p = shape.map_point(trajectories[i], times[k]);
      if (noise_sigma > 0.0) {
        p.x += rng.normal(0.0, noise_sigma);
        p.y += rng.normal(0.0, noise_sigma);
        p.z += rng.normal(0.0, noise_sigma);
      }
      frame.points[i] = p;
    }
  }
  seq.validate();
  return seq;
}

std::vector<OccupancySample> sample_occupancy_queries(
    const DeformingShape& shape, double time, int n_uniform,
    int n_near_surface, double band, std::uint64_t seed) {
  if (n_uniform + n_near_surface < 1)
    throw std::runtime_error("need at least one query");
  if (band <= 0.0) throw std::runtime_error("band must be positive");
  Rng rng(seed);
  std::vector<OccupancySample> out;
  out.reserve(n_uniform + n_near_surface);
  for (int i = 0; i < n_uniform; ++i) {
    const Point3 p{rng.uniform(-kWorkingHalf, kWorkingHalf),
                   rng.uniform(-kWorkingHalf, kWorkingHalf),
                   rng.uniform(-kWorkingHalf, kWorkingHalf)};
    out.push_back({p, time, shape.inside(p, time) ? 1 : 0});
  }
  for (int i = 0; i < n_near_surface; ++i) {
    const SurfaceSample s = shape.sample_reference_surface(rng);
    const Point3 base = shape.map_point(s, time);
    const Point3 n = shape.map_normal(s, time);
    const Point3 p = base + n * rng.normal(0.0, band);
    out.push_back({p, time, shape.inside(p, time) ? 1 : 0});
  }
  return out;
}

std::vector<FlowSample> ground_truth_flow(const DeformingShape& shape,
                                          const std::vector<Point3>& points,
                                          double t_from, double t_to) {
  std::vector<std::size_t> offending;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (!shape.inside(points[i], t_from, 1e-9)) offending.push_back(i);
  if (!offending.empty()) {
    std::ostringstream os;
    os << "points outside shape support at t=" << t_from << ":";
    for (std::size_t i = 0; i < offending.size() && i < 16; ++i)
      os << ' ' << offending[i];
    if (offending.size() > 16) os << " ...";
    throw std::runtime_error(os.str());
  }
  std::vector<FlowSample> flows;
  flows.reserve(points.size());
  for (const auto& p : points)
    flows.push_back({p, shape.deform(p, t_from, t_to), t_from});
  return flows;
}

}  // namespace flow4d
