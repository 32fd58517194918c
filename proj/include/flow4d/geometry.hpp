#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace flow4d {

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Point3() = default;
  Point3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Point3 operator+(const Point3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Point3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Point3& operator+=(const Point3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double dot(const Point3& o) const { return x * o.x + y * o.y + z * o.z; }
  Point3 cross(const Point3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return x * x + y * y + z * z; }
  double norm() const { return std::sqrt(norm2()); }
  Point3 normalized() const {
    const double n = norm();
    return n > 0.0 ? Point3{x / n, y / n, z / n} : Point3{0, 0, 0};
  }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline double distance(const Point3& a, const Point3& b) {
  return (a - b).norm();
}

struct TriangleMesh {
  std::vector<Point3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;

  bool empty() const { return faces.empty(); }
  // Index range, duplicate-index faces, finiteness. Throws on violation.
  void validate() const;
  double surface_area() const;
  void bounding_box(Point3& lo, Point3& hi) const;
};

// Exact nearest point over a fixed point set; median-split kd-tree. Ties in
// distance resolve to the lowest insertion index, so queries are a pure
// function of the input order.
class NearestNeighborIndex {
 public:
  explicit NearestNeighborIndex(const std::vector<Point3>& points);

  struct Result {
    Point3 point;
    double dist;
    std::uint32_t index;
  };
  Result nearest(const Point3& q) const;
  // Indices of all points within `radius` of q (unordered).
  void find_within(const Point3& q, double radius,
                   std::vector<std::uint32_t>& out) const;

  std::size_t size() const { return pts_.size(); }

 private:
  struct Node {
    double split;
    std::int32_t axis;      // -1 for leaf
    std::uint32_t left;     // child node or leaf begin
    std::uint32_t right;    // child node or leaf end
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end);
  void query(std::uint32_t node, const Point3& q, double& best_d2,
             std::uint32_t& best_idx) const;

  std::vector<Point3> pts_;        // original order
  std::vector<std::uint32_t> order_;  // permutation into pts_, grouped by leaf
  std::vector<Node> nodes_;
  std::uint32_t root_ = 0;
};

inline NearestNeighborIndex build_nn_index(const std::vector<Point3>& pts) {
  return NearestNeighborIndex(pts);
}

double point_triangle_distance(const Point3& p, const Point3& a,
                               const Point3& b, const Point3& c);

// Exact point-to-surface distance, kd-tree over triangle centroids for
// candidate pruning. Owns a copy of the triangle data.
class MeshDistanceIndex {
 public:
  explicit MeshDistanceIndex(const TriangleMesh& mesh);
  double distance(const Point3& q) const;

 private:
  struct Tri {
    Point3 a, b, c;
  };
  std::vector<Tri> tris_;
  std::unique_ptr<NearestNeighborIndex> centroids_;
  double max_radius_ = 0.0;  // largest centroid-to-vertex distance
};

// Parity test against a triangle mesh with +x rays binned over (y,z).
// Degenerate hits (grazing an edge/vertex, ray origin on the surface plane)
// recast along a fixed fallback direction sequence.
class MeshInsideTester {
 public:
  explicit MeshInsideTester(const TriangleMesh& mesh, int gridate = 64);

  bool inside(const Point3& q) const;
  // Parity along an arbitrary direction (full scan, no bins).
  bool inside_along(const Point3& q, const Point3& dir) const;

 private:
  enum class Hit { none, crossing, degenerate };
  Hit ray_triangle(const Point3& org, const Point3& dir,
                   std::size_t face) const;

  const TriangleMesh& mesh_;
  int grid_;
  double ylo_, yhi_, zlo_, zhi_;
  std::vector<std::vector<std::uint32_t>> bins_;
};

bool point_in_mesh(const TriangleMesh& mesh, const Point3& q);

// ASCII OBJ ("v x y z" / "f i j k", 1-based) and binary little-endian PLY
// with double precision vertex coordinates.
void write_obj(const TriangleMesh& mesh, const std::string& path);
TriangleMesh read_obj(const std::string& path);
void write_ply(const TriangleMesh& mesh, const std::string& path);
TriangleMesh read_ply(const std::string& path);

// Point cloud with per-point vectors (binary little-endian PLY, properties
// x y z vx vy vz).
void write_flow_ply(const std::vector<Point3>& points,
                    const std::vector<Point3>& vectors,
                    const std::string& path);

}  // namespace flow4d
