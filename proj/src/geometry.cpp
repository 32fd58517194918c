#include "flow4d/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace flow4d {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

void TriangleMesh::validate() const {
  for (const auto& v : vertices)
    if (!v.finite()) throw std::runtime_error("mesh vertex not finite");
  const std::uint32_t n = static_cast<std::uint32_t>(vertices.size());
  for (const auto& f : faces) {
    for (int k = 0; k < 3; ++k)
      if (f[k] >= n) throw std::runtime_error("mesh face index out of range");
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw std::runtime_error("mesh face repeats a vertex");
  }
}

double TriangleMesh::surface_area() const {
  double area = 0.0;
  for (const auto& f : faces) {
    const Point3 e1 = vertices[f[1]] - vertices[f[0]];
    const Point3 e2 = vertices[f[2]] - vertices[f[0]];
    area += 0.5 * e1.cross(e2).norm();
  }
  return area;
}

void TriangleMesh::bounding_box(Point3& lo, Point3& hi) const {
  const double inf = std::numeric_limits<double>::infinity();
  lo = {inf, inf, inf};
  hi = {-inf, -inf, -inf};
  for (const auto& v : vertices) {
    lo.x = std::min(lo.x, v.x);
    lo.y = std::min(lo.y, v.y);
    lo.z = std::min(lo.z, v.z);
    hi.x = std::max(hi.x, v.x);
    hi.y = std::max(hi.y, v.y);
    hi.z = std::max(hi.z, v.z);
  }
}

// ---------------------------------------------------------------------------
// kd-tree

namespace {
constexpr std::uint32_t kLeafSize = 16;
}

NearestNeighborIndex::NearestNeighborIndex(const std::vector<Point3>& points)
    : pts_(points) {
  if (pts_.empty()) throw std::runtime_error("empty point set");
  for (const auto& p : pts_)
    if (!p.finite()) throw std::runtime_error("non-finite point");
  order_.resize(pts_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * pts_.size() / kLeafSize + 2);
  root_ = build(0, static_cast<std::uint32_t>(pts_.size()));
}

std::uint32_t NearestNeighborIndex::build(std::uint32_t begin,
                                          std::uint32_t end) {
  const std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({});
  if (end - begin <= kLeafSize) {
    // Keep leaves sorted by original index so ties fall to the lowest one
    // without extra comparisons.
    std::sort(order_.begin() + begin, order_.begin() + end);
    nodes_[id] = {0.0, -1, begin, end};
    return id;
  }
  Point3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (std::uint32_t i = begin; i < end; ++i) {
    const Point3& p = pts_[order_[i]];
    lo.x = std::min(lo.x, p.x);
    lo.y = std::min(lo.y, p.y);
    lo.z = std::min(lo.z, p.z);
    hi.x = std::max(hi.x, p.x);
    hi.y = std::max(hi.y, p.y);
    hi.z = std::max(hi.z, p.z);
  }
  const Point3 ext = hi - lo;
  int axis = 0;
  if (ext.y > ext.x) axis = 1;
  if (ext.z > ext[axis]) axis = 2;
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double va = pts_[a][axis], vb = pts_[b][axis];
                     return va < vb || (va == vb && a < b);
                   });
  const double split = pts_[order_[mid]][axis];
  const std::uint32_t left = build(begin, mid);
  const std::uint32_t right = build(mid, end);
  nodes_[id] = {split, axis, left, right};
  return id;
}

void NearestNeighborIndex::query(std::uint32_t node, const Point3& q,
                                 double& best_d2,
                                 std::uint32_t& best_idx) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (std::uint32_t i = n.left; i < n.right; ++i) {
      const std::uint32_t idx = order_[i];
      const Point3& p = pts_[idx];
      const double dx = q.x - p.x, dy = q.y - p.y, dz = q.z - p.z;
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
        best_d2 = d2;
        best_idx = idx;
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const std::uint32_t near = diff < 0.0 ? n.left : n.right;
  const std::uint32_t far = diff < 0.0 ? n.right : n.left;
  query(near, q, best_d2, best_idx);
  if (diff * diff <= best_d2) query(far, q, best_d2, best_idx);
}

NearestNeighborIndex::Result NearestNeighborIndex::nearest(
    const Point3& q) const {
  if (!q.finite()) throw std::runtime_error("non-finite query point");
  double best_d2 = std::numeric_limits<double>::infinity();
  std::uint32_t best_idx = 0;
  query(root_, q, best_d2, best_idx);
  return {pts_[best_idx], std::sqrt(best_d2), best_idx};
}

void NearestNeighborIndex::find_within(const Point3& q, double radius,
                                       std::vector<std::uint32_t>& out) const {
  const double r2 = radius * radius;
  std::vector<std::uint32_t> stack = {root_};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    if (n.axis < 0) {
      for (std::uint32_t i = n.left; i < n.right; ++i) {
        const Point3& p = pts_[order_[i]];
        const double dx = q.x - p.x, dy = q.y - p.y, dz = q.z - p.z;
        if (dx * dx + dy * dy + dz * dz <= r2) out.push_back(order_[i]);
      }
      continue;
    }
    const double diff = q[n.axis] - n.split;
    if (diff <= radius) stack.push_back(n.left);
    if (-diff <= radius) stack.push_back(n.right);
  }
}

// Ericson-style closest point on a triangle.
double point_triangle_distance(const Point3& p, const Point3& a,
                               const Point3& b, const Point3& c) {
  const Point3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return (p - a).norm();
  const Point3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return (p - b).norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return (p - (a + ab * v)).norm();
  }
  const Point3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return (p - c).norm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return (p - (a + ac * w)).norm();
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + (c - b) * w)).norm();
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return (p - (a + ab * v + ac * w)).norm();
}

MeshDistanceIndex::MeshDistanceIndex(const TriangleMesh& mesh) {
  if (mesh.empty()) throw std::runtime_error("empty mesh");
  tris_.reserve(mesh.faces.size());
  std::vector<Point3> centroids;
  centroids.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    const Tri t = {mesh.vertices[f[0]], mesh.vertices[f[1]],
                   mesh.vertices[f[2]]};
    tris_.push_back(t);
    const Point3 centroid = (t.a + t.b + t.c) * (1.0 / 3.0);
    centroids.push_back(centroid);
    max_radius_ = std::max({max_radius_, (t.a - centroid).norm(),
                            (t.b - centroid).norm(), (t.c - centroid).norm()});
  }
  centroids_ = std::make_unique<NearestNeighborIndex>(centroids);
}

double MeshDistanceIndex::distance(const Point3& q) const {
  const auto seed = centroids_->nearest(q);
  const Tri& t0 = tris_[seed.index];
  double best = point_triangle_distance(q, t0.a, t0.b, t0.c);
  // any closer triangle has its centroid within best + max_radius_
  std::vector<std::uint32_t> candidates;
  centroids_->find_within(q, best + max_radius_, candidates);
  for (const std::uint32_t f : candidates) {
    const Tri& t = tris_[f];
    best = std::min(best, point_triangle_distance(q, t.a, t.b, t.c));
  }
  return best;
}

// ---------------------------------------------------------------------------
// point-in-mesh

MeshInsideTester::MeshInsideTester(const TriangleMesh& mesh, int grid)
    : mesh_(mesh), grid_(grid) {
  Point3 lo, hi;
  mesh.bounding_box(lo, hi);
  const double pad = 1e-9 + 1e-6 * (hi - lo).norm();
  ylo_ = lo.y - pad;
  yhi_ = hi.y + pad;
  zlo_ = lo.z - pad;
  zhi_ = hi.z + pad;
  bins_.resize(static_cast<std::size_t>(grid_) * grid_);
  const double sy = grid_ / (yhi_ - ylo_);
  const double sz = grid_ / (zhi_ - zlo_);
  for (std::uint32_t f = 0; f < mesh.faces.size(); ++f) {
    double fylo = 1e300, fyhi = -1e300, fzlo = 1e300, fzhi = -1e300;
    for (int k = 0; k < 3; ++k) {
      const Point3& v = mesh.vertices[mesh.faces[f][k]];
      fylo = std::min(fylo, v.y);
      fyhi = std::max(fyhi, v.y);
      fzlo = std::min(fzlo, v.z);
      fzhi = std::max(fzhi, v.z);
    }
    const int y0 = std::clamp(int((fylo - ylo_) * sy), 0, grid_ - 1);
    const int y1 = std::clamp(int((fyhi - ylo_) * sy), 0, grid_ - 1);
    const int z0 = std::clamp(int((fzlo - zlo_) * sz), 0, grid_ - 1);
    const int z1 = std::clamp(int((fzhi - zlo_) * sz), 0, grid_ - 1);
    for (int y = y0; y <= y1; ++y)
      for (int z = z0; z <= z1; ++z)
        bins_[static_cast<std::size_t>(y) * grid_ + z].push_back(f);
  }
}

MeshInsideTester::Hit MeshInsideTester::ray_triangle(const Point3& org,
                                                     const Point3& dir,
                                                     std::size_t face) const {
  constexpr double kDetEps = 1e-14;
  constexpr double kBaryEps = 1e-10;
  const auto& f = mesh_.faces[face];
  const Point3& v0 = mesh_.vertices[f[0]];
  const Point3 e1 = mesh_.vertices[f[1]] - v0;
  const Point3 e2 = mesh_.vertices[f[2]] - v0;
  const Point3 pv = dir.cross(e2);
  const double det = e1.dot(pv);
  const Point3 tv = org - v0;
  if (std::abs(det) < kDetEps) {
    // Parallel ray; degenerate only if the triangle plane nearly contains it.
    if (std::abs(tv.dot(e1.cross(e2).normalized())) < kBaryEps)
      return Hit::degenerate;
    return Hit::none;
  }
  const double inv = 1.0 / det;
  const double u = tv.dot(pv) * inv;
  if (u < -kBaryEps || u > 1.0 + kBaryEps) return Hit::none;
  const Point3 qv = tv.cross(e1);
  const double v = dir.dot(qv) * inv;
  if (v < -kBaryEps || u + v > 1.0 + kBaryEps) return Hit::none;
  const double t = e2.dot(qv) * inv;
  if (t < -kBaryEps) return Hit::none;
  const bool grazing = u < kBaryEps || v < kBaryEps || u + v > 1.0 - kBaryEps ||
                       t < kBaryEps;
  if (grazing) return Hit::degenerate;
  return Hit::crossing;
}

bool MeshInsideTester::inside_along(const Point3& q, const Point3& dir) const {
  long crossings = 0;
  for (std::size_t f = 0; f < mesh_.faces.size(); ++f) {
    const Hit h = ray_triangle(q, dir, f);
    if (h == Hit::degenerate) {
      // Caller retries with a different direction.
      throw std::domain_error("degenerate ray");
    }
    if (h == Hit::crossing) ++crossings;
  }
  return (crossings % 2) == 1;
}

bool MeshInsideTester::inside(const Point3& q) const {
  if (!q.finite()) throw std::runtime_error("non-finite query point");
  if (mesh_.faces.empty()) return false;
  // Fast path: +x ray through the (y,z) bin.
  bool degenerate = false;
  if (q.y > ylo_ && q.y < yhi_ && q.z > zlo_ && q.z < zhi_) {
    const int by = std::clamp(int((q.y - ylo_) * grid_ / (yhi_ - ylo_)), 0,
                              grid_ - 1);
    const int bz = std::clamp(int((q.z - zlo_) * grid_ / (zhi_ - zlo_)), 0,
                              grid_ - 1);
    const Point3 dir{1.0, 0.0, 0.0};
    long crossings = 0;
    for (std::uint32_t f : bins_[static_cast<std::size_t>(by) * grid_ + bz]) {
      const Hit h = ray_triangle(q, dir, f);
      if (h == Hit::degenerate) {
        degenerate = true;
        break;
      }
      if (h == Hit::crossing) ++crossings;
    }
    if (!degenerate) return (crossings % 2) == 1;
  } else {
    return false;  // outside the (y,z) bounds: +x ray cannot hit anything
  }
  // Deterministic fallback directions, full scan.
  const double dirs[][3] = {
      {0.577350269189626, 0.577350269189626, 0.577350269189626},
      {-0.272165526975909, 0.680413817439773, 0.680413817439773},
      {0.358568582800318, -0.863368554227595, 0.355221076341209},
      {0.651209646228176, 0.256022000951931, -0.714396089237729},
      {0.096673649006234, 0.928067592637929, -0.359674839055358},
      {-0.801783725737273, 0.267261241912424, 0.534522483824849},
      {0.491539021421819, -0.409615851184849, 0.768404750571593},
      {-0.186052101808407, -0.465130254521017, -0.865442236943836},
  };
  for (const auto& d : dirs) {
    try {
      return inside_along(q, Point3{d[0], d[1], d[2]});
    } catch (const std::domain_error&) {
      continue;
    }
  }
  throw std::runtime_error("containment test failed: all rays degenerate");
}

bool point_in_mesh(const TriangleMesh& mesh, const Point3& q) {
  MeshInsideTester tester(mesh);
  return tester.inside(q);
}

// ---------------------------------------------------------------------------
// mesh io

void write_obj(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.precision(17);
  for (const auto& v : mesh.vertices)
    out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& f : mesh.faces)
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

TriangleMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  TriangleMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Point3 p;
      ls >> p.x >> p.y >> p.z;
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      long a, b, c;
      ls >> a >> b >> c;
      if (!ls || a < 1 || b < 1 || c < 1)
        throw std::runtime_error("unsupported OBJ face: " + line);
      mesh.faces.push_back({static_cast<std::uint32_t>(a - 1),
                            static_cast<std::uint32_t>(b - 1),
                            static_cast<std::uint32_t>(c - 1)});
    }
  }
  mesh.validate();
  return mesh;
}

namespace {

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_ply(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << mesh.vertices.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "element face " << mesh.faces.size() << "\n";
  out << "property list uchar int vertex_indices\n";
  out << "end_header\n";
  for (const auto& v : mesh.vertices) {
    put(out, v.x);
    put(out, v.y);
    put(out, v.z);
  }
  for (const auto& f : mesh.faces) {
    put<std::uint8_t>(out, 3);
    for (int k = 0; k < 3; ++k) put<std::int32_t>(out, f[k]);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

TriangleMesh read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  std::size_t n_vert = 0, n_face = 0;
  bool header_done = false;
  if (!std::getline(in, line) || line != "ply")
    throw std::runtime_error("not a PLY file: " + path);
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "element") {
      std::string what;
      std::size_t count;
      ls >> what >> count;
      if (what == "vertex") n_vert = count;
      if (what == "face") n_face = count;
    } else if (tag == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw std::runtime_error("PLY header truncated: " + path);
  TriangleMesh mesh;
  mesh.vertices.resize(n_vert);
  for (auto& v : mesh.vertices) {
    v.x = get<double>(in);
    v.y = get<double>(in);
    v.z = get<double>(in);
  }
  mesh.faces.resize(n_face);
  for (auto& f : mesh.faces) {
    const auto n = get<std::uint8_t>(in);
    if (n != 3) throw std::runtime_error("non-triangle PLY face");
    for (int k = 0; k < 3; ++k)
      f[k] = static_cast<std::uint32_t>(get<std::int32_t>(in));
  }
  if (!in) throw std::runtime_error("PLY payload truncated: " + path);
  mesh.validate();
  return mesh;
}

void write_flow_ply(const std::vector<Point3>& points,
                    const std::vector<Point3>& vectors,
                    const std::string& path) {
  if (points.size() != vectors.size())
    throw std::runtime_error("points/vectors size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << points.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "property double vx\nproperty double vy\nproperty double vz\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    put(out, points[i].x);
    put(out, points[i].y);
    put(out, points[i].z);
    put(out, vectors[i].x);
    put(out, vectors[i].y);
    put(out, vectors[i].z);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace flow4d
