#include "flow4d/mise.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <memory>
#include <unordered_map>
#include <unordered_set>

namespace flow4d::mesh {

namespace {

// Cube corners 0..7 (standard numbering) and the 12 edges between them.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0},
                              {4, 5}, {5, 6}, {6, 7}, {7, 4},
                              {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// Faces as cyclic corner quadruples.
constexpr int kFace[6][4] = {{0, 1, 2, 3}, {4, 5, 6, 7}, {0, 1, 5, 4},
                             {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e)
    if ((kEdge[e][0] == a && kEdge[e][1] == b) ||
        (kEdge[e][0] == b && kEdge[e][1] == a))
      return e;
  return -1;
}

// The per-case triangulations are generated rather than embedded: contour
// segments are traced on each cube face, chained into loops, oriented so
// normals point from inside to outside, and fan-triangulated. A face whose
// corners alternate inside/outside is ambiguous; it is resolved by the face
// center value (one decider bit per face). Neighboring cells share the four
// corner values and hence the decider, which keeps the mesh watertight, and
// the rule maps to itself under (values, tau) -> (1 - values, 1 - tau).
struct CaseTable {
  // (config | decider_bits << 8) -> triangles as edge-index triples
  std::vector<std::array<int, 3>> tris[256 * 64];
};

void build_case(CaseTable& table, int config, int deciders) {
  const auto inside = [&](int c) { return (config >> c) & 1; };
  auto& out = table.tris[config | (deciders << 8)];
  // adjacency between crossed cube edges
  std::vector<std::vector<int>> adj(12);
  for (int f = 0; f < 6; ++f) {
    const auto& face = kFace[f];
    int ring[4];
    bool crossed[4];
    int n_crossed = 0;
    for (int i = 0; i < 4; ++i) {
      const int a = face[i], b = face[(i + 1) % 4];
      ring[i] = edge_between(a, b);
      crossed[i] = inside(a) != inside(b);
      n_crossed += crossed[i] ? 1 : 0;
    }
    if (n_crossed == 0) continue;
    if (n_crossed == 2) {
      int first = -1, second = -1;
      for (int i = 0; i < 4; ++i) {
        if (!crossed[i]) continue;
        (first < 0 ? first : second) = i;
      }
      adj[ring[first]].push_back(ring[second]);
      adj[ring[second]].push_back(ring[first]);
    } else {
      assert(n_crossed == 4);
      // center inside: the inside region connects across the face, so the
      // segments isolate the outside corners; center outside: the reverse
      const bool center_inside = (deciders >> f) & 1;
      const bool isolate_even = inside(face[0]) != center_inside;
      if (isolate_even) {  // segments around face[0] and face[2]
        adj[ring[3]].push_back(ring[0]);
        adj[ring[0]].push_back(ring[3]);
        adj[ring[1]].push_back(ring[2]);
        adj[ring[2]].push_back(ring[1]);
      } else {  // segments around face[1] and face[3]
        adj[ring[0]].push_back(ring[1]);
        adj[ring[1]].push_back(ring[0]);
        adj[ring[2]].push_back(ring[3]);
        adj[ring[3]].push_back(ring[2]);
      }
    }
  }
  // chain segments into loops
  bool used[12] = {};
  for (int start = 0; start < 12; ++start) {
    if (used[start] || adj[start].empty()) continue;
    std::vector<int> loop;
    int cur = start, prev = -1;
    for (;;) {
      loop.push_back(cur);
      used[cur] = true;
      assert(adj[cur].size() == 2);
      const int next = adj[cur][0] == prev ? adj[cur][1] : adj[cur][0];
      prev = cur;
      cur = next;
      if (cur == start) break;
    }
    assert(loop.size() >= 3);
    auto midpoint = [&](int e) {
      const int* a = kCorner[kEdge[e][0]];
      const int* b = kCorner[kEdge[e][1]];
      return Point3{0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]),
                    0.5 * (a[2] + b[2])};
    };
    Point3 normal{0, 0, 0};
    for (std::size_t i = 0; i < loop.size(); ++i) {
      const Point3 p = midpoint(loop[i]);
      const Point3 q = midpoint(loop[(i + 1) % loop.size()]);
      normal += p.cross(q);
    }
    Point3 outward{0, 0, 0};
    for (int e : loop) {
      const int a = kEdge[e][0], b = kEdge[e][1];
      const int in = inside(a) ? a : b;
      const int ot = inside(a) ? b : a;
      outward += Point3{double(kCorner[ot][0] - kCorner[in][0]),
                        double(kCorner[ot][1] - kCorner[in][1]),
                        double(kCorner[ot][2] - kCorner[in][2])};
    }
    if (normal.dot(outward) < 0.0) std::reverse(loop.begin(), loop.end());
    // canonical fan apex: complementary configs triangulate identically
    std::rotate(loop.begin(),
                std::min_element(loop.begin(), loop.end()), loop.end());
    for (std::size_t i = 1; i + 1 < loop.size(); ++i)
      out.push_back({loop[0], int(loop[i]), int(loop[i + 1])});
  }
}

const CaseTable& case_table() {
  static const CaseTable table = [] {
    auto t = std::make_unique<CaseTable>();
    for (int config = 0; config < 256; ++config)
      for (int deciders = 0; deciders < 64; ++deciders)
        build_case(*t, config, deciders);
    assert(t->tris[0].empty() && t->tris[255].empty());
    return *t;
  }();
  return table;
}

}  // namespace

Point3 OccupancyGrid::position(int ix, int iy, int iz) const {
  return {lo.x + (hi.x - lo.x) * ix / double(nx - 1),
          lo.y + (hi.y - lo.y) * iy / double(ny - 1),
          lo.z + (hi.z - lo.z) * iz / double(nz - 1)};
}

void OccupancyGrid::validate() const {
  if (nx < 2 || ny < 2 || nz < 2)
    throw std::runtime_error("grid resolution must be >= 2 per axis");
  if (!(tau > 0.0 && tau < 1.0))
    throw std::runtime_error("tau must lie in (0, 1)");
  if (values.size() != std::size_t(nx) * ny * nz)
    throw std::runtime_error("grid value count mismatch");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::runtime_error("non-finite grid value");
    if (v < 0.0 || v > 1.0)
      throw std::runtime_error("grid value outside [0, 1]");
  }
}

// ---------------------------------------------------------------------------
// MISE

namespace {

struct VertexLattice {
  int n = 0;  // vertices per axis
  std::vector<double> values;
  std::vector<std::uint8_t> evaluated;

  std::size_t idx(int i, int j, int k) const {
    return (std::size_t(i) * n + j) * n + k;
  }
};

void evaluate_pending(const BatchField& field, const OccupancyGrid& geom,
                      VertexLattice& lat,
                      std::vector<std::array<int, 3>>& pending,
                      MiseStats* stats) {
  if (pending.empty()) return;
  std::vector<Point3> pts;
  pts.reserve(pending.size());
  for (const auto& v : pending) pts.push_back(geom.position(v[0], v[1], v[2]));
  const std::vector<double> vals = field(pts);
  if (vals.size() != pts.size())
    throw std::runtime_error("field returned wrong count");
  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (!std::isfinite(vals[i]))
      throw std::runtime_error("field returned non-finite value");
    const auto& v = pending[i];
    lat.values[lat.idx(v[0], v[1], v[2])] = vals[i];
    lat.evaluated[lat.idx(v[0], v[1], v[2])] = 1;
  }
  if (stats) stats->evaluations += pending.size();
  pending.clear();
}

}  // namespace

OccupancyGrid mise_evaluate(const BatchField& field, int start_res,
                            int upsample_steps, double tau, const Point3& lo,
                            const Point3& hi, MiseStats* stats) {
  if (start_res < 8) throw std::runtime_error("start_res must be >= 8");
  if (upsample_steps < 0)
    throw std::runtime_error("upsample_steps must be >= 0");
  const int cells = start_res << upsample_steps;

  OccupancyGrid grid;
  grid.nx = grid.ny = grid.nz = cells + 1;
  grid.lo = lo;
  grid.hi = hi;
  grid.tau = tau;

  VertexLattice lat;
  lat.n = cells + 1;
  lat.values.assign(std::size_t(lat.n) * lat.n * lat.n, 0.0);
  lat.evaluated.assign(lat.values.size(), 0);

  std::vector<std::array<int, 3>> pending;
  const int stride0 = 1 << upsample_steps;
  for (int i = 0; i <= cells; i += stride0)
    for (int j = 0; j <= cells; j += stride0)
      for (int k = 0; k <= cells; k += stride0) pending.push_back({i, j, k});
  evaluate_pending(field, grid, lat, pending, stats);

  const auto inside = [&](double v) { return v > tau; };
  // cells subdivided at the previous level, i.e. candidates for this level
  std::vector<std::array<int, 3>> candidates;
  for (int i = 0; i < cells; i += stride0)
    for (int j = 0; j < cells; j += stride0)
      for (int k = 0; k < cells; k += stride0) candidates.push_back({i, j, k});

  for (int level = 0; level < upsample_steps; ++level) {
    const int stride = 1 << (upsample_steps - level);
    std::size_t straddling = 0;
    std::unordered_set<std::uint64_t> active_set;
    const auto pack = [&](int i, int j, int k) {
      return (std::uint64_t(i) << 40) | (std::uint64_t(j) << 20) |
             std::uint64_t(k);
    };
    std::vector<std::array<int, 3>> active;
    const auto add_active = [&](int i, int j, int k) {
      if (i < 0 || j < 0 || k < 0 || i + stride > cells || j + stride > cells ||
          k + stride > cells)
        return;
      if (active_set.insert(pack(i, j, k)).second) active.push_back({i, j, k});
    };
    for (const auto& c : candidates) {
      bool any_in = false, any_out = false;
      for (int d = 0; d < 8; ++d) {
        const int i = c[0] + kCorner[d][0] * stride;
        const int j = c[1] + kCorner[d][1] * stride;
        const int k = c[2] + kCorner[d][2] * stride;
        (inside(lat.values[lat.idx(i, j, k)]) ? any_in : any_out) = true;
      }
      if (any_in && any_out) {
        ++straddling;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj)
            for (int dk = -1; dk <= 1; ++dk)
              add_active(c[0] + di * stride, c[1] + dj * stride,
                         c[2] + dk * stride);
      }
    }
    if (stats) stats->straddling_cells.push_back(straddling);
    // halo cells outside the candidate set may lack corner values
    const int half = stride / 2;
    for (const auto& c : active)
      for (int di = 0; di <= 2; ++di)
        for (int dj = 0; dj <= 2; ++dj)
          for (int dk = 0; dk <= 2; ++dk) {
            const int i = c[0] + di * half;
            const int j = c[1] + dj * half;
            const int k = c[2] + dk * half;
            if (!lat.evaluated[lat.idx(i, j, k)]) pending.push_back({i, j, k});
          }
    evaluate_pending(field, grid, lat, pending, stats);
    // children become the next level's candidates
    candidates.clear();
    for (const auto& c : active)
      for (int d = 0; d < 8; ++d)
        candidates.push_back({c[0] + kCorner[d][0] * half,
                              c[1] + kCorner[d][1] * half,
                              c[2] + kCorner[d][2] * half});
  }

  // untouched vertices inherit the value of their enclosing evaluated region
  grid.values.resize(lat.values.size());
  for (int i = 0; i <= cells; ++i)
    for (int j = 0; j <= cells; ++j)
      for (int k = 0; k <= cells; ++k) {
        const std::size_t id = lat.idx(i, j, k);
        if (lat.evaluated[id]) {
          grid.values[id] = lat.values[id];
          continue;
        }
        double v = 0.0;
        for (int s = 2; s <= stride0; s <<= 1) {
          const std::size_t anc = lat.idx(i / s * s, j / s * s, k / s * s);
          if (lat.evaluated[anc]) {
            v = lat.values[anc];
            break;
          }
        }
        grid.values[id] = v;
      }
  grid.validate();
  return grid;
}

OccupancyGrid dense_evaluate(const BatchField& field, int res_cells,
                             double tau, const Point3& lo, const Point3& hi) {
  OccupancyGrid grid;
  grid.nx = grid.ny = grid.nz = res_cells + 1;
  grid.lo = lo;
  grid.hi = hi;
  grid.tau = tau;
  std::vector<Point3> pts;
  pts.reserve(std::size_t(grid.nx) * grid.ny * grid.nz);
  for (int i = 0; i < grid.nx; ++i)
    for (int j = 0; j < grid.ny; ++j)
      for (int k = 0; k < grid.nz; ++k) pts.push_back(grid.position(i, j, k));
  grid.values = field(pts);
  grid.validate();
  return grid;
}

// ---------------------------------------------------------------------------
// marching cubes

TriangleMesh marching_cubes(const OccupancyGrid& grid) {
  grid.validate();
  const CaseTable& table = case_table();
  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  const auto vid = [&](int i, int j, int k) {
    return (std::uint64_t(i) * grid.ny + j) * grid.nz + k;
  };
  const double tau = grid.tau;
  for (int ix = 0; ix + 1 < grid.nx; ++ix) {
    for (int iy = 0; iy + 1 < grid.ny; ++iy) {
      for (int iz = 0; iz + 1 < grid.nz; ++iz) {
        double v[8];
        int gi[8], gj[8], gk[8];
        int config = 0;
        for (int c = 0; c < 8; ++c) {
          gi[c] = ix + kCorner[c][0];
          gj[c] = iy + kCorner[c][1];
          gk[c] = iz + kCorner[c][2];
          v[c] = grid.value(gi[c], gj[c], gk[c]);
          if (v[c] > tau) config |= 1 << c;
        }
        if (config == 0 || config == 255) continue;
        int deciders = 0;
        for (int f = 0; f < 6; ++f) {
          const double center = 0.25 * (v[kFace[f][0]] + v[kFace[f][1]] +
                                        v[kFace[f][2]] + v[kFace[f][3]]);
          if (center > tau) deciders |= 1 << f;
        }
        const auto& tris = table.tris[config | (deciders << 8)];
        if (tris.empty()) continue;
        std::uint32_t everts[12];
        for (const auto& tri : tris) {
          for (int corner = 0; corner < 3; ++corner) {
            const int e = tri[corner];
            const int a = kEdge[e][0], b = kEdge[e][1];
            const std::uint64_t ka = vid(gi[a], gj[a], gk[a]);
            const std::uint64_t kb = vid(gi[b], gj[b], gk[b]);
            const std::uint64_t key = (std::min(ka, kb) << 32) | std::max(ka, kb);
            auto it = edge_vertex.find(key);
            if (it == edge_vertex.end()) {
              const double t = (tau - v[a]) / (v[b] - v[a]);
              const Point3 pa = grid.position(gi[a], gj[a], gk[a]);
              const Point3 pb = grid.position(gi[b], gj[b], gk[b]);
              const Point3 p = pa + (pb - pa) * t;
              const auto id = static_cast<std::uint32_t>(mesh.vertices.size());
              mesh.vertices.push_back(p);
              it = edge_vertex.emplace(key, id).first;
            }
            everts[e] = it->second;
          }
          mesh.faces.push_back({everts[tri[0]], everts[tri[1]],
                                everts[tri[2]]});
        }
      }
    }
  }
  // drop the rare zero-area slivers produced when a corner sits exactly at tau
  std::vector<std::array<std::uint32_t, 3>> kept;
  kept.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    const Point3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
    const Point3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
    if (0.5 * e1.cross(e2).norm() <= 1e-12) continue;
    kept.push_back(f);
  }
  mesh.faces = std::move(kept);
  return mesh;
}

TriangleMesh canonicalize(const TriangleMesh& mesh) {
  std::vector<std::uint32_t> order(mesh.vertices.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const Point3& pa = mesh.vertices[a];
    const Point3& pb = mesh.vertices[b];
    if (pa.x != pb.x) return pa.x < pb.x;
    if (pa.y != pb.y) return pa.y < pb.y;
    return pa.z < pb.z;
  });
  std::vector<std::uint32_t> remap(order.size());
  TriangleMesh out;
  out.vertices.resize(mesh.vertices.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) {
    remap[order[i]] = i;
    out.vertices[i] = mesh.vertices[order[i]];
  }
  out.faces.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    std::array<std::uint32_t, 3> g = {remap[f[0]], remap[f[1]], remap[f[2]]};
    // rotate so the smallest index leads, preserving orientation
    while (!(g[0] <= g[1] && g[0] <= g[2]))
      g = {g[1], g[2], g[0]};
    out.faces.push_back(g);
  }
  std::sort(out.faces.begin(), out.faces.end());
  return out;
}

ExtractResult extract_sequence(const model::FieldEvaluator& field, double tau,
                               int start_res, int upsample_steps) {
  ExtractResult result;
  for (int frame = 0; frame < field.num_frames(); ++frame) {
    const BatchField f = [&field, frame](const std::vector<Point3>& pts) {
      return field.occupancy(pts, frame);
    };
    const OccupancyGrid grid =
        mise_evaluate(f, start_res, upsample_steps, tau);
    TriangleMesh mesh = marching_cubes(grid);
    if (mesh.empty())
      result.warnings.push_back("frame " + std::to_string(frame) +
                                ": degenerate occupancy field, empty mesh");
    result.meshes.push_back(std::move(mesh));
  }
  return result;
}

}  // namespace flow4d::mesh
