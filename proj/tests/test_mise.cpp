#include <cmath>
#include <map>
#include <memory>

#include "doctest.h"
#include "flow4d/mise.hpp"
#include "flow4d/rng.hpp"
#include "helpers.hpp"

using namespace flow4d;
using mesh::BatchField;
using mesh::OccupancyGrid;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Smooth sphere occupancy: ~1 inside, ~0 outside, ~cell-wide transition.
BatchField sphere_field(double radius, double width,
                        const Point3& center = {0, 0, 0}) {
  return [=](const std::vector<Point3>& pts) {
    std::vector<double> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      out[i] = sigmoid((radius - (pts[i] - center).norm()) / width);
    return out;
  };
}

BatchField constant_field(double v) {
  return [=](const std::vector<Point3>& pts) {
    return std::vector<double>(pts.size(), v);
  };
}

// Small random two-layer network field, smooth at grid scale.
BatchField random_mlp_field(std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  const int H = 12;
  auto w1 = std::make_shared<std::vector<double>>(3 * H);
  auto b1 = std::make_shared<std::vector<double>>(H);
  auto w2 = std::make_shared<std::vector<double>>(H);
  for (auto& v : *w1) v = rng->uniform(-3.0, 3.0);
  for (auto& v : *b1) v = rng->uniform(-0.5, 0.5);
  for (auto& v : *w2) v = rng->uniform(-2.0, 2.0);
  return [=](const std::vector<Point3>& pts) {
    std::vector<double> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double acc = 0.0;
      for (int h = 0; h < H; ++h) {
        const double z = (*w1)[3 * h] * pts[i].x + (*w1)[3 * h + 1] * pts[i].y +
                         (*w1)[3 * h + 2] * pts[i].z + (*b1)[h];
        acc += (*w2)[h] * std::tanh(z);
      }
      out[i] = sigmoid(acc);
    }
    return out;
  };
}

std::map<std::pair<std::uint32_t, std::uint32_t>, int> edge_counts(
    const TriangleMesh& m) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> counts;
  for (const auto& f : m.faces)
    for (int k = 0; k < 3; ++k) {
      const auto a = f[k], b = f[(k + 1) % 3];
      counts[std::minmax(a, b)] += 1;
    }
  return counts;
}

bool meshes_identical(const TriangleMesh& a, const TriangleMesh& b) {
  const TriangleMesh ca = mesh::canonicalize(a);
  const TriangleMesh cb = mesh::canonicalize(b);
  if (ca.vertices.size() != cb.vertices.size()) return false;
  if (ca.faces.size() != cb.faces.size()) return false;
  for (std::size_t i = 0; i < ca.vertices.size(); ++i)
    if ((ca.vertices[i] - cb.vertices[i]).norm() != 0.0) return false;
  return ca.faces == cb.faces;
}

}  // namespace

TEST_SUITE_BEGIN("mise");

TEST_CASE("constant field: no subdivisions, uniform grid, empty mesh") {
  mesh::MiseStats stats;
  const OccupancyGrid grid =
      mesh::mise_evaluate(constant_field(0.9), 8, 2, 0.5, {-0.5, -0.5, -0.5},
                          {0.5, 0.5, 0.5}, &stats);
  for (const auto s : stats.straddling_cells) CHECK(s == 0);
  CHECK(stats.evaluations == 9 * 9 * 9);
  for (const double v : grid.values) CHECK(v == 0.9);
  CHECK(mesh::marching_cubes(grid).empty());
  // all-outside likewise yields an empty mesh, not an error
  const OccupancyGrid out_grid = mesh::dense_evaluate(constant_field(0.1), 16, 0.5);
  CHECK(mesh::marching_cubes(out_grid).empty());
}

TEST_CASE("sphere shell: straddling cell count grows about 4x per level") {
  mesh::MiseStats stats;
  mesh::mise_evaluate(sphere_field(0.3, 0.01), 16, 2, 0.5, {-0.5, -0.5, -0.5},
                      {0.5, 0.5, 0.5}, &stats);
  REQUIRE(stats.straddling_cells.size() == 2);
  const double growth = double(stats.straddling_cells[1]) /
                        double(stats.straddling_cells[0]);
  CHECK(growth > 2.5);
  CHECK(growth < 5.5);
}

TEST_CASE("MISE grid equals dense evaluation at the iso-surface region") {
  const BatchField field = sphere_field(0.3, 0.008);
  const OccupancyGrid mise = mesh::mise_evaluate(field, 8, 2, 0.5);
  const OccupancyGrid dense = mesh::dense_evaluate(field, 32, 0.5);
  REQUIRE(mise.nx == dense.nx);
  // every cell that straddles in the dense grid must carry identical values
  int straddling_checked = 0;
  for (int i = 0; i + 1 < dense.nx; ++i)
    for (int j = 0; j + 1 < dense.ny; ++j)
      for (int k = 0; k + 1 < dense.nz; ++k) {
        bool any_in = false, any_out = false;
        for (int c = 0; c < 8; ++c) {
          const double v = dense.value(i + (c & 1), j + ((c >> 1) & 1),
                                       k + (c >> 2));
          (v > 0.5 ? any_in : any_out) = true;
        }
        if (!(any_in && any_out)) continue;
        ++straddling_checked;
        for (int c = 0; c < 8; ++c) {
          const int ii = i + (c & 1), jj = j + ((c >> 1) & 1), kk = k + (c >> 2);
          CHECK(mise.value(ii, jj, kk) == dense.value(ii, jj, kk));
        }
      }
  CHECK(straddling_checked > 100);
}

TEST_CASE("MISE and dense meshes are identical after canonical ordering") {
  for (const auto& field :
       {sphere_field(0.3, 0.01), random_mlp_field(3), random_mlp_field(8)}) {
    const OccupancyGrid g1 = mesh::mise_evaluate(field, 8, 3, 0.5);
    const OccupancyGrid g2 = mesh::dense_evaluate(field, 64, 0.5);
    CHECK(meshes_identical(mesh::marching_cubes(g1), mesh::marching_cubes(g2)));
  }
}

TEST_CASE("marching cubes recovers the sphere area within 2 percent") {
  const double r = 0.3;
  const OccupancyGrid grid =
      mesh::mise_evaluate(sphere_field(r, 0.004), 32, 2, 0.5);
  const TriangleMesh m = mesh::marching_cubes(grid);
  m.validate();
  const double area = m.surface_area();
  const double expected = 4.0 * M_PI * r * r;
  CHECK(std::abs(area - expected) / expected < 0.02);
  // all vertices inside the grid bounds
  for (const auto& v : m.vertices) {
    CHECK(v.x >= grid.lo.x);
    CHECK(v.x <= grid.hi.x);
    CHECK(v.y >= grid.lo.y);
    CHECK(v.y <= grid.hi.y);
    CHECK(v.z >= grid.lo.z);
    CHECK(v.z <= grid.hi.z);
  }
}

TEST_CASE("sphere mesh is watertight with outward orientation, no slivers") {
  const OccupancyGrid grid =
      mesh::mise_evaluate(sphere_field(0.28, 0.01), 16, 1, 0.5);
  const TriangleMesh m = mesh::marching_cubes(grid);
  REQUIRE(!m.empty());
  for (const auto& [edge, count] : edge_counts(m)) {
    (void)edge;
    CHECK(count == 2);
  }
  for (const auto& f : m.faces) {
    const Point3 a = m.vertices[f[0]];
    const Point3 e1 = m.vertices[f[1]] - a;
    const Point3 e2 = m.vertices[f[2]] - a;
    const Point3 n = e1.cross(e2);
    CHECK(n.norm() > 1e-12);  // no degenerate faces
    const Point3 centroid = (a + m.vertices[f[1]] + m.vertices[f[2]]) * (1.0 / 3);
    CHECK(n.dot(centroid) > 0.0);  // outward from the origin-centered sphere
  }
}

TEST_CASE("flipping the field and tau flips face orientations only") {
  // off-lattice center so no grid vertex sits exactly at the iso-level
  const BatchField field = sphere_field(0.247, 0.02, {0.003, 0.001, -0.002});
  const BatchField flipped = [&](const std::vector<Point3>& pts) {
    auto v = field(pts);
    for (auto& x : v) x = 1.0 - x;
    return v;
  };
  OccupancyGrid g1 = mesh::dense_evaluate(field, 24, 0.5);
  OccupancyGrid g2 = mesh::dense_evaluate(flipped, 24, 0.5);
  g2.tau = 0.5;  // 1 - 0.5
  const TriangleMesh m1 = mesh::marching_cubes(g1);
  const TriangleMesh m2 = mesh::marching_cubes(g2);
  REQUIRE(m1.vertices.size() == m2.vertices.size());
  REQUIRE(m1.faces.size() == m2.faces.size());
  // 1 - v rounds, so identify vertices by quantized position
  const auto key = [](const Point3& p) {
    return std::array<long long, 3>{llround(p.x * 1e9), llround(p.y * 1e9),
                                    llround(p.z * 1e9)};
  };
  std::map<std::array<long long, 3>, std::uint32_t> vertex_of;
  for (std::uint32_t i = 0; i < m1.vertices.size(); ++i)
    vertex_of[key(m1.vertices[i])] = i;
  std::map<std::array<std::uint32_t, 3>, int> faces1;
  for (auto f : m1.faces) {
    while (!(f[0] <= f[1] && f[0] <= f[2])) f = {f[1], f[2], f[0]};
    faces1[f] += 1;
  }
  // same face set with reversed winding
  for (const auto& f2 : m2.faces) {
    const auto it0 = vertex_of.find(key(m2.vertices[f2[0]]));
    const auto it1 = vertex_of.find(key(m2.vertices[f2[1]]));
    const auto it2 = vertex_of.find(key(m2.vertices[f2[2]]));
    REQUIRE(it0 != vertex_of.end());
    REQUIRE(it1 != vertex_of.end());
    REQUIRE(it2 != vertex_of.end());
    std::array<std::uint32_t, 3> f = {it0->second, it2->second, it1->second};
    while (!(f[0] <= f[1] && f[0] <= f[2])) f = {f[1], f[2], f[0]};
    CHECK(faces1.count(f) == 1);
  }
}

TEST_CASE("grid validation rejects malformed inputs") {
  OccupancyGrid g;
  g.nx = g.ny = g.nz = 2;
  g.tau = 0.5;
  g.values.assign(8, 0.25);
  CHECK_NOTHROW(g.validate());
  g.tau = 1.5;
  CHECK_THROWS(g.validate());
  g.tau = 0.5;
  g.values[0] = 2.0;
  CHECK_THROWS(g.validate());
  g.values[0] = std::nan("");
  CHECK_THROWS(g.validate());
  CHECK_THROWS(mesh::mise_evaluate(constant_field(0.5), 4, 1, 0.5));
  // a field returning non-finite values is rejected
  const BatchField bad = [](const std::vector<Point3>& pts) {
    return std::vector<double>(pts.size(), std::nan(""));
  };
  CHECK_THROWS(mesh::mise_evaluate(bad, 8, 0, 0.5));
}

TEST_CASE("untrained model: degenerate field warning and empty meshes") {
  model::ModelConfig cfg;
  cfg.channels = 16;
  cfg.encoder_stages = 1;
  cfg.decoder_blocks = 1;
  model::Net net(cfg);
  const auto shape = DeformingShape::make_breathing_sphere(3);
  const auto seq = sample_surface_sequence(shape, 40, TemporalMode::even, 0.0, 2);
  model::FieldEvaluator field(net, seq);
  const auto result = mesh::extract_sequence(field, 0.5, 8, 0);
  CHECK(result.meshes.size() == 3);
  CHECK(result.warnings.size() == 3);  // all probabilities exactly 0.5
  for (const auto& m : result.meshes) CHECK(m.empty());
}

TEST_SUITE_END();
