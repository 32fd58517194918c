#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "flow4d/geometry.hpp"
#include "flow4d/rng.hpp"
#include "helpers.hpp"

using namespace flow4d;

namespace {

// O(N*Q) oracle with the same tie rule (lowest index).
std::pair<std::uint32_t, double> brute_nearest(const std::vector<Point3>& pts,
                                               const Point3& q) {
  std::uint32_t best = 0;
  double best_d2 = 1e300;
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    const double dx = q.x - pts[i].x, dy = q.y - pts[i].y, dz = q.z - pts[i].z;
    const double d2 = dx * dx + dy * dy + dz * dz;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return {best, std::sqrt(best_d2)};
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("single-point index") {
  const NearestNeighborIndex index({{0, 0, 0}});
  const auto r = index.nearest({1, 1, 1});
  CHECK(r.dist == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
  CHECK(r.index == 0);
}

TEST_CASE("empty point set is rejected") {
  CHECK_THROWS_WITH_AS(NearestNeighborIndex({}), "empty point set",
                       std::runtime_error);
}

TEST_CASE("unit-cube corners: center query ties resolve to lowest index") {
  std::vector<Point3> corners;
  for (int i = 0; i < 8; ++i)
    corners.push_back({double(i & 1), double((i >> 1) & 1), double(i >> 2)});
  const NearestNeighborIndex index(corners);
  const auto r = index.nearest({0.5, 0.5, 0.5});
  CHECK(r.dist == doctest::Approx(std::sqrt(3.0) / 2).epsilon(1e-12));
  CHECK(r.index == 0);  // all corners tie
}

TEST_CASE("query equal to an indexed point returns distance zero") {
  Rng rng(3);
  const auto pts = testutil::random_points(rng, 64);
  const NearestNeighborIndex index(pts);
  const auto r = index.nearest(pts[17]);
  CHECK(r.dist == 0.0);
  CHECK(r.index == 17);
}

TEST_CASE("duplicate points: one of them is returned, distance identical") {
  std::vector<Point3> pts = {{0.1, 0, 0}, {0.3, 0.3, 0}, {0.3, 0.3, 0}};
  const NearestNeighborIndex index(pts);
  const auto r = index.nearest({0.31, 0.3, 0});
  CHECK(r.index == 1);  // lowest of the duplicates
  CHECK(r.dist == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("kd-tree equals exhaustive scan on random instances") {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(2000);
    const auto pts = testutil::random_points(rng, n);
    const NearestNeighborIndex index(pts);
    for (int qi = 0; qi < 25; ++qi) {
      const Point3 q{rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7),
                     rng.uniform(-0.7, 0.7)};
      const auto [bi, bd] = brute_nearest(pts, q);
      const auto r = index.nearest(q);
      CHECK(r.index == bi);
      CHECK(r.dist == doctest::Approx(bd).epsilon(1e-12));
    }
  }
}

TEST_CASE("icosphere containment: center in, far point out") {
  const TriangleMesh mesh = testutil::icosphere(0.4, 2);
  CHECK(point_in_mesh(mesh, {0, 0, 0}));
  CHECK_FALSE(point_in_mesh(mesh, {0.9, 0, 0}));
  CHECK_THROWS(point_in_mesh(mesh, {std::nan(""), 0, 0}));
}

TEST_CASE("containment agrees with the analytic sphere on random queries") {
  const double radius = 0.35;
  const TriangleMesh mesh = testutil::icosphere(radius, 4);
  const MeshInsideTester tester(mesh);
  Rng rng(77);
  int agree = 0;
  const int n = 10000;
  int skipped = 0;
  for (int i = 0; i < n; ++i) {
    const Point3 q{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                   rng.uniform(-0.5, 0.5)};
    const bool analytic = q.norm() <= radius;
    // points within the mesh/sphere discrepancy shell may disagree
    if (std::abs(q.norm() - radius) < 2e-3) {
      ++skipped;
      continue;
    }
    agree += tester.inside(q) == analytic ? 1 : 0;
  }
  CHECK(double(agree) / double(n - skipped) >= 0.995);
}

TEST_CASE("containment is invariant to the ray direction") {
  const TriangleMesh mesh = testutil::icosphere(0.3, 3);
  const MeshInsideTester tester(mesh);
  const double dirs[8][3] = {{1, 0.1, 0.07},   {-1, 0.13, 0.21},
                             {0.11, 1, 0.19},  {0.23, -1, 0.05},
                             {0.31, 0.17, 1},  {0.12, 0.29, -1},
                             {0.7, 0.6, 0.5},  {-0.6, 0.7, -0.4}};
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const Point3 q{rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45),
                   rng.uniform(-0.45, 0.45)};
    if (std::abs(q.norm() - 0.3) < 5e-3) continue;
    const bool expected = tester.inside(q);
    for (const auto& d : dirs)
      CHECK(tester.inside_along(q, Point3{d[0], d[1], d[2]}.normalized()) ==
            expected);
  }
}

TEST_CASE("mesh validate flags bad faces") {
  TriangleMesh mesh;
  mesh.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  mesh.faces = {{0, 1, 2}};
  CHECK_NOTHROW(mesh.validate());
  mesh.faces = {{0, 1, 5}};
  CHECK_THROWS(mesh.validate());
  mesh.faces = {{0, 1, 1}};
  CHECK_THROWS(mesh.validate());
}

TEST_CASE("OBJ and PLY round-trip") {
  const TriangleMesh mesh = testutil::icosphere(0.25, 2, {0.1, -0.05, 0.02});
  const auto dir = std::filesystem::temp_directory_path() / "flow4d_geo";
  std::filesystem::create_directories(dir);

  const std::string obj = (dir / "m.obj").string();
  write_obj(mesh, obj);
  const TriangleMesh back_obj = read_obj(obj);
  REQUIRE(back_obj.vertices.size() == mesh.vertices.size());
  REQUIRE(back_obj.faces.size() == mesh.faces.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    CHECK((back_obj.vertices[i] - mesh.vertices[i]).norm() == 0.0);
  CHECK(back_obj.faces == mesh.faces);

  const std::string ply = (dir / "m.ply").string();
  write_ply(mesh, ply);
  const TriangleMesh back_ply = read_ply(ply);
  REQUIRE(back_ply.vertices.size() == mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    CHECK((back_ply.vertices[i] - mesh.vertices[i]).norm() == 0.0);
  CHECK(back_ply.faces == mesh.faces);
}

TEST_CASE("flow PLY export writes one record per point") {
  const auto dir = std::filesystem::temp_directory_path() / "flow4d_geo";
  std::filesystem::create_directories(dir);
  Rng rng(4);
  const auto pts = testutil::random_points(rng, 40);
  const auto vecs = testutil::random_points(rng, 40, -0.01, 0.01);
  const std::string path = (dir / "flow.ply").string();
  write_flow_ply(pts, vecs, path);
  CHECK(std::filesystem::file_size(path) > 40 * 6 * sizeof(double));
  CHECK_THROWS(write_flow_ply(pts, {}, path));
}

TEST_SUITE_END();
