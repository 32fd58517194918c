#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "flow4d/geometry.hpp"
#include "flow4d/rng.hpp"

namespace testutil {

using flow4d::Point3;
using flow4d::TriangleMesh;

// Subdivided icosahedron; watertight, outward-oriented.
inline TriangleMesh icosphere(double radius, int subdivisions,
                              const Point3& center = {0, 0, 0}) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Point3> verts = {
      {-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
  std::vector<std::array<std::uint32_t, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& v : verts) v = v.normalized();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoint;
    const auto mid = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      const Point3 m = ((verts[a] + verts[b]) * 0.5).normalized();
      verts.push_back(m);
      const auto id = static_cast<std::uint32_t>(verts.size() - 1);
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<std::array<std::uint32_t, 3>> next;
    for (const auto& f : faces) {
      const auto a = mid(f[0], f[1]);
      const auto b = mid(f[1], f[2]);
      const auto c = mid(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    faces = std::move(next);
  }
  TriangleMesh mesh;
  for (const auto& v : verts) mesh.vertices.push_back(center + v * radius);
  mesh.faces = faces;
  return mesh;
}

inline std::vector<Point3> random_points(flow4d::Rng& rng, std::size_t n,
                                         double lo = -0.5, double hi = 0.5) {
  std::vector<Point3> pts(n);
  for (auto& p : pts)
    p = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return pts;
}

}  // namespace testutil
