#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "flow4d/geometry.hpp"
#include "flow4d/model.hpp"

namespace flow4d::mesh {

// Dense scalar grid over an axis-aligned box; nx/ny/nz are vertex counts.
struct OccupancyGrid {
  int nx = 0, ny = 0, nz = 0;
  Point3 lo{-0.5, -0.5, -0.5};
  Point3 hi{0.5, 0.5, 0.5};
  std::vector<double> values;  // index (ix * ny + iy) * nz + iz
  double tau = 0.5;

  double value(int ix, int iy, int iz) const {
    return values[(std::size_t(ix) * ny + iy) * nz + iz];
  }
  Point3 position(int ix, int iy, int iz) const;
  void validate() const;
};

using BatchField =
    std::function<std::vector<double>(const std::vector<Point3>&)>;

struct MiseStats {
  std::vector<std::size_t> straddling_cells;  // per refinement level
  std::size_t evaluations = 0;
};

// Coarse evaluation followed by repeated subdivision of cells straddling tau
// (1-cell dilation halo). Cells never touched inherit the value of their
// enclosing evaluated region, so the returned grid matches dense evaluation
// wherever the field's iso-crossings stay within a halo of coarse crossings.
OccupancyGrid mise_evaluate(const BatchField& field, int start_res,
                            int upsample_steps, double tau,
                            const Point3& lo = {-0.5, -0.5, -0.5},
                            const Point3& hi = {0.5, 0.5, 0.5},
                            MiseStats* stats = nullptr);

// Every vertex evaluated; the MISE equivalence oracle.
OccupancyGrid dense_evaluate(const BatchField& field, int res_cells,
                             double tau, const Point3& lo = {-0.5, -0.5, -0.5},
                             const Point3& hi = {0.5, 0.5, 0.5});

// 256-case lookup with linear interpolation at tau, shared-edge vertex
// deduplication, and outward orientation (toward decreasing values).
TriangleMesh marching_cubes(const OccupancyGrid& grid);

// Vertices sorted lexicographically, faces rotated smallest-index-first and
// sorted; meshes extracted by equivalent paths compare equal.
TriangleMesh canonicalize(const TriangleMesh& mesh);

struct ExtractResult {
  std::vector<TriangleMesh> meshes;
  std::vector<std::string> warnings;
};

ExtractResult extract_sequence(const model::FieldEvaluator& field, double tau,
                               int start_res, int upsample_steps);

}  // namespace flow4d::mesh
