#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flow4d/geometry.hpp"
#include "flow4d/mise.hpp"
#include "flow4d/model.hpp"
#include "flow4d/synthetic.hpp"

namespace flow4d::metric {

using Indicator = std::function<bool(const Point3&)>;

// Monte-Carlo IoU over uniform samples in [lo, hi]; both-empty counts as 1.
double volumetric_iou(const Indicator& pred, const Indicator& gt,
                      const Point3& lo, const Point3& hi, std::size_t n_samples,
                      std::uint64_t seed);

// Area-weighted surface samples.
std::vector<Point3> sample_mesh_surface(const TriangleMesh& mesh,
                                        std::size_t n, std::uint64_t seed);

// Mean of accuracy (pred -> gt) and completeness (gt -> pred) over sampled
// surfaces, nearest neighbors via the kd-tree.
double chamfer_metric(const TriangleMesh& pred, const TriangleMesh& gt,
                      std::size_t n_samples, std::uint64_t seed);
// Exhaustive-scan oracle used by the acceptance checks.
double chamfer_metric_bruteforce(const TriangleMesh& pred,
                                 const TriangleMesh& gt, std::size_t n_samples,
                                 std::uint64_t seed);

// Where the next frame's ground-truth surface lives: an analytic
// point-to-surface distance, or a sampled point set queried by kd-tree.
class SurfaceTarget {
 public:
  static SurfaceTarget analytic(std::function<double(const Point3&)> dist);
  static SurfaceTarget from_points(const std::vector<Point3>& pts);
  static SurfaceTarget from_mesh(const TriangleMesh& mesh);
  double distance(const Point3& p) const;

 private:
  std::function<double(const Point3&)> dist_;
  std::shared_ptr<NearestNeighborIndex> index_;
  std::shared_ptr<MeshDistanceIndex> mesh_index_;
};

std::vector<std::uint32_t> sample_vertex_ids(const TriangleMesh& mesh,
                                             std::size_t n_samples,
                                             std::uint64_t seed);

// Advect the sampled vertices by their flow vectors (one per sampled vertex)
// and average the distance to the next frame's surface.
double correspondence_l2(const TriangleMesh& pred_mesh,
                         const std::vector<std::uint32_t>& sampled_ids,
                         const std::vector<Point3>& flow_on_vertices,
                         const SurfaceTarget& gt_next);

// ---------------------------------------------------------------------------

struct MetricsReport {
  std::vector<double> iou;             // per frame
  std::vector<double> chamfer;         // per frame
  std::vector<double> correspondence;  // per transition (T-1)
  double mean_iou = 0.0;
  double mean_chamfer = 0.0;
  double mean_correspondence = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;

  std::string to_json() const;
  std::string to_csv_row(const std::string& label) const;
  static const char* csv_header();
};

struct EvalOptions {
  std::size_t n_samples = 10000;
  double tau = 0.5;
  int start_res = 32;
  int upsample_steps = 1;
  std::uint64_t seed = 17;
  bool with_meshes = true;  // chamfer/correspondence need extraction
};

// IoU from the decoded field vs the analytic indicator; Chamfer and
// correspondence from extracted meshes vs analytic surfaces.
MetricsReport evaluate_sequence(model::Net& net, const SequenceRecord& rec,
                                const EvalOptions& opts);

struct ResolutionStudyRow {
  int n_points = 0;
  TemporalMode mode = TemporalMode::even;
  MetricsReport metrics;
};

std::vector<ResolutionStudyRow> resolution_study(
    model::Net& net, ShapeKind kind, const std::vector<int>& point_counts,
    const std::vector<TemporalMode>& modes, const EvalOptions& opts,
    std::uint64_t data_seed);

}  // namespace flow4d::metric
