#include "flow4d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "flow4d/rng.hpp"
#include "json.hpp"

namespace flow4d::metric {

double volumetric_iou(const Indicator& pred, const Indicator& gt,
                      const Point3& lo, const Point3& hi,
                      std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 1000) throw std::runtime_error("iou needs >= 1000 samples");
  Rng rng(seed);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Point3 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y),
                   rng.uniform(lo.z, hi.z)};
    const bool a = pred(p);
    const bool b = gt(p);
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

std::vector<Point3> sample_mesh_surface(const TriangleMesh& mesh,
                                        std::size_t n, std::uint64_t seed) {
  if (mesh.empty()) throw std::runtime_error("empty prediction");
  std::vector<double> cum(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    const Point3 e1 = mesh.vertices[face[1]] - mesh.vertices[face[0]];
    const Point3 e2 = mesh.vertices[face[2]] - mesh.vertices[face[0]];
    total += 0.5 * e1.cross(e2).norm();
    cum[f] = total;
  }
  if (total <= 0.0) throw std::runtime_error("mesh has zero area");
  Rng rng(seed);
  std::vector<Point3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = rng.uniform(0.0, total);
    const std::size_t f =
        std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin();
    const auto& face = mesh.faces[std::min(f, mesh.faces.size() - 1)];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const Point3& a = mesh.vertices[face[0]];
    const Point3& b = mesh.vertices[face[1]];
    const Point3& c = mesh.vertices[face[2]];
    out.push_back(a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2));
  }
  return out;
}

namespace {

// accuracy or completeness: mean exact surface distance from sampled points
double mean_mesh_distance(const std::vector<Point3>& from,
                          const MeshDistanceIndex& to) {
  double sum = 0.0;
  for (const auto& p : from) sum += to.distance(p);
  return sum / double(from.size());
}

double mean_mesh_distance_exhaustive(const std::vector<Point3>& from,
                                     const TriangleMesh& to) {
  double sum = 0.0;
  for (const auto& p : from) {
    double best = 1e300;
    for (const auto& f : to.faces)
      best = std::min(best,
                      point_triangle_distance(p, to.vertices[f[0]],
                                              to.vertices[f[1]],
                                              to.vertices[f[2]]));
    sum += best;
  }
  return sum / double(from.size());
}

}  // namespace

double chamfer_metric(const TriangleMesh& pred, const TriangleMesh& gt,
                      std::size_t n_samples, std::uint64_t seed) {
  if (pred.empty()) throw std::runtime_error("empty prediction");
  if (gt.empty()) throw std::runtime_error("empty ground truth mesh");
  const auto pred_pts = sample_mesh_surface(pred, n_samples, seed);
  const auto gt_pts = sample_mesh_surface(gt, n_samples, seed + 1);
  const MeshDistanceIndex pred_index(pred);
  const MeshDistanceIndex gt_index(gt);
  const double accuracy = mean_mesh_distance(pred_pts, gt_index);
  const double completeness = mean_mesh_distance(gt_pts, pred_index);
  return 0.5 * (accuracy + completeness);
}

double chamfer_metric_bruteforce(const TriangleMesh& pred,
                                 const TriangleMesh& gt,
                                 std::size_t n_samples, std::uint64_t seed) {
  const auto pred_pts = sample_mesh_surface(pred, n_samples, seed);
  const auto gt_pts = sample_mesh_surface(gt, n_samples, seed + 1);
  const double accuracy = mean_mesh_distance_exhaustive(pred_pts, gt);
  const double completeness = mean_mesh_distance_exhaustive(gt_pts, pred);
  return 0.5 * (accuracy + completeness);
}

SurfaceTarget SurfaceTarget::analytic(
    std::function<double(const Point3&)> dist) {
  SurfaceTarget t;
  t.dist_ = std::move(dist);
  return t;
}

SurfaceTarget SurfaceTarget::from_points(const std::vector<Point3>& pts) {
  SurfaceTarget t;
  t.index_ = std::make_shared<NearestNeighborIndex>(pts);
  return t;
}

SurfaceTarget SurfaceTarget::from_mesh(const TriangleMesh& mesh) {
  SurfaceTarget t;
  t.mesh_index_ = std::make_shared<MeshDistanceIndex>(mesh);
  return t;
}

double SurfaceTarget::distance(const Point3& p) const {
  if (dist_) return dist_(p);
  if (mesh_index_) return mesh_index_->distance(p);
  if (index_) return index_->nearest(p).dist;
  throw std::runtime_error("surface target not initialized");
}

std::vector<std::uint32_t> sample_vertex_ids(const TriangleMesh& mesh,
                                             std::size_t n_samples,
                                             std::uint64_t seed) {
  const auto nv = static_cast<std::uint32_t>(mesh.vertices.size());
  if (nv == 0) throw std::runtime_error("empty prediction");
  Rng rng(seed);
  if (n_samples >= nv) {
    std::vector<std::uint32_t> all(nv);
    std::iota(all.begin(), all.end(), 0u);
    return all;
  }
  return rng.sample_without_replacement(nv, static_cast<std::uint32_t>(n_samples));
}

double correspondence_l2(const TriangleMesh& pred_mesh,
                         const std::vector<std::uint32_t>& sampled_ids,
                         const std::vector<Point3>& flow_on_vertices,
                         const SurfaceTarget& gt_next) {
  if (sampled_ids.size() != flow_on_vertices.size())
    throw std::runtime_error("correspondence: flow count mismatch");
  if (sampled_ids.empty())
    throw std::runtime_error("correspondence: no samples");
  double sum = 0.0;
  for (std::size_t i = 0; i < sampled_ids.size(); ++i) {
    const Point3 advected =
        pred_mesh.vertices[sampled_ids[i]] + flow_on_vertices[i];
    sum += gt_next.distance(advected);
  }
  return sum / double(sampled_ids.size());
}

// ---------------------------------------------------------------------------

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["per_frame"]["iou"] = iou;
  j["per_frame"]["chamfer"] = chamfer;
  j["per_frame"]["correspondence"] = correspondence;
  j["mean"]["iou"] = mean_iou;
  j["mean"]["chamfer"] = mean_chamfer;
  j["mean"]["correspondence"] = mean_correspondence;
  j["n_samples"] = n_samples;
  j["seed"] = seed;
  return j.dump(2);
}

const char* MetricsReport::csv_header() {
  return "label,iou,chamfer,correspondence,n_samples,seed";
}

std::string MetricsReport::to_csv_row(const std::string& label) const {
  std::ostringstream os;
  os.precision(10);
  os << label << ',' << mean_iou << ',' << mean_chamfer << ','
     << mean_correspondence << ',' << n_samples << ',' << seed;
  return os.str();
}

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

std::vector<Point3> exact_surface_points(const DeformingShape& shape,
                                         double time, std::size_t n,
                                         Rng& rng) {
  std::vector<Point3> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    pts.push_back(shape.map_point(shape.sample_reference_surface(rng), time));
  return pts;
}

}  // namespace

MetricsReport evaluate_sequence(model::Net& net, const SequenceRecord& rec,
                                const EvalOptions& opts) {
  const auto& seq = rec.sequence;
  const auto& shape = rec.shape;
  const int T = static_cast<int>(seq.frames.size());
  model::FieldEvaluator field(net, seq);

  MetricsReport report;
  report.n_samples = opts.n_samples;
  report.seed = opts.seed;
  Rng rng(opts.seed);

  // IoU: decoded field vs analytic indicator, shared uniform samples
  std::vector<Point3> iou_pts(opts.n_samples);
  for (auto& p : iou_pts)
    p = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
         rng.uniform(-0.5, 0.5)};
  for (int t = 0; t < T; ++t) {
    const std::vector<double> probs = field.occupancy(iou_pts, t);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < iou_pts.size(); ++i) {
      const bool a = probs[i] > opts.tau;
      const bool b = shape.inside(iou_pts[i], seq.frames[t].time);
      inter += (a && b) ? 1 : 0;
      uni += (a || b) ? 1 : 0;
    }
    report.iou.push_back(uni == 0 ? 1.0 : double(inter) / double(uni));
  }

  if (opts.with_meshes) {
    const mesh::ExtractResult extraction =
        mesh::extract_sequence(field, opts.tau, opts.start_res,
                               opts.upsample_steps);
    for (int t = 0; t < T; ++t) {
      const TriangleMesh& m = extraction.meshes[t];
      const double time = seq.frames[t].time;
      if (m.empty()) {
        report.chamfer.push_back(std::sqrt(3.0));  // worst case in the cube
        if (t + 1 < T) report.correspondence.push_back(std::sqrt(3.0));
        continue;
      }
      const auto pred_pts =
          sample_mesh_surface(m, opts.n_samples, rng.next_u64());
      // accuracy against a dense exact surface sampling, completeness by
      // exact distance to the predicted mesh
      const auto gt_pts =
          exact_surface_points(shape, time, 4 * opts.n_samples, rng);
      const NearestNeighborIndex gt_index(gt_pts);
      double accuracy = 0.0;
      for (const auto& p : pred_pts) accuracy += gt_index.nearest(p).dist;
      accuracy /= double(pred_pts.size());
      const MeshDistanceIndex pred_index(m);
      double completeness = 0.0;
      for (std::size_t i = 0; i < opts.n_samples; ++i)
        completeness += pred_index.distance(gt_pts[i]);
      completeness /= double(opts.n_samples);
      report.chamfer.push_back(0.5 * (accuracy + completeness));

      if (t + 1 < T) {
        const double t_next = seq.frames[t + 1].time;
        const auto ids = sample_vertex_ids(
            m, std::min<std::size_t>(opts.n_samples, 2000), rng.next_u64());
        // flow at a mesh vertex = flow of the nearest input point
        const NearestNeighborIndex input_index(seq.frames[t].points);
        const auto& motion = field.motion(t);
        std::vector<Point3> flows(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const auto nearest = input_index.nearest(m.vertices[ids[i]]);
          flows[i] = motion[nearest.index];
        }
        const auto gt_next_pts =
            exact_surface_points(shape, t_next, 4 * opts.n_samples, rng);
        report.correspondence.push_back(correspondence_l2(
            m, ids, flows, SurfaceTarget::from_points(gt_next_pts)));
      }
    }
  }

  report.mean_iou = mean_of(report.iou);
  report.mean_chamfer = mean_of(report.chamfer);
  report.mean_correspondence = mean_of(report.correspondence);
  return report;
}

std::vector<ResolutionStudyRow> resolution_study(
    model::Net& net, ShapeKind kind, const std::vector<int>& point_counts,
    const std::vector<TemporalMode>& modes, const EvalOptions& opts,
    std::uint64_t data_seed) {
  std::vector<ResolutionStudyRow> rows;
  std::uint64_t salt = 0;
  for (int n : point_counts) {
    for (TemporalMode mode : modes) {
      SequenceRecord rec;
      rec.shape = DeformingShape::make(kind);
      rec.settings.kind = kind;
      rec.settings.T = rec.shape.duration;
      rec.settings.n_points = n;
      rec.settings.temporal_mode = mode;
      rec.settings.seed = data_seed + salt;
      rec.sequence = sample_surface_sequence(rec.shape, n, mode, 0.0,
                                             rec.settings.seed);
      ResolutionStudyRow row;
      row.n_points = n;
      row.mode = mode;
      row.metrics = evaluate_sequence(net, rec, opts);
      rows.push_back(std::move(row));
      ++salt;
    }
  }
  return rows;
}

}  // namespace flow4d::metric
