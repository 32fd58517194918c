#include "flow4d/losses.hpp"

#include <stdexcept>

namespace flow4d::loss {

using ad::Tape;
using ad::Var;

const char* flow_variant_name(FlowVariant v) {
  switch (v) {
    case FlowVariant::chamfer:
      return "chamfer";
    case FlowVariant::l2_supervised:
      return "l2_supervised";
    case FlowVariant::hausdorff:
      return "hausdorff";
    case FlowVariant::sliced_wasserstein:
      return "sliced_wasserstein";
  }
  return "unknown";
}

FlowVariant flow_variant_from_name(const std::string& name) {
  if (name == "chamfer") return FlowVariant::chamfer;
  if (name == "l2_supervised") return FlowVariant::l2_supervised;
  if (name == "hausdorff") return FlowVariant::hausdorff;
  if (name == "sliced_wasserstein") return FlowVariant::sliced_wasserstein;
  throw std::runtime_error("unknown flow variant: " + name);
}

const char* directions_name(Directions d) {
  return d == Directions::forward_only ? "forward_only" : "forward_backward";
}

Directions directions_from_name(const std::string& name) {
  if (name == "forward_only") return Directions::forward_only;
  if (name == "forward_backward") return Directions::forward_backward;
  throw std::runtime_error("unknown directions mode: " + name);
}

Var flow_loss_chamfer(Tape& t, Var translated, Var target,
                      bool sum_directions) {
  const Var fwd = t.directed_nn_mean(translated, target);
  const Var bwd = t.directed_nn_mean(target, translated);
  return sum_directions ? t.add(fwd, bwd) : t.max2(fwd, bwd);
}

Var flow_loss_hausdorff(Tape& t, Var translated, Var target) {
  const Var fwd = t.directed_nn_max(translated, target);
  const Var bwd = t.directed_nn_max(target, translated);
  return t.max2(fwd, bwd);
}

Var flow_loss_swd(Tape& t, Var translated, Var target, int n_projections,
                  std::uint64_t seed) {
  return t.swd(translated, target, n_projections, seed);
}

Var flow_loss_l2_supervised(Tape& t, Var v_pred, const Tensor& gt_disp) {
  if (!t.value(v_pred).same_shape(gt_disp))
    throw std::runtime_error("supervised flow loss: length mismatch");
  const Var diff = t.sub(v_pred, t.constant(gt_disp));
  return t.mean_all(t.sqrt_guarded(t.rowsum(t.square(diff))));
}

Var recon_loss_bce(Tape& t, Var probs, const Tensor& labels) {
  return t.bce_mean(probs, labels);
}

Var total_loss(Tape& t, Var flow, Var recon, double lambda) {
  if (!(lambda > 0.0)) throw std::runtime_error("lambda must be positive");
  return t.add(flow, t.scale(recon, lambda));
}

Tensor points_to_tensor(const std::vector<Point3>& pts) {
  Tensor out(pts.size(), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out.at(i, 0) = pts[i].x;
    out.at(i, 1) = pts[i].y;
    out.at(i, 2) = pts[i].z;
  }
  return out;
}

double chamfer_flow_value(const std::vector<Point3>& translated,
                          const std::vector<Point3>& target,
                          bool sum_directions) {
  Tape t(/*grad_enabled=*/false);
  const Var a = t.constant(points_to_tensor(translated));
  const Var b = t.constant(points_to_tensor(target));
  return t.value(flow_loss_chamfer(t, a, b, sum_directions))[0];
}

double hausdorff_value(const std::vector<Point3>& a,
                       const std::vector<Point3>& b) {
  Tape t(/*grad_enabled=*/false);
  const Var va = t.constant(points_to_tensor(a));
  const Var vb = t.constant(points_to_tensor(b));
  return t.value(flow_loss_hausdorff(t, va, vb))[0];
}

}  // namespace flow4d::loss
