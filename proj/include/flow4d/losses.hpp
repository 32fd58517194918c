#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flow4d/autodiff.hpp"
#include "flow4d/geometry.hpp"

namespace flow4d::loss {

enum class FlowVariant { chamfer, l2_supervised, hausdorff, sliced_wasserstein };
enum class Directions { forward_only, forward_backward };

const char* flow_variant_name(FlowVariant v);
FlowVariant flow_variant_from_name(const std::string& name);
const char* directions_name(Directions d);
Directions directions_from_name(const std::string& name);

struct LossWeights {
  double lambda = 0.1;
  FlowVariant flow_variant = FlowVariant::chamfer;
  Directions directions = Directions::forward_backward;
  // Sum of the two directed Chamfer terms instead of their max.
  bool sum_directions = false;
  // Raw sum over time steps instead of the mean over T-1.
  bool sum_over_time = false;
  int swd_projections = 16;
  std::uint64_t swd_seed = 7;
};

// Per-step flow terms (graph-building; nearest-neighbor matches fixed in the
// backward pass). `translated` is P_t + V_t, `target` is P_{t+1}.
ad::Var flow_loss_chamfer(ad::Tape& t, ad::Var translated, ad::Var target,
                          bool sum_directions = false);
ad::Var flow_loss_hausdorff(ad::Tape& t, ad::Var translated, ad::Var target);
ad::Var flow_loss_swd(ad::Tape& t, ad::Var translated, ad::Var target,
                      int n_projections, std::uint64_t seed);
// Mean Euclidean norm of (predicted displacement - ground-truth displacement).
ad::Var flow_loss_l2_supervised(ad::Tape& t, ad::Var v_pred,
                                const Tensor& gt_disp);

// Mean binary cross entropy with probabilities clamped to [1e-7, 1 - 1e-7].
ad::Var recon_loss_bce(ad::Tape& t, ad::Var probs, const Tensor& labels);

// flow + lambda * recon
ad::Var total_loss(ad::Tape& t, ad::Var flow, ad::Var recon, double lambda);

// Scalar conveniences over plain point vectors (tests, evaluation).
double chamfer_flow_value(const std::vector<Point3>& translated,
                          const std::vector<Point3>& target,
                          bool sum_directions = false);
double hausdorff_value(const std::vector<Point3>& a,
                       const std::vector<Point3>& b);
Tensor points_to_tensor(const std::vector<Point3>& pts);

}  // namespace flow4d::loss
