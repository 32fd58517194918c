#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flow4d/losses.hpp"
#include "flow4d/metrics.hpp"
#include "flow4d/model.hpp"
#include "flow4d/synthetic.hpp"

namespace flow4d::train {

struct TrainConfig {
  int batch_size = 4;
  double lr = 1e-4;
  int lr_decay_every = 5000;
  double lr_decay_factor = 0.5;
  int max_iters = 2000;
  int val_every = 2000;
  int n_recon_queries = 512;
  int n_flow_trajectories = 100;
  double near_surface_band = 0.02;
  double near_surface_fraction = 0.5;
  std::uint64_t seed = 0;
  int patience = 10;  // validations without IoU improvement
  double grad_clip_norm = 0.0;  // 0 disables clipping
  model::ModelConfig model;
  loss::LossWeights weights;
  metric::EvalOptions val;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  // Dotted-key override, e.g. "fusion.mode=concat" or "lr=1e-3".
  void apply_override(const std::string& key, const std::string& value);
  std::string hash() const;
};

struct LossBreakdown {
  double flow = 0.0;
  double recon = 0.0;
  double total = 0.0;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::vector<SequenceRecord> train_set,
          std::vector<SequenceRecord> val_set);

  LossBreakdown train_step();
  metric::MetricsReport validate();

  // Full loop: JSON-lines log, periodic validation, best/last checkpoints,
  // patience-based early stop. Returns the final breakdown.
  LossBreakdown run(const std::string& out_dir);

  void save(const std::string& path) const;
  void load(const std::string& path);

  model::Net& net() { return net_; }
  const TrainConfig& config() const { return cfg_; }
  long iteration() const { return iteration_; }
  double current_lr() const;
  long loss_evaluations() const { return loss_evaluations_; }
  double best_val_iou() const { return best_val_iou_; }

 private:
  struct DirectionView {
    std::vector<const std::vector<Point3>*> frame_points;
    std::vector<double> encoder_times;  // strictly increasing
    std::vector<double> shape_times;    // original frame times
  };

  ad::Var direction_loss(nn::GraphParams& gp, const SequenceRecord& rec,
                         const model::EncodeOut& enc,
                         const DirectionView& view, ad::Var* flow_out,
                         ad::Var* recon_out);

  TrainConfig cfg_;
  std::vector<SequenceRecord> train_set_;
  std::vector<SequenceRecord> val_set_;
  model::Net net_;
  Rng data_rng_;
  long iteration_ = 0;
  long loss_evaluations_ = 0;
  double best_val_iou_ = -1.0;
  int vals_since_best_ = 0;
};

// Mean endpoint error of the predicted per-point motion against the exact
// deformation map, over all transitions; and the matching mean ground-truth
// displacement magnitude.
double flow_endpoint_error(model::Net& net, const SequenceRecord& rec);
double mean_gt_displacement(const SequenceRecord& rec);

}  // namespace flow4d::train
