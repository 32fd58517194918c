#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flow4d/nn.hpp"
#include "flow4d/synthetic.hpp"

namespace flow4d::model {

enum class FusionMode { concat, single_cross_attn, dual_cross_attn };

const char* fusion_mode_name(FusionMode m);
FusionMode fusion_mode_from_name(const std::string& name);

struct ModelConfig {
  int channels = 128;
  int encoder_stages = 5;
  int decoder_blocks = 5;
  FusionMode fusion = FusionMode::dual_cross_attn;
  bool attention_layer_norm = true;
  std::uint64_t init_seed = 1;
};

struct EncodeOut {
  ad::Var spatial_tokens;   // (sum_t N_t) x C, per-point features
  ad::Var spatial_codes;    // T x C, S_t rows
  ad::Var temporal_tokens;  // T x C, per-frame pooled temporal features
  ad::Var temporal_code;    // 1 x C, h
  ad::Segments segs;        // points per frame
};

struct FusedOut {
  ad::Var codes;                  // T x C, e_t rows
  std::vector<ad::Var> weights;   // attention weight matrices (diagnostics)
};

struct TemporalDecodeOut {
  ad::Var motion;    // N x 3 displacements toward the next frame
  ad::Var features;  // N x C trunk features (f_t rows)
  ad::Var pooled;    // T x C per-frame max of the features
};

struct OccupancyDecodeOut {
  ad::Var probs;   // Q x 1 in [0, 1]
  ad::Var logits;  // Q x 1
};

struct AttnOut {
  ad::Var out;
  ad::Var weights;  // row-stochastic
};

// Single-head cross attention with optional pre-LN and an output projection.
// Keys and values are normalized by one shared LN (they come from the same
// source in both fusion submodules).
AttnOut cross_attention(nn::GraphParams& gp, const std::string& name,
                        ad::Var queries, ad::Var keys, ad::Var values,
                        std::size_t query_width, std::size_t channels,
                        bool use_layer_norm);

class Net {
 public:
  explicit Net(const ModelConfig& cfg) : cfg_(cfg), init_rng_(cfg.init_seed) {}

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  nn::GraphParams graph(ad::Tape& tape) {
    return nn::GraphParams(tape, params_, init_rng_);
  }

  // Spatial encoding of every frame (stacked) plus one temporal encoding of
  // the whole sequence. `stacked_xyz` rows follow `segs`; times hold one
  // entry per frame.
  EncodeOut encode(nn::GraphParams& gp, ad::Var stacked_xyz,
                   const std::vector<double>& times, const ad::Segments& segs);
  EncodeOut encode(nn::GraphParams& gp, const Tensor& stacked_xyz,
                   const std::vector<double>& times,
                   const ad::Segments& segs) {
    return encode(gp, gp.tape.constant(stacked_xyz), times, segs);
  }

  // Temporal-only encoding joined with externally supplied spatial features
  // (the spatial trunk does not depend on frame times, so a time-reversed
  // pass can reuse it).
  EncodeOut encode_with_spatial(nn::GraphParams& gp, ad::Var stacked_xyz,
                                ad::Var spatial_tokens, ad::Var spatial_codes,
                                const std::vector<double>& times,
                                const ad::Segments& segs);

  // Single-frame spatial encoding: (per-point tokens, S_t).
  std::pair<ad::Var, ad::Var> encode_spatial(nn::GraphParams& gp,
                                             const Tensor& frame_xyz);

  FusedOut fuse(nn::GraphParams& gp, const EncodeOut& enc) {
    return fuse(gp, enc, cfg_.fusion);
  }
  FusedOut fuse(nn::GraphParams& gp, const EncodeOut& enc, FusionMode mode);

  // codes row 0 is the reference frame's code. `points` rows follow `segs`
  // (the trajectory subset during training, the full clouds at inference).
  TemporalDecodeOut temporal_decode(nn::GraphParams& gp, ad::Var codes,
                                    ad::Var points, const ad::Segments& segs);

  // Queries conditioned on their frame's e_t (CBN) and on the pooled flow
  // features; codes/f_pooled have one row per query segment.
  OccupancyDecodeOut occupancy_decode(nn::GraphParams& gp, ad::Var queries,
                                      ad::Var codes, ad::Var f_pooled,
                                      const ad::Segments& segs, bool train);

  long temporal_encode_calls() const { return temporal_encode_calls_; }

 private:
  ad::Var pointnet_trunk(nn::GraphParams& gp, const std::string& prefix,
                         ad::Var x, std::size_t in_dim,
                         const ad::Segments& pool_segs);

  ModelConfig cfg_;
  nn::ParamStore params_;
  Rng init_rng_;
  long temporal_encode_calls_ = 0;
};

// Frozen-parameter view of a trained model over one sequence: per-frame
// codes, flow fields on the input points, and batched occupancy queries in
// eval mode.
class FieldEvaluator {
 public:
  FieldEvaluator(Net& net, const PointCloudSequence& seq);

  int num_frames() const { return static_cast<int>(times_.size()); }
  const std::vector<Point3>& motion(int frame) const { return motion_[frame]; }
  std::vector<double> occupancy(const std::vector<Point3>& queries,
                                int frame) const;
  double occupancy_one(const Point3& q, int frame) const;

 private:
  Net& net_;
  std::vector<double> times_;
  Tensor codes_;     // T x C
  Tensor f_pooled_;  // T x C
  std::vector<std::vector<Point3>> motion_;
};

}  // namespace flow4d::model
