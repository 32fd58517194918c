#include "flow4d/model.hpp"

#include <cmath>
#include <stdexcept>

namespace flow4d::model {

using ad::Segments;
using ad::Var;

const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::concat:
      return "concat";
    case FusionMode::single_cross_attn:
      return "single_cross_attn";
    case FusionMode::dual_cross_attn:
      return "dual_cross_attn";
  }
  return "unknown";
}

FusionMode fusion_mode_from_name(const std::string& name) {
  if (name == "concat") return FusionMode::concat;
  if (name == "single_cross_attn") return FusionMode::single_cross_attn;
  if (name == "dual_cross_attn") return FusionMode::dual_cross_attn;
  throw std::runtime_error("unknown fusion mode: " + name);
}

AttnOut cross_attention(nn::GraphParams& gp, const std::string& name,
                        Var queries, Var keys, Var values,
                        std::size_t query_width, std::size_t channels,
                        bool use_layer_norm) {
  ad::Tape& t = gp.tape;
  if (t.value(keys).rows() == 0)
    throw std::runtime_error("cross_attention: no key rows");
  if (t.value(keys).rows() != t.value(values).rows())
    throw std::runtime_error("cross_attention: key/value count mismatch");
  Var q = queries, k_in = keys, v_in = values;
  if (use_layer_norm) {
    q = nn::layer_norm(gp, name + ".ln_q", q, query_width);
    k_in = nn::layer_norm(gp, name + ".ln_kv", k_in, channels);
    v_in = nn::layer_norm(gp, name + ".ln_kv", v_in, channels);
  }
  const Var pq = nn::linear(gp, name + ".Wq", q, query_width, channels);
  const Var pk = nn::linear(gp, name + ".Wk", k_in, channels, channels);
  const Var pv = nn::linear(gp, name + ".Wv", v_in, channels, channels);
  const Var scores =
      t.scale(t.matmul(pq, pk, false, true), 1.0 / std::sqrt(double(channels)));
  const Var weights = t.softmax_rows(scores);
  const Var mixed = t.matmul(weights, pv);
  const Var out = nn::linear(gp, name + ".Wo", mixed, channels, channels);
  return {out, weights};
}

Var Net::pointnet_trunk(nn::GraphParams& gp, const std::string& prefix, Var x,
                        std::size_t in_dim, const Segments& pool_segs) {
  ad::Tape& t = gp.tape;
  const auto C = static_cast<std::size_t>(cfg_.channels);
  Var feat = nn::linear(gp, prefix + ".lift", x, in_dim, C);
  for (int s = 0; s < cfg_.encoder_stages; ++s) {
    const Var pooled = t.segment_colmax(feat, pool_segs);
    const Var widened =
        t.concat_cols({feat, t.broadcast_rows(pooled, pool_segs)});
    feat = nn::resblock(gp, prefix + ".block" + std::to_string(s), widened,
                        2 * C, C);
  }
  return feat;
}

namespace {

void check_encode_inputs(ad::Tape& t, Var stacked_xyz,
                         const std::vector<double>& times,
                         const Segments& segs) {
  if (t.value(stacked_xyz).cols() != 3)
    throw std::runtime_error("encode: expected xyz rows");
  if (times.size() != segs.size() || times.size() < 2)
    throw std::runtime_error("encode: need at least two frames");
  if (segs.total() != t.value(stacked_xyz).rows())
    throw std::runtime_error("encode: segment row mismatch");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1]))
      throw std::runtime_error("encode: times not strictly increasing");
  for (auto c : segs.counts)
    if (c < 2) throw std::runtime_error("encode: frame needs at least 2 points");
}

}  // namespace

EncodeOut Net::encode(nn::GraphParams& gp, Var stacked_xyz,
                      const std::vector<double>& times, const Segments& segs) {
  ad::Tape& t = gp.tape;
  check_encode_inputs(t, stacked_xyz, times, segs);
  const Var tokens = pointnet_trunk(gp, "spatial", stacked_xyz, 3, segs);
  const Var codes = t.segment_colmax(tokens, segs);
  return encode_with_spatial(gp, stacked_xyz, tokens, codes, times, segs);
}

EncodeOut Net::encode_with_spatial(nn::GraphParams& gp, Var stacked_xyz,
                                   Var spatial_tokens, Var spatial_codes,
                                   const std::vector<double>& times,
                                   const Segments& segs) {
  ad::Tape& t = gp.tape;
  check_encode_inputs(t, stacked_xyz, times, segs);
  const std::size_t n_rows = t.value(stacked_xyz).rows();

  EncodeOut out;
  out.segs = segs;
  out.spatial_tokens = spatial_tokens;
  out.spatial_codes = spatial_codes;

  // temporal trunk sees the whole sequence as one 4-D point set
  Tensor time_col(n_rows, 1);
  std::size_t row = 0;
  for (std::size_t k = 0; k < segs.size(); ++k)
    for (std::uint32_t i = 0; i < segs.counts[k]; ++i, ++row)
      time_col[row] = times[k];
  const Var xyzt = t.concat_cols({stacked_xyz, t.constant(std::move(time_col))});
  ++temporal_encode_calls_;
  const Segments whole = Segments::single(static_cast<std::uint32_t>(n_rows));
  const Var temporal_feat = pointnet_trunk(gp, "temporal", xyzt, 4, whole);
  out.temporal_code = t.segment_colmax(temporal_feat, whole);
  out.temporal_tokens = t.segment_colmax(temporal_feat, segs);
  return out;
}

std::pair<Var, Var> Net::encode_spatial(nn::GraphParams& gp,
                                        const Tensor& frame_xyz) {
  if (frame_xyz.rows() < 2)
    throw std::runtime_error("encode_spatial: need at least 2 points");
  const Segments segs =
      Segments::single(static_cast<std::uint32_t>(frame_xyz.rows()));
  const Var xyz = gp.tape.constant(frame_xyz);
  const Var tokens = pointnet_trunk(gp, "spatial", xyz, 3, segs);
  const Var code = gp.tape.segment_colmax(tokens, segs);
  return {tokens, code};
}

FusedOut Net::fuse(nn::GraphParams& gp, const EncodeOut& enc,
                   FusionMode mode) {
  ad::Tape& t = gp.tape;
  const auto C = static_cast<std::size_t>(cfg_.channels);
  const std::size_t T = enc.segs.size();
  FusedOut out;
  switch (mode) {
    case FusionMode::concat: {
      const Var h_rows = t.broadcast_rows(
          enc.temporal_code, Segments::single(static_cast<std::uint32_t>(T)));
      const Var cat = t.concat_cols({enc.spatial_codes, h_rows});
      out.codes = nn::linear(gp, "fusion.concat", cat, 2 * C, C);
      return out;
    }
    case FusionMode::single_cross_attn:
    case FusionMode::dual_cross_attn: {
      // SCA: per-point spatial tokens query the temporal frame tokens.
      const AttnOut sca = cross_attention(
          gp, "fusion.sca", enc.spatial_tokens, enc.temporal_tokens,
          enc.temporal_tokens, C, C, cfg_.attention_layer_norm);
      const Var sca_tokens = t.add(enc.spatial_tokens, sca.out);
      out.weights.push_back(sca.weights);
      const Var pooled_sca = t.segment_colmax(sca_tokens, enc.segs);
      if (mode == FusionMode::single_cross_attn) {
        out.codes = pooled_sca;
        return out;
      }
      // TCA: one concatenated (S_t, h) query per frame over that frame's
      // SCA tokens.
      std::vector<Var> tca_rows;
      tca_rows.reserve(T);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < T; ++k) {
        const Var s_t = t.slice_rows(enc.spatial_codes, k, 1);
        const Var q = t.concat_cols({s_t, enc.temporal_code});
        const Var frame_tokens =
            t.slice_rows(sca_tokens, offset, enc.segs.counts[k]);
        const AttnOut tca =
            cross_attention(gp, "fusion.tca", q, frame_tokens, frame_tokens,
                            2 * C, C, cfg_.attention_layer_norm);
        tca_rows.push_back(tca.out);
        out.weights.push_back(tca.weights);
        offset += enc.segs.counts[k];
      }
      const Var tca_codes =
          T == 1 ? tca_rows[0] : t.concat_rows(tca_rows);
      out.codes = t.add(pooled_sca, tca_codes);
      return out;
    }
  }
  throw std::runtime_error("unknown fusion mode");
}

TemporalDecodeOut Net::temporal_decode(nn::GraphParams& gp, Var codes,
                                       Var points, const Segments& segs) {
  ad::Tape& t = gp.tape;
  const auto C = static_cast<std::size_t>(cfg_.channels);
  if (t.value(codes).cols() != C)
    throw std::runtime_error("temporal_decode: code width mismatch");
  if (t.value(points).rows() != segs.total())
    throw std::runtime_error("temporal_decode: segment row mismatch");
  const Segments all =
      Segments::single(static_cast<std::uint32_t>(t.value(points).rows()));
  const Var e_ref = t.slice_rows(codes, 0, 1);
  const Var ref_rows = t.broadcast_rows(e_ref, all);
  const Var et_rows = t.broadcast_rows(codes, segs);
  Var feat = t.concat_cols({points, ref_rows, et_rows});
  feat = nn::linear(gp, "tdec.lift", feat, 3 + 2 * C, C);
  for (int b = 0; b < cfg_.decoder_blocks; ++b)
    feat = nn::resblock(gp, "tdec.block" + std::to_string(b), feat, C, C);
  TemporalDecodeOut out;
  out.features = feat;
  out.motion = nn::linear(gp, "tdec.head", feat, C, 3, true, /*zero_init=*/true);
  out.pooled = t.segment_colmax(feat, segs);
  return out;
}

OccupancyDecodeOut Net::occupancy_decode(nn::GraphParams& gp, Var queries,
                                         Var codes, Var f_pooled,
                                         const Segments& segs, bool train) {
  ad::Tape& t = gp.tape;
  const auto C = static_cast<std::size_t>(cfg_.channels);
  if (t.value(codes).cols() != C)
    throw std::runtime_error("occupancy_decode: code width mismatch");
  if (t.value(queries).rows() != segs.total())
    throw std::runtime_error("occupancy_decode: segment row mismatch");
  std::vector<Var> code_vars;
  code_vars.reserve(segs.size());
  for (std::size_t k = 0; k < segs.size(); ++k)
    code_vars.push_back(t.slice_rows(codes, k, 1));

  Var feat = nn::linear(gp, "odec.lift", queries, 3, C);
  for (int b = 0; b < cfg_.decoder_blocks; ++b)
    feat = nn::cbn_resblock(gp, "odec.block" + std::to_string(b), feat, segs,
                            code_vars, C, C, train);
  const Var f_rows = t.broadcast_rows(f_pooled, segs);
  Var x = t.concat_cols({feat, f_rows});
  x = nn::cbn(gp, "odec.final_cbn", x, segs, code_vars, C, 2 * C, train);
  x = t.relu(x);
  OccupancyDecodeOut out;
  out.logits = nn::linear(gp, "odec.head", x, 2 * C, 1, true, /*zero_init=*/true);
  out.probs = t.sigmoid(out.logits);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Tensor stack_points(const std::vector<std::vector<Point3>>& frames,
                    Segments& segs) {
  std::size_t total = 0;
  segs.counts.clear();
  for (const auto& f : frames) {
    segs.counts.push_back(static_cast<std::uint32_t>(f.size()));
    total += f.size();
  }
  Tensor out(total, 3);
  std::size_t row = 0;
  for (const auto& f : frames)
    for (const auto& p : f) {
      out.at(row, 0) = p.x;
      out.at(row, 1) = p.y;
      out.at(row, 2) = p.z;
      ++row;
    }
  return out;
}

}  // namespace

FieldEvaluator::FieldEvaluator(Net& net, const PointCloudSequence& seq)
    : net_(net) {
  seq.validate();
  ad::Tape tape(/*grad_enabled=*/false);
  nn::GraphParams gp = net.graph(tape);
  std::vector<std::vector<Point3>> frames;
  for (const auto& f : seq.frames) {
    frames.push_back(f.points);
    times_.push_back(f.time);
  }
  Segments segs;
  const Tensor stacked = stack_points(frames, segs);
  const EncodeOut enc = net.encode(gp, stacked, times_, segs);
  const FusedOut fused = net.fuse(gp, enc);
  const TemporalDecodeOut tdec =
      net.temporal_decode(gp, fused.codes, tape.constant(stacked), segs);
  codes_ = tape.value(fused.codes);
  f_pooled_ = tape.value(tdec.pooled);
  const Tensor& motion = tape.value(tdec.motion);
  motion_.resize(times_.size());
  std::size_t row = 0;
  for (std::size_t k = 0; k < times_.size(); ++k) {
    motion_[k].resize(segs.counts[k]);
    for (std::uint32_t i = 0; i < segs.counts[k]; ++i, ++row)
      motion_[k][i] = {motion.at(row, 0), motion.at(row, 1),
                       motion.at(row, 2)};
  }
}

std::vector<double> FieldEvaluator::occupancy(
    const std::vector<Point3>& queries, int frame) const {
  if (queries.empty()) return {};
  ad::Tape tape(/*grad_enabled=*/false);
  nn::GraphParams gp = net_.graph(tape);
  Tensor q(queries.size(), 3);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    q.at(i, 0) = queries[i].x;
    q.at(i, 1) = queries[i].y;
    q.at(i, 2) = queries[i].z;
  }
  Tensor code_row(1, codes_.cols());
  std::copy(codes_.row(frame), codes_.row(frame) + codes_.cols(),
            code_row.data());
  Tensor f_row(1, f_pooled_.cols());
  std::copy(f_pooled_.row(frame), f_pooled_.row(frame) + f_pooled_.cols(),
            f_row.data());
  const Segments segs =
      Segments::single(static_cast<std::uint32_t>(queries.size()));
  const auto out = net_.occupancy_decode(
      gp, tape.constant(std::move(q)), tape.constant(std::move(code_row)),
      tape.constant(std::move(f_row)), segs, /*train=*/false);
  const Tensor& probs = tape.value(out.probs);
  std::vector<double> result(queries.size());
  for (std::size_t i = 0; i < result.size(); ++i) result[i] = probs[i];
  return result;
}

double FieldEvaluator::occupancy_one(const Point3& q, int frame) const {
  return occupancy({q}, frame)[0];
}

}  // namespace flow4d::model
