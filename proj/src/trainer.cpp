#include "flow4d/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "json.hpp"

namespace flow4d::train {

using ad::Segments;
using ad::Var;

namespace {

nlohmann::json to_json_obj(const TrainConfig& c) {
  nlohmann::json j;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["lr_decay_every"] = c.lr_decay_every;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["max_iters"] = c.max_iters;
  j["val_every"] = c.val_every;
  j["n_recon_queries"] = c.n_recon_queries;
  j["n_flow_trajectories"] = c.n_flow_trajectories;
  j["near_surface_band"] = c.near_surface_band;
  j["near_surface_fraction"] = c.near_surface_fraction;
  j["seed"] = c.seed;
  j["patience"] = c.patience;
  j["grad_clip_norm"] = c.grad_clip_norm;
  j["model"]["channels"] = c.model.channels;
  j["model"]["encoder_stages"] = c.model.encoder_stages;
  j["model"]["decoder_blocks"] = c.model.decoder_blocks;
  j["model"]["init_seed"] = c.model.init_seed;
  j["fusion"]["mode"] = model::fusion_mode_name(c.model.fusion);
  j["fusion"]["layer_norm"] = c.model.attention_layer_norm;
  j["loss"]["lambda"] = c.weights.lambda;
  j["loss"]["flow_variant"] = loss::flow_variant_name(c.weights.flow_variant);
  j["loss"]["directions"] = loss::directions_name(c.weights.directions);
  j["loss"]["sum_directions"] = c.weights.sum_directions;
  j["loss"]["sum_over_time"] = c.weights.sum_over_time;
  j["loss"]["swd_projections"] = c.weights.swd_projections;
  j["val"]["n_samples"] = c.val.n_samples;
  j["val"]["tau"] = c.val.tau;
  j["val"]["start_res"] = c.val.start_res;
  j["val"]["upsample_steps"] = c.val.upsample_steps;
  j["val"]["with_meshes"] = c.val.with_meshes;
  return j;
}

void from_json_obj(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.val_every = j.value("val_every", c.val_every);
  c.n_recon_queries = j.value("n_recon_queries", c.n_recon_queries);
  c.n_flow_trajectories =
      j.value("n_flow_trajectories", c.n_flow_trajectories);
  c.near_surface_band = j.value("near_surface_band", c.near_surface_band);
  c.near_surface_fraction =
      j.value("near_surface_fraction", c.near_surface_fraction);
  c.seed = j.value("seed", c.seed);
  c.patience = j.value("patience", c.patience);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  if (j.contains("model")) {
    const auto& m = j["model"];
    c.model.channels = m.value("channels", c.model.channels);
    c.model.encoder_stages = m.value("encoder_stages", c.model.encoder_stages);
    c.model.decoder_blocks = m.value("decoder_blocks", c.model.decoder_blocks);
    c.model.init_seed = m.value("init_seed", c.model.init_seed);
  }
  if (j.contains("fusion")) {
    const auto& f = j["fusion"];
    if (f.contains("mode"))
      c.model.fusion = model::fusion_mode_from_name(f["mode"]);
    c.model.attention_layer_norm =
        f.value("layer_norm", c.model.attention_layer_norm);
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    c.weights.lambda = l.value("lambda", c.weights.lambda);
    if (l.contains("flow_variant"))
      c.weights.flow_variant = loss::flow_variant_from_name(l["flow_variant"]);
    if (l.contains("directions"))
      c.weights.directions = loss::directions_from_name(l["directions"]);
    c.weights.sum_directions =
        l.value("sum_directions", c.weights.sum_directions);
    c.weights.sum_over_time =
        l.value("sum_over_time", c.weights.sum_over_time);
    c.weights.swd_projections =
        l.value("swd_projections", c.weights.swd_projections);
  }
  if (j.contains("val")) {
    const auto& v = j["val"];
    c.val.n_samples = v.value("n_samples", c.val.n_samples);
    c.val.tau = v.value("tau", c.val.tau);
    c.val.start_res = v.value("start_res", c.val.start_res);
    c.val.upsample_steps = v.value("upsample_steps", c.val.upsample_steps);
    c.val.with_meshes = v.value("with_meshes", c.val.with_meshes);
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string TrainConfig::to_json() const { return to_json_obj(*this).dump(2); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  from_json_obj(nlohmann::json::parse(text), c);
  return c;
}

void TrainConfig::apply_override(const std::string& key,
                                 const std::string& value) {
  nlohmann::json j = to_json_obj(*this);
  nlohmann::json* node = &j;
  std::size_t start = 0;
  std::string last = key;
  for (;;) {
    const std::size_t dot = last.find('.');
    if (dot == std::string::npos) break;
    const std::string head = last.substr(0, dot);
    if (!node->contains(head))
      throw std::runtime_error("unknown config key: " + key);
    node = &(*node)[head];
    last = last.substr(dot + 1);
    (void)start;
  }
  if (!node->contains(last))
    throw std::runtime_error("unknown config key: " + key);
  nlohmann::json& slot = (*node)[last];
  if (slot.is_string()) {
    slot = value;
  } else if (slot.is_boolean()) {
    slot = (value == "true" || value == "1");
  } else if (slot.is_number_integer() || slot.is_number_unsigned()) {
    slot = std::stoll(value);
  } else {
    slot = std::stod(value);
  }
  from_json_obj(j, *this);
}

std::string TrainConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(to_json_obj(*this).dump())));
  return buf;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg, std::vector<SequenceRecord> train_set,
                 std::vector<SequenceRecord> val_set)
    : cfg_(cfg),
      train_set_(std::move(train_set)),
      val_set_(std::move(val_set)),
      net_(cfg.model),
      data_rng_(cfg.seed) {
  if (train_set_.empty()) throw std::runtime_error("empty training set");
  for (const auto& rec : train_set_)
    if (rec.sequence.frames.size() < 2)
      throw std::runtime_error("training sequences need at least 2 frames");
}

double Trainer::current_lr() const {
  const long k = iteration_ / std::max(1, cfg_.lr_decay_every);
  return cfg_.lr * std::pow(cfg_.lr_decay_factor, double(k));
}

Var Trainer::direction_loss(nn::GraphParams& gp, const SequenceRecord& rec,
                            const model::EncodeOut& enc,
                            const DirectionView& view, Var* flow_out,
                            Var* recon_out) {
  ad::Tape& t = gp.tape;
  const int T = static_cast<int>(view.frame_points.size());
  const model::FusedOut fused = net_.fuse(gp, enc);

  // trajectory subset for the flow terms
  const int n_flow = std::min<int>(cfg_.n_flow_trajectories,
                                   static_cast<int>(view.frame_points[0]->size()));
  const auto traj = data_rng_.sample_without_replacement(
      static_cast<std::uint32_t>(view.frame_points[0]->size()),
      static_cast<std::uint32_t>(n_flow));
  Segments flow_segs{std::vector<std::uint32_t>(
      T, static_cast<std::uint32_t>(traj.size()))};
  Tensor flow_pts(std::size_t(T) * traj.size(), 3);
  std::size_t row = 0;
  for (int k = 0; k < T; ++k)
    for (const auto id : traj) {
      const Point3& p = (*view.frame_points[k])[id];
      flow_pts.at(row, 0) = p.x;
      flow_pts.at(row, 1) = p.y;
      flow_pts.at(row, 2) = p.z;
      ++row;
    }
  const Var flow_pts_var = t.constant(flow_pts);
  const model::TemporalDecodeOut tdec =
      net_.temporal_decode(gp, fused.codes, flow_pts_var, flow_segs);

  // per-step flow terms
  std::vector<Var> step_terms;
  const std::size_t nf = traj.size();
  for (int k = 0; k + 1 < T; ++k) {
    const Var v_k = t.slice_rows(tdec.motion, std::size_t(k) * nf, nf);
    const Var p_k = t.slice_rows(flow_pts_var, std::size_t(k) * nf, nf);
    const Var translated = t.add(p_k, v_k);
    Tensor target(nf, 3);
    for (std::size_t i = 0; i < nf; ++i) {
      const Point3& p = (*view.frame_points[k + 1])[traj[i]];
      target.at(i, 0) = p.x;
      target.at(i, 1) = p.y;
      target.at(i, 2) = p.z;
    }
    switch (cfg_.weights.flow_variant) {
      case loss::FlowVariant::chamfer:
        step_terms.push_back(loss::flow_loss_chamfer(
            t, translated, t.constant(target), cfg_.weights.sum_directions));
        break;
      case loss::FlowVariant::hausdorff:
        step_terms.push_back(
            loss::flow_loss_hausdorff(t, translated, t.constant(target)));
        break;
      case loss::FlowVariant::sliced_wasserstein:
        step_terms.push_back(loss::flow_loss_swd(
            t, translated, t.constant(target), cfg_.weights.swd_projections,
            cfg_.weights.swd_seed + data_rng_.next_u64() % 1000000));
        break;
      case loss::FlowVariant::l2_supervised: {
        Tensor gt_disp(nf, 3);
        for (std::size_t i = 0; i < nf; ++i) {
          const Point3& p = (*view.frame_points[k])[traj[i]];
          const Point3 q =
              rec.shape.deform(p, view.shape_times[k], view.shape_times[k + 1]);
          gt_disp.at(i, 0) = q.x - p.x;
          gt_disp.at(i, 1) = q.y - p.y;
          gt_disp.at(i, 2) = q.z - p.z;
        }
        step_terms.push_back(loss::flow_loss_l2_supervised(t, v_k, gt_disp));
        break;
      }
    }
  }
  Var flow_term = step_terms[0];
  for (std::size_t i = 1; i < step_terms.size(); ++i)
    flow_term = t.add(flow_term, step_terms[i]);
  if (!cfg_.weights.sum_over_time && step_terms.size() > 1)
    flow_term = t.scale(flow_term, 1.0 / double(step_terms.size()));

  // occupancy queries per frame
  const int n_q = cfg_.n_recon_queries;
  const int n_near =
      static_cast<int>(std::lround(n_q * cfg_.near_surface_fraction));
  const int n_uni = n_q - n_near;
  Segments q_segs{std::vector<std::uint32_t>(T, static_cast<std::uint32_t>(n_q))};
  Tensor queries(std::size_t(T) * n_q, 3);
  Tensor labels(std::size_t(T) * n_q, 1);
  row = 0;
  for (int k = 0; k < T; ++k) {
    const auto samples =
        sample_occupancy_queries(rec.shape, view.shape_times[k], n_uni, n_near,
                                 cfg_.near_surface_band, data_rng_.next_u64());
    for (const auto& s : samples) {
      queries.at(row, 0) = s.point.x;
      queries.at(row, 1) = s.point.y;
      queries.at(row, 2) = s.point.z;
      labels[row] = double(s.label);
      ++row;
    }
  }
  const auto occ = net_.occupancy_decode(gp, t.constant(std::move(queries)),
                                         fused.codes, tdec.pooled, q_segs,
                                         /*train=*/true);
  const Var recon_term = loss::recon_loss_bce(t, occ.probs, labels);

  ++loss_evaluations_;
  if (flow_out) *flow_out = flow_term;
  if (recon_out) *recon_out = recon_term;
  return loss::total_loss(t, flow_term, recon_term, cfg_.weights.lambda);
}

LossBreakdown Trainer::train_step() {
  ad::Tape tape;
  nn::GraphParams gp = net_.graph(tape);

  std::vector<std::size_t> batch;
  for (int b = 0; b < cfg_.batch_size; ++b)
    batch.push_back(train_set_.size() == 1
                        ? 0
                        : data_rng_.uniform_index(train_set_.size()));

  std::vector<Var> totals, flows, recons;
  for (const std::size_t seq_id : batch) {
    const SequenceRecord& rec = train_set_[seq_id];
    const auto& seq = rec.sequence;
    const int T = static_cast<int>(seq.frames.size());

    DirectionView fw;
    for (const auto& f : seq.frames) {
      fw.frame_points.push_back(&f.points);
      fw.encoder_times.push_back(f.time);
      fw.shape_times.push_back(f.time);
    }
    Segments segs;
    std::size_t total_rows = 0;
    for (const auto& f : seq.frames) {
      segs.counts.push_back(static_cast<std::uint32_t>(f.points.size()));
      total_rows += f.points.size();
    }
    Tensor stacked(total_rows, 3);
    std::size_t row = 0;
    for (const auto& f : seq.frames)
      for (const auto& p : f.points) {
        stacked.at(row, 0) = p.x;
        stacked.at(row, 1) = p.y;
        stacked.at(row, 2) = p.z;
        ++row;
      }
    const Var xyz_fw = tape.constant(std::move(stacked));
    const model::EncodeOut enc_fw =
        net_.encode(gp, xyz_fw, fw.encoder_times, segs);

    Var flow_v, recon_v;
    Var total = direction_loss(gp, rec, enc_fw, fw, &flow_v, &recon_v);
    Var flow_sum = flow_v, recon_sum = recon_v;

    if (cfg_.weights.directions == loss::Directions::forward_backward) {
      DirectionView bw;
      const double tmin = seq.frames.front().time;
      const double tmax = seq.frames.back().time;
      for (auto it = seq.frames.rbegin(); it != seq.frames.rend(); ++it) {
        bw.frame_points.push_back(&it->points);
        bw.encoder_times.push_back(tmin + tmax - it->time);
        bw.shape_times.push_back(it->time);
      }
      // the spatial trunk is time-free: reuse it with frame blocks reversed
      Segments bw_segs;
      for (int k = T - 1; k >= 0; --k)
        bw_segs.counts.push_back(segs.counts[k]);
      std::vector<std::size_t> offsets(T + 1, 0);
      for (int k = 0; k < T; ++k) offsets[k + 1] = offsets[k] + segs.counts[k];
      std::vector<Var> xyz_blocks, token_blocks, code_blocks;
      for (int k = T - 1; k >= 0; --k) {
        xyz_blocks.push_back(
            tape.slice_rows(xyz_fw, offsets[k], segs.counts[k]));
        token_blocks.push_back(
            tape.slice_rows(enc_fw.spatial_tokens, offsets[k], segs.counts[k]));
        code_blocks.push_back(tape.slice_rows(enc_fw.spatial_codes, k, 1));
      }
      const model::EncodeOut enc_bw = net_.encode_with_spatial(
          gp, tape.concat_rows(xyz_blocks), tape.concat_rows(token_blocks),
          tape.concat_rows(code_blocks), bw.encoder_times, bw_segs);
      Var flow_b, recon_b;
      const Var total_b = direction_loss(gp, rec, enc_bw, bw, &flow_b, &recon_b);
      total = tape.add(total, total_b);
      flow_sum = tape.add(flow_sum, flow_b);
      recon_sum = tape.add(recon_sum, recon_b);
    }
    if (!std::isfinite(tape.value(total)[0]))
      throw std::runtime_error("non-finite loss at sequence " +
                               std::to_string(seq_id));
    totals.push_back(total);
    flows.push_back(flow_sum);
    recons.push_back(recon_sum);
  }

  Var batch_total = totals[0];
  Var batch_flow = flows[0];
  Var batch_recon = recons[0];
  for (std::size_t i = 1; i < totals.size(); ++i) {
    batch_total = tape.add(batch_total, totals[i]);
    batch_flow = tape.add(batch_flow, flows[i]);
    batch_recon = tape.add(batch_recon, recons[i]);
  }
  const double inv_b = 1.0 / double(totals.size());
  batch_total = tape.scale(batch_total, inv_b);

  tape.backward(batch_total);
  auto grads = gp.collect_grads();

  if (cfg_.grad_clip_norm > 0.0) {
    double norm2 = 0.0;
    for (const auto& [name, g] : grads)
      for (std::size_t i = 0; i < g.size(); ++i) norm2 += g[i] * g[i];
    const double norm = std::sqrt(norm2);
    if (norm > cfg_.grad_clip_norm) {
      const double s = cfg_.grad_clip_norm / norm;
      for (auto& [name, g] : grads)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
    }
  }

  nn::adam_step(net_.params(), grads, current_lr());
  ++iteration_;

  LossBreakdown out;
  out.total = tape.value(batch_total)[0];
  out.flow = tape.value(batch_flow)[0] * inv_b;
  out.recon = tape.value(batch_recon)[0] * inv_b;
  return out;
}

metric::MetricsReport Trainer::validate() {
  metric::MetricsReport mean;
  if (val_set_.empty()) return mean;
  std::vector<metric::MetricsReport> reports;
  for (const auto& rec : val_set_)
    reports.push_back(metric::evaluate_sequence(net_, rec, cfg_.val));
  double iou = 0.0, cham = 0.0, corr = 0.0;
  for (const auto& r : reports) {
    iou += r.mean_iou;
    cham += r.mean_chamfer;
    corr += r.mean_correspondence;
  }
  mean.mean_iou = iou / double(reports.size());
  mean.mean_chamfer = cham / double(reports.size());
  mean.mean_correspondence = corr / double(reports.size());
  mean.n_samples = cfg_.val.n_samples;
  mean.seed = cfg_.val.seed;
  return mean;
}

LossBreakdown Trainer::run(const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream log(out_dir + "/train_log.jsonl", std::ios::app);
  LossBreakdown last;
  for (long i = iteration_; i < cfg_.max_iters; ++i) {
    last = train_step();
    nlohmann::json j;
    j["iter"] = iteration_;
    j["flow"] = last.flow;
    j["recon"] = last.recon;
    j["total"] = last.total;
    j["lr"] = current_lr();
    log << j.dump() << "\n";
    if (cfg_.val_every > 0 && iteration_ % cfg_.val_every == 0 &&
        !val_set_.empty()) {
      const auto report = validate();
      nlohmann::json v;
      v["iter"] = iteration_;
      v["val_iou"] = report.mean_iou;
      v["val_chamfer"] = report.mean_chamfer;
      v["val_correspondence"] = report.mean_correspondence;
      log << v.dump() << "\n";
      log.flush();
      if (report.mean_iou > best_val_iou_) {
        best_val_iou_ = report.mean_iou;
        vals_since_best_ = 0;
        save(out_dir + "/best.f4dc");
      } else if (++vals_since_best_ >= cfg_.patience) {
        break;  // no further improvement
      }
    }
  }
  save(out_dir + "/last.f4dc");
  return last;
}

void Trainer::save(const std::string& path) const {
  nn::CheckpointMeta meta;
  meta.iteration = iteration_;
  meta.config_json = cfg_.to_json();
  meta.config_hash = cfg_.hash();
  meta.rng_state = data_rng_.state();
  meta.metrics["best_val_iou"] = best_val_iou_;
  meta.metrics["vals_since_best"] = double(vals_since_best_);
  nn::save_checkpoint(path, net_.params(), meta);
}

void Trainer::load(const std::string& path) {
  const nn::CheckpointMeta meta = nn::load_checkpoint(path, net_.params());
  iteration_ = meta.iteration;
  if (!meta.rng_state.empty()) data_rng_.set_state(meta.rng_state);
  auto it = meta.metrics.find("best_val_iou");
  if (it != meta.metrics.end()) best_val_iou_ = it->second;
  it = meta.metrics.find("vals_since_best");
  if (it != meta.metrics.end())
    vals_since_best_ = static_cast<int>(it->second);
}

// ---------------------------------------------------------------------------

double flow_endpoint_error(model::Net& net, const SequenceRecord& rec) {
  model::FieldEvaluator field(net, rec.sequence);
  const auto& frames = rec.sequence.frames;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    const auto& motion = field.motion(static_cast<int>(k));
    for (std::size_t i = 0; i < frames[k].points.size(); ++i) {
      const Point3& p = frames[k].points[i];
      const Point3 gt =
          rec.shape.deform(p, frames[k].time, frames[k + 1].time) - p;
      sum += (motion[i] - gt).norm();
      ++count;
    }
  }
  return sum / double(count);
}

double mean_gt_displacement(const SequenceRecord& rec) {
  const auto& frames = rec.sequence.frames;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    for (const auto& p : frames[k].points) {
      sum += (rec.shape.deform(p, frames[k].time, frames[k + 1].time) - p)
                 .norm();
      ++count;
    }
  }
  return sum / double(count);
}

}  // namespace flow4d::train
