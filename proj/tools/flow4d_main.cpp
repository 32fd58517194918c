#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flow4d/geometry.hpp"
#include "flow4d/metrics.hpp"
#include "flow4d/mise.hpp"
#include "flow4d/synthetic.hpp"
#include "flow4d/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace flow4d;

namespace {

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// One manifest per run directory, append-only JSON lines.
class Manifest {
 public:
  Manifest(const std::string& out_dir, const std::string& command,
           const nlohmann::json& config, std::uint64_t seed)
      : path_(out_dir + "/manifest.jsonl") {
    nlohmann::json j;
    j["event"] = "start";
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["content_hash"] = hex64(fnv1a(config.dump()));
    j["timestamp"] = timestamp_now();
    append(j);
  }
  void finish(const std::vector<std::string>& artifacts) {
    nlohmann::json j;
    j["event"] = "end";
    j["timestamp"] = timestamp_now();
    j["artifacts"] = artifacts;
    append(j);
  }

 private:
  void append(const nlohmann::json& j) {
    std::ofstream out(path_, std::ios::app);
    out << j.dump() << "\n";
  }
  std::string path_;
};

void prepare_out_dir(const std::string& out, bool force) {
  if (fs::exists(fs::path(out) / "manifest.jsonl") && !force)
    throw std::runtime_error("output directory already has a run (" + out +
                             "); use --force to overwrite");
  fs::create_directories(out);
}

std::vector<ShapeKind> parse_shapes(const std::string& arg) {
  if (arg == "all")
    return {ShapeKind::translating_sphere, ShapeKind::breathing_sphere,
            ShapeKind::two_lobe_capsule, ShapeKind::articulated_dumbbell};
  std::vector<ShapeKind> kinds;
  std::stringstream ss(arg);
  std::string item;
  while (std::getline(ss, item, ',')) kinds.push_back(shape_kind_from_name(item));
  if (kinds.empty()) throw std::runtime_error("no shapes given");
  return kinds;
}

std::vector<std::string> split_csv(const std::string& arg) {
  std::vector<std::string> out;
  std::stringstream ss(arg);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

model::Net load_net(const std::string& ckpt, train::TrainConfig* out_cfg) {
  nn::ParamStore probe;
  const nn::CheckpointMeta meta = nn::load_checkpoint(ckpt, probe);
  train::TrainConfig cfg = train::TrainConfig::from_json(meta.config_json);
  if (out_cfg) *out_cfg = cfg;
  model::Net net(cfg.model);
  nn::load_checkpoint(ckpt, net.params());
  return net;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string shapes = "all";
  int seqs = 20;
  int T = 8;
  int n = 300;
  std::string temporal = "even";
  double noise = 0.0;
  std::uint64_t seed = 7;
  std::string out;
  bool force = false;
};

int cmd_gen_data(const GenArgs& a) {
  prepare_out_dir(a.out, a.force);
  nlohmann::json cfg;
  cfg["shapes"] = a.shapes;
  cfg["seqs"] = a.seqs;
  cfg["T"] = a.T;
  cfg["n"] = a.n;
  cfg["temporal"] = a.temporal;
  cfg["noise"] = a.noise;
  cfg["seed"] = a.seed;
  const std::string cache_key = hex64(fnv1a(cfg.dump()));

  Manifest manifest(a.out, "gen-data", cfg, a.seed);
  std::vector<std::string> artifacts;

  const char* cache_root = std::getenv("F4D_CACHE");
  const fs::path cache_dir =
      cache_root ? fs::path(cache_root) / cache_key : fs::path();
  if (cache_root && fs::is_directory(cache_dir)) {
    for (const auto& e : fs::directory_iterator(cache_dir)) {
      fs::copy_file(e.path(), fs::path(a.out) / e.path().filename(),
                    fs::copy_options::overwrite_existing);
      artifacts.push_back((fs::path(a.out) / e.path().filename()).string());
    }
    manifest.finish(artifacts);
    std::cout << "restored " << artifacts.size() / 2 << " sequences from cache\n";
    return 0;
  }

  const TemporalMode mode =
      a.temporal == "uneven" ? TemporalMode::uneven : TemporalMode::even;
  const auto kinds = parse_shapes(a.shapes);
  int index = 0;
  for (const ShapeKind kind : kinds) {
    for (int s = 0; s < a.seqs; ++s) {
      SequenceRecord rec;
      rec.shape = DeformingShape::make(kind, a.T);
      rec.settings = {kind, a.T, a.n, mode, a.noise,
                      a.seed + static_cast<std::uint64_t>(index) * 7919};
      rec.sequence = sample_surface_sequence(rec.shape, a.n, mode, a.noise,
                                             rec.settings.seed);
      char name[32];
      std::snprintf(name, sizeof name, "seq_%04d", index);
      const std::string base = (fs::path(a.out) / name).string();
      save_sequence(rec, base);
      artifacts.push_back(base + ".f4d");
      artifacts.push_back(base + ".json");
      ++index;
    }
  }
  if (cache_root) {
    fs::create_directories(cache_dir);
    for (const auto& art : artifacts)
      fs::copy_file(art, cache_dir / fs::path(art).filename(),
                    fs::copy_options::overwrite_existing);
  }
  manifest.finish(artifacts);
  std::cout << "wrote " << index << " sequences to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string val_data;
  std::string out;
  std::string config_file;
  std::vector<std::string> overrides;
  bool force = false;
};

train::TrainConfig resolve_train_config(const TrainArgs& a) {
  train::TrainConfig cfg;
  if (!a.config_file.empty()) {
    std::ifstream in(a.config_file);
    if (!in) throw std::runtime_error("cannot open config: " + a.config_file);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = train::TrainConfig::from_json(ss.str());
  }
  for (const auto& ov : a.overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("override must be key=value: " + ov);
    cfg.apply_override(ov.substr(0, eq), ov.substr(eq + 1));
  }
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  const train::TrainConfig cfg = resolve_train_config(a);
  prepare_out_dir(a.out, a.force);
  Manifest manifest(a.out, "train", nlohmann::json::parse(cfg.to_json()),
                    cfg.seed);
  auto train_set = load_dataset(a.data);
  std::vector<SequenceRecord> val_set;
  if (!a.val_data.empty())
    val_set = load_dataset(a.val_data);
  else
    val_set = train_set;  // desk scale default: validate on the training data
  train::Trainer trainer(cfg, std::move(train_set), std::move(val_set));
  const auto last = trainer.run(a.out);
  std::cout << "final: total=" << last.total << " flow=" << last.flow
            << " recon=" << last.recon << " best_val_iou="
            << trainer.best_val_iou() << "\n";
  manifest.finish({a.out + "/last.f4dc", a.out + "/best.f4dc",
                   a.out + "/train_log.jsonl"});
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::size_t samples = 10000;
  double tau = 0.5;
  std::string res = "32x1";
  std::uint64_t seed = 17;
  bool force = false;
};

std::pair<int, int> parse_res(const std::string& res) {
  const auto x = res.find('x');
  if (x == std::string::npos)
    throw std::runtime_error("resolution must look like 32x2: " + res);
  return {std::stoi(res.substr(0, x)), std::stoi(res.substr(x + 1))};
}

int cmd_eval(const EvalArgs& a) {
  prepare_out_dir(a.out, a.force);
  train::TrainConfig cfg;
  model::Net net = load_net(a.checkpoint, &cfg);
  nlohmann::json mcfg;
  mcfg["checkpoint"] = a.checkpoint;
  mcfg["data"] = a.data;
  mcfg["samples"] = a.samples;
  mcfg["tau"] = a.tau;
  mcfg["res"] = a.res;
  mcfg["seed"] = a.seed;
  Manifest manifest(a.out, "eval", mcfg, a.seed);

  metric::EvalOptions opts;
  opts.n_samples = a.samples;
  opts.tau = a.tau;
  std::tie(opts.start_res, opts.upsample_steps) = parse_res(a.res);
  opts.seed = a.seed;

  const auto dataset = load_dataset(a.data);
  nlohmann::json all;
  all["schema_version"] = 1;
  std::ofstream csv(a.out + "/metrics.csv");
  csv << metric::MetricsReport::csv_header() << "\n";
  double mean_iou = 0.0, mean_cham = 0.0, mean_corr = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto report = metric::evaluate_sequence(net, dataset[i], opts);
    const std::string label = "seq_" + std::to_string(i);
    all["sequences"][label] = nlohmann::json::parse(report.to_json());
    csv << report.to_csv_row(label) << "\n";
    mean_iou += report.mean_iou;
    mean_cham += report.mean_chamfer;
    mean_corr += report.mean_correspondence;
  }
  const double n = double(dataset.size());
  all["mean"]["iou"] = mean_iou / n;
  all["mean"]["chamfer"] = mean_cham / n;
  all["mean"]["correspondence"] = mean_corr / n;
  std::ofstream js(a.out + "/metrics.json");
  js << all.dump(2) << "\n";
  std::cout << "mean IoU " << mean_iou / n << ", Chamfer " << mean_cham / n
            << ", Corres. " << mean_corr / n << "\n";
  manifest.finish({a.out + "/metrics.json", a.out + "/metrics.csv"});
  return 0;
}

struct ReconstructArgs {
  std::string checkpoint;
  std::string sequence;  // base path of one .f4d or a dataset dir
  double tau = 0.5;
  std::string res = "32x2";
  std::string out;
  std::string format = "obj";
  bool flow_export = false;
  bool force = false;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  prepare_out_dir(a.out, a.force);
  train::TrainConfig cfg;
  model::Net net = load_net(a.checkpoint, &cfg);
  nlohmann::json mcfg;
  mcfg["checkpoint"] = a.checkpoint;
  mcfg["sequence"] = a.sequence;
  mcfg["tau"] = a.tau;
  mcfg["res"] = a.res;
  mcfg["format"] = a.format;
  Manifest manifest(a.out, "reconstruct", mcfg, cfg.seed);

  SequenceRecord rec;
  if (fs::is_directory(a.sequence)) {
    const auto bases = list_dataset(a.sequence);
    if (bases.empty()) throw std::runtime_error("no sequences in " + a.sequence);
    rec = load_sequence(bases.front());
  } else {
    rec = load_sequence(a.sequence);
  }
  const auto [start_res, steps] = parse_res(a.res);
  model::FieldEvaluator field(net, rec.sequence);
  const auto result = mesh::extract_sequence(field, a.tau, start_res, steps);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  std::vector<std::string> artifacts;
  for (std::size_t k = 0; k < result.meshes.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.%s", k, a.format.c_str());
    const std::string path = (fs::path(a.out) / name).string();
    if (a.format == "ply")
      write_ply(result.meshes[k], path);
    else
      write_obj(result.meshes[k], path);
    artifacts.push_back(path);
    if (a.flow_export) {
      char fname[32];
      std::snprintf(fname, sizeof fname, "flow_%04zu.ply", k);
      const std::string fpath = (fs::path(a.out) / fname).string();
      write_flow_ply(rec.sequence.frames[k].points,
                     field.motion(static_cast<int>(k)), fpath);
      artifacts.push_back(fpath);
    }
  }
  manifest.finish(artifacts);
  std::cout << "wrote " << result.meshes.size() << " meshes to " << a.out
            << "\n";
  return 0;
}

struct AblateArgs {
  std::string data;
  std::string out;
  std::string fusion = "concat,single_cross_attn,dual_cross_attn";
  std::string flow_variant = "chamfer";
  std::string directions = "forward_only,forward_backward";
  int iters = 300;
  std::uint64_t seed = 3;
  std::vector<std::string> overrides;
  bool force = false;
};

int cmd_ablate(const AblateArgs& a) {
  prepare_out_dir(a.out, a.force);
  nlohmann::json mcfg;
  mcfg["data"] = a.data;
  mcfg["fusion"] = a.fusion;
  mcfg["flow_variant"] = a.flow_variant;
  mcfg["directions"] = a.directions;
  mcfg["iters"] = a.iters;
  mcfg["seed"] = a.seed;
  Manifest manifest(a.out, "ablate", mcfg, a.seed);

  const auto dataset = load_dataset(a.data);
  std::ofstream csv(a.out + "/ablation.csv");
  csv << "fusion,flow_variant,directions,IoU,Chamfer,Corres.,runtime\n";
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& fusion : split_csv(a.fusion)) {
    for (const auto& variant : split_csv(a.flow_variant)) {
      for (const auto& dir : split_csv(a.directions)) {
        nlohmann::json row;
        row["fusion"] = fusion;
        row["flow_variant"] = variant;
        row["directions"] = dir;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          train::TrainConfig cfg;
          cfg.max_iters = a.iters;
          cfg.val_every = 0;
          cfg.seed = a.seed;
          cfg.apply_override("fusion.mode", fusion);
          cfg.apply_override("loss.flow_variant", variant);
          cfg.apply_override("loss.directions", dir);
          for (const auto& ov : a.overrides) {
            const auto eq = ov.find('=');
            cfg.apply_override(ov.substr(0, eq), ov.substr(eq + 1));
          }
          train::Trainer trainer(cfg, dataset, {});
          for (int i = 0; i < cfg.max_iters; ++i) trainer.train_step();
          metric::EvalOptions opts = cfg.val;
          double iou = 0, cham = 0, corr = 0;
          for (const auto& rec : dataset) {
            const auto rep = metric::evaluate_sequence(trainer.net(), rec, opts);
            iou += rep.mean_iou;
            cham += rep.mean_chamfer;
            corr += rep.mean_correspondence;
          }
          const double n = double(dataset.size());
          const double secs =
              std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                            t0)
                  .count();
          row["IoU"] = iou / n;
          row["Chamfer"] = cham / n;
          row["Corres."] = corr / n;
          row["runtime"] = secs;
          csv << fusion << ',' << variant << ',' << dir << ',' << iou / n
              << ',' << cham / n << ',' << corr / n << ',' << secs << "\n";
        } catch (const std::exception& e) {
          row["error"] = e.what();
          csv << fusion << ',' << variant << ',' << dir << ",,,,error\n";
        }
        csv.flush();
        rows.push_back(row);
      }
    }
  }
  std::ofstream js(a.out + "/ablation.json");
  js << rows.dump(2) << "\n";
  manifest.finish({a.out + "/ablation.csv", a.out + "/ablation.json"});
  std::cout << "ablation matrix: " << rows.size() << " cells\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint 4D occupancy reconstruction and flow estimation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* sc_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  sc_gen->add_option("--shapes", gen.shapes, "all or comma list of kinds");
  sc_gen->add_option("--seqs", gen.seqs, "sequences per shape kind");
  sc_gen->add_option("--T", gen.T, "frames per sequence");
  sc_gen->add_option("--n", gen.n, "points per frame");
  sc_gen->add_option("--temporal", gen.temporal, "even|uneven");
  sc_gen->add_option("--noise", gen.noise, "per-point jitter sigma");
  sc_gen->add_option("--seed", gen.seed);
  sc_gen->add_option("--out", gen.out)->required();
  sc_gen->add_flag("--force", gen.force);

  TrainArgs tr;
  auto* sc_train = app.add_subcommand("train", "train a model");
  sc_train->add_option("--data", tr.data)->required();
  sc_train->add_option("--val-data", tr.val_data);
  sc_train->add_option("--config", tr.config_file, "JSON config file");
  sc_train->add_option("--set", tr.overrides,
                       "dotted config override key=value (repeatable)");
  sc_train->add_option("--out", tr.out)->required();
  sc_train->add_flag("--force", tr.force);

  EvalArgs ev;
  auto* sc_eval = app.add_subcommand("eval", "compute metrics");
  sc_eval->add_option("--checkpoint", ev.checkpoint)->required();
  sc_eval->add_option("--data", ev.data)->required();
  sc_eval->add_option("--samples", ev.samples);
  sc_eval->add_option("--tau", ev.tau);
  sc_eval->add_option("--res", ev.res, "start_res x upsample_steps");
  sc_eval->add_option("--seed", ev.seed);
  sc_eval->add_option("--out", ev.out)->required();
  sc_eval->add_flag("--force", ev.force);

  ReconstructArgs rc;
  auto* sc_rec = app.add_subcommand("reconstruct", "extract meshes");
  sc_rec->add_option("--checkpoint", rc.checkpoint)->required();
  sc_rec->add_option("--sequence", rc.sequence)->required();
  sc_rec->add_option("--tau", rc.tau);
  sc_rec->add_option("--res", rc.res, "start_res x upsample_steps");
  sc_rec->add_option("--format", rc.format, "obj|ply");
  sc_rec->add_flag("--flow-export", rc.flow_export,
                   "write per-frame flow vectors as PLY point clouds");
  sc_rec->add_option("--out", rc.out)->required();
  sc_rec->add_flag("--force", rc.force);

  AblateArgs ab;
  auto* sc_ab = app.add_subcommand("ablate", "run the ablation matrix");
  sc_ab->add_option("--data", ab.data)->required();
  sc_ab->add_option("--fusion", ab.fusion);
  sc_ab->add_option("--loss.flow_variant", ab.flow_variant);
  sc_ab->add_option("--directions", ab.directions);
  sc_ab->add_option("--iters", ab.iters);
  sc_ab->add_option("--seed", ab.seed);
  sc_ab->add_option("--set", ab.overrides, "extra config overrides");
  sc_ab->add_option("--out", ab.out)->required();
  sc_ab->add_flag("--force", ab.force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sc_gen->parsed()) return cmd_gen_data(gen);
    if (sc_train->parsed()) return cmd_train(tr);
    if (sc_eval->parsed()) return cmd_eval(ev);
    if (sc_rec->parsed()) return cmd_reconstruct(rc);
    if (sc_ab->parsed()) return cmd_ablate(ab);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
