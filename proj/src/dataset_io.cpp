#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "flow4d/synthetic.hpp"
#include "json.hpp"

namespace flow4d {

namespace {

constexpr char kMagic[4] = {'F', '4', 'D', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_sequence(const SequenceRecord& rec, const std::string& base_path) {
  const auto& seq = rec.sequence;
  seq.validate();
  std::ofstream out(base_path + ".f4d", std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot open for write: " + base_path + ".f4d");
  out.write(kMagic, 4);
  put(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.shape.kind));
  const auto params = rec.shape.pack_params();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (double p : params) put(out, p);
  const auto T = static_cast<std::uint32_t>(seq.frames.size());
  const auto N = static_cast<std::uint32_t>(seq.frames.front().points.size());
  put(out, T);
  put(out, N);
  put<std::uint8_t>(out, seq.correspondence_ids.empty() ? 0 : 1);
  put(out, rec.settings.noise_sigma);
  put<std::uint8_t>(out, rec.settings.temporal_mode == TemporalMode::uneven);
  put<std::uint64_t>(out, rec.settings.seed);
  for (const auto& f : seq.frames) put(out, f.time);
  for (const auto& f : seq.frames)
    for (const auto& p : f.points) {
      put(out, p.x);
      put(out, p.y);
      put(out, p.z);
    }
  for (std::uint32_t id : seq.correspondence_ids) put(out, id);
  if (!out) throw std::runtime_error("write failed: " + base_path + ".f4d");

  nlohmann::json meta;
  meta["format"] = "F4D1";
  meta["version"] = kVersion;
  meta["shape"] = shape_kind_name(rec.settings.kind);
  meta["T"] = rec.settings.T;
  meta["n_points"] = rec.settings.n_points;
  meta["temporal_mode"] =
      rec.settings.temporal_mode == TemporalMode::even ? "even" : "uneven";
  meta["noise_sigma"] = rec.settings.noise_sigma;
  meta["seed"] = rec.settings.seed;
  std::ofstream side(base_path + ".json");
  if (!side)
    throw std::runtime_error("cannot open for write: " + base_path + ".json");
  side << meta.dump(2) << "\n";
}

SequenceRecord load_sequence(const std::string& base_path) {
  std::ifstream in(base_path + ".f4d", std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + base_path + ".f4d");
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad magic in " + base_path + ".f4d");
  if (get<std::uint32_t>(in) != kVersion)
    throw std::runtime_error("unsupported version in " + base_path);
  SequenceRecord rec;
  rec.shape.kind = static_cast<ShapeKind>(get<std::uint32_t>(in));
  const auto n_params = get<std::uint32_t>(in);
  std::vector<double> params(n_params);
  for (auto& p : params) p = get<double>(in);
  rec.shape.unpack_params(params);
  const auto T = get<std::uint32_t>(in);
  const auto N = get<std::uint32_t>(in);
  const bool has_ids = get<std::uint8_t>(in) != 0;
  rec.settings.noise_sigma = get<double>(in);
  rec.settings.temporal_mode =
      get<std::uint8_t>(in) ? TemporalMode::uneven : TemporalMode::even;
  rec.settings.seed = get<std::uint64_t>(in);
  rec.settings.kind = rec.shape.kind;
  rec.settings.T = static_cast<int>(T);
  rec.settings.n_points = static_cast<int>(N);
  rec.sequence.frames.resize(T);
  for (auto& f : rec.sequence.frames) f.time = get<double>(in);
  for (auto& f : rec.sequence.frames) {
    f.points.resize(N);
    for (auto& p : f.points) {
      p.x = get<double>(in);
      p.y = get<double>(in);
      p.z = get<double>(in);
    }
  }
  if (has_ids) {
    rec.sequence.correspondence_ids.resize(N);
    for (auto& id : rec.sequence.correspondence_ids)
      id = get<std::uint32_t>(in);
  }
  if (!in) throw std::runtime_error("truncated file: " + base_path + ".f4d");
  rec.sequence.validate();
  return rec;
}

std::vector<std::string> list_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> bases;
  if (!fs::is_directory(dir))
    throw std::runtime_error("dataset directory not found: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".f4d") {
      auto p = e.path();
      p.replace_extension();
      bases.push_back(p.string());
    }
  }
  std::sort(bases.begin(), bases.end());
  return bases;
}

std::vector<SequenceRecord> load_dataset(const std::string& dir) {
  std::vector<SequenceRecord> out;
  for (const auto& base : list_dataset(dir)) out.push_back(load_sequence(base));
  if (out.empty()) throw std::runtime_error("dataset is empty: " + dir);
  return out;
}

}  // namespace flow4d
