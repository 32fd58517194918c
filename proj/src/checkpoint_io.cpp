#include <cstring>
#include <fstream>
#include <stdexcept>

#include "flow4d/nn.hpp"
#include "json.hpp"

namespace flow4d::nn {

namespace {

constexpr char kMagic[4] = {'F', '4', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 0;

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

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

void put_tensor(std::ostream& out, const Tensor& t) {
  put<std::uint64_t>(out, t.rows());
  put<std::uint64_t>(out, t.cols());
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor get_tensor(std::istream& in) {
  const auto rows = get<std::uint64_t>(in);
  const auto cols = get<std::uint64_t>(in);
  Tensor t(rows, cols);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.write(kMagic, 4);
  put(out, kVersion);
  put<std::uint64_t>(out, store.entries().size());
  for (const auto& [name, e] : store.entries()) {
    put_string(out, name);
    put(out, kDtypeF64);
    put<std::uint8_t>(out, e.frozen ? 1 : 0);
    put<std::int64_t>(out, e.step);
    put_tensor(out, e.value);
    put_tensor(out, e.m);
    put_tensor(out, e.v);
  }
  nlohmann::json j;
  j["iteration"] = meta.iteration;
  j["config_hash"] = meta.config_hash;
  j["config"] = meta.config_json;
  j["rng_state"] = meta.rng_state;
  j["metrics"] = meta.metrics;
  put_string(out, j.dump());
  if (!out) throw std::runtime_error("write failed: " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint: " + path);
  if (get<std::uint32_t>(in) != kVersion)
    throw std::runtime_error("unsupported checkpoint version: " + path);
  store.entries().clear();
  const auto n = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = get_string(in);
    if (get<std::uint8_t>(in) != kDtypeF64)
      throw std::runtime_error("unsupported dtype in checkpoint");
    const bool frozen = get<std::uint8_t>(in) != 0;
    const auto step = get<std::int64_t>(in);
    ParamEntry e;
    e.value = get_tensor(in);
    e.m = get_tensor(in);
    e.v = get_tensor(in);
    e.step = step;
    e.frozen = frozen;
    store.entries().emplace(name, std::move(e));
  }
  const auto j = nlohmann::json::parse(get_string(in));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  CheckpointMeta meta;
  meta.iteration = j.value("iteration", 0L);
  meta.config_hash = j.value("config_hash", "");
  meta.config_json = j.value("config", "");
  meta.rng_state = j.value("rng_state", "");
  if (j.contains("metrics"))
    meta.metrics = j["metrics"].get<std::map<std::string, double>>();
  return meta;
}

}  // namespace flow4d::nn
