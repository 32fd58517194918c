#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "flow4d/autodiff.hpp"
#include "flow4d/rng.hpp"
#include "flow4d/tensor.hpp"

namespace flow4d::nn {

struct ParamEntry {
  Tensor value;
  Tensor m, v;  // Adam moments
  long step = 0;
  bool frozen = false;  // excluded from optimization (running stats etc.)
};

// Named parameter arrays, ordered by name so every traversal is
// deterministic.
class ParamStore {
 public:
  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  ParamEntry& entry(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;
  ParamEntry& create(const std::string& name, std::size_t rows,
                     std::size_t cols, bool frozen = false);
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }
  std::map<std::string, ParamEntry>& entries() { return entries_; }
  std::size_t num_scalars() const;

 private:
  std::map<std::string, ParamEntry> entries_;
};

// Binds store entries into a tape as leaves, creating them on first use.
// A parameter used twice in one graph maps to a single leaf so gradients
// accumulate.
class GraphParams {
 public:
  GraphParams(ad::Tape& tape, ParamStore& store, Rng& init_rng)
      : tape(tape), store(store), init_rng(init_rng) {}

  // FC weight (in x out), uniform in +-1/sqrt(in); zeros when zero_init.
  ad::Var weight(const std::string& name, std::size_t in, std::size_t out,
                 bool zero_init = false);
  ad::Var vector(const std::string& name, std::size_t width, double fill);
  // Frozen buffer (running statistics); never optimized.
  Tensor& buffer(const std::string& name, std::size_t width, double fill);

  // Gradients of every bound parameter after tape.backward().
  std::map<std::string, Tensor> collect_grads();

  ad::Tape& tape;
  ParamStore& store;
  Rng& init_rng;

 private:
  ad::Var bind(const std::string& name);
  std::unordered_map<std::string, ad::Var> bound_;
  std::vector<std::pair<std::string, ad::Var>> order_;
};

// y = x W + b. Layer name prefixes the parameters (<name>.W, <name>.b).
ad::Var linear(GraphParams& gp, const std::string& name, ad::Var x,
               std::size_t in, std::size_t out, bool bias = true,
               bool zero_init = false);

// Pre-activation residual block: shortcut(x) + fc1(relu(fc0(relu(x)))).
// The shortcut is the identity when in == out, a bias-free projection
// otherwise.
ad::Var resblock(GraphParams& gp, const std::string& name, ad::Var x,
                 std::size_t in, std::size_t out);

ad::Var layer_norm(GraphParams& gp, const std::string& name, ad::Var x,
                   std::size_t width, double eps = 1e-5);

inline constexpr double kCbnMomentum = 0.1;
inline constexpr double kCbnEps = 1e-5;

// Conditional batch normalization. Batch statistics are taken over all rows
// of x; gamma/beta come from per-segment conditioning codes. Train mode
// updates the running stats in place: new = (1 - momentum) * old +
// momentum * batch.
ad::Var cbn(GraphParams& gp, const std::string& name, ad::Var x,
            const ad::Segments& segs, const std::vector<ad::Var>& codes,
            std::size_t code_width, std::size_t width, bool train,
            double momentum = kCbnMomentum, double eps = kCbnEps);

// Single-code convenience wrapper (one segment spanning all rows).
ad::Var cbn_forward(GraphParams& gp, const std::string& name, ad::Var x,
                    ad::Var code, std::size_t code_width, std::size_t width,
                    bool train);

// CBN residual block: x + fc1(relu(cbn1(fc0(relu(cbn0(x)))))).
ad::Var cbn_resblock(GraphParams& gp, const std::string& name, ad::Var x,
                     const ad::Segments& segs,
                     const std::vector<ad::Var>& codes, std::size_t code_width,
                     std::size_t width, bool train);

// One Adam update over the given gradients (only listed, unfrozen entries
// move). Throws naming the parameter on any non-finite gradient.
void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads,
               double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// ---------------------------------------------------------------------------
// Checkpoint container (magic "F4DC"): named arrays with Adam state plus a
// JSON metadata blob.

struct CheckpointMeta {
  long iteration = 0;
  std::string config_hash;
  std::string config_json;
  std::string rng_state;
  std::map<std::string, double> metrics;
};

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const CheckpointMeta& meta);
CheckpointMeta load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace flow4d::nn
