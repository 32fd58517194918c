#include "flow4d/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace flow4d::nn {

using ad::Segments;
using ad::Var;

ParamEntry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

ParamEntry& ParamStore::create(const std::string& name, std::size_t rows,
                               std::size_t cols, bool frozen) {
  auto [it, inserted] = entries_.try_emplace(name);
  ParamEntry& e = it->second;
  if (!inserted) {
    if (e.value.rows() != rows || e.value.cols() != cols)
      throw std::runtime_error("parameter shape changed: " + name);
    return e;
  }
  e.value.resize(rows, cols);
  e.m = Tensor::zeros(rows, cols);
  e.v = Tensor::zeros(rows, cols);
  e.frozen = frozen;
  return e;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_)
    if (!e.frozen) n += e.value.size();
  return n;
}

Var GraphParams::bind(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  ParamEntry& e = store.entry(name);
  const Var v = tape.leaf(e.value, !e.frozen);
  bound_.emplace(name, v);
  order_.emplace_back(name, v);
  return v;
}

Var GraphParams::weight(const std::string& name, std::size_t in,
                        std::size_t out, bool zero_init) {
  if (!store.has(name)) {
    ParamEntry& e = store.create(name, in, out);
    if (zero_init) {
      e.value.fill(0.0);
    } else {
      const double bound = 1.0 / std::sqrt(double(in));
      for (std::size_t i = 0; i < e.value.size(); ++i)
        e.value[i] = init_rng.uniform(-bound, bound);
    }
  }
  return bind(name);
}

Var GraphParams::vector(const std::string& name, std::size_t width,
                        double fill) {
  if (!store.has(name)) store.create(name, 1, width).value.fill(fill);
  return bind(name);
}

Tensor& GraphParams::buffer(const std::string& name, std::size_t width,
                            double fill) {
  if (!store.has(name))
    store.create(name, 1, width, /*frozen=*/true).value.fill(fill);
  return store.entry(name).value;
}

std::map<std::string, Tensor> GraphParams::collect_grads() {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, var] : order_) {
    if (store.entry(name).frozen) continue;
    grads[name] = tape.grad(var);
  }
  return grads;
}

Var linear(GraphParams& gp, const std::string& name, Var x, std::size_t in,
           std::size_t out, bool bias, bool zero_init) {
  if (gp.tape.value(x).cols() != in)
    throw std::runtime_error("linear layer input width mismatch: " + name);
  const Var w = gp.weight(name + ".W", in, out, zero_init);
  Var y = gp.tape.matmul(x, w);
  if (bias) y = gp.tape.add_rowvec(y, gp.vector(name + ".b", out, 0.0));
  return y;
}

Var resblock(GraphParams& gp, const std::string& name, Var x, std::size_t in,
             std::size_t out) {
  const std::size_t hidden = std::min(in, out);
  Var net = gp.tape.relu(x);
  net = linear(gp, name + ".fc0", net, in, hidden);
  net = gp.tape.relu(net);
  net = linear(gp, name + ".fc1", net, hidden, out);
  const Var shortcut =
      in == out ? x : linear(gp, name + ".shortcut", x, in, out, false);
  return gp.tape.add(shortcut, net);
}

Var layer_norm(GraphParams& gp, const std::string& name, Var x,
               std::size_t width, double eps) {
  ad::Tape& t = gp.tape;
  if (t.value(x).cols() != width)
    throw std::runtime_error("layer_norm width mismatch: " + name);
  const double invw = 1.0 / double(width);
  const Var mean = t.scale(t.rowsum(x), invw);           // N x 1
  const Var centered = t.sub_colvec(x, mean);            // N x C
  const Var var = t.scale(t.rowsum(t.square(centered)), invw);
  const Var inv = t.rsqrt_eps(var, eps);                 // N x 1
  const Var xhat = t.mul_colvec(centered, inv);
  const Var gain = gp.vector(name + ".gain", width, 1.0);
  const Var bias = gp.vector(name + ".bias", width, 0.0);
  return t.add_rowvec(t.mul_rowvec(xhat, gain), bias);
}

Var cbn(GraphParams& gp, const std::string& name, Var x, const Segments& segs,
        const std::vector<Var>& codes, std::size_t code_width,
        std::size_t width, bool train, double momentum, double eps) {
  ad::Tape& t = gp.tape;
  if (t.value(x).cols() != width)
    throw std::runtime_error("cbn width mismatch: " + name);
  if (segs.size() != codes.size())
    throw std::runtime_error("cbn segment/code count mismatch: " + name);
  if (train && t.value(x).rows() < 2)
    throw std::runtime_error("batch too small for CBN");

  // gamma starts at 1, beta at 0: cold-start CBN is an identity normalizer
  std::vector<Var> gammas, betas;
  gammas.reserve(codes.size());
  betas.reserve(codes.size());
  for (std::size_t s = 0; s < codes.size(); ++s) {
    Var gamma = linear(gp, name + ".gamma", codes[s], code_width, width, true,
                       /*zero_init=*/true);
    gamma = t.add_scalar(gamma, 1.0);
    const Var beta = linear(gp, name + ".beta", codes[s], code_width, width,
                            true, /*zero_init=*/true);
    gammas.push_back(gamma);
    betas.push_back(beta);
  }
  const Var gamma_rows =
      codes.size() == 1 ? gammas[0] : t.concat_rows(gammas);
  const Var beta_rows = codes.size() == 1 ? betas[0] : t.concat_rows(betas);

  Var mu, var;
  if (train) {
    mu = t.colmean(x);
    var = t.colmean(t.square(t.sub_rowvec(x, mu)));
    Tensor& run_mean = gp.buffer(name + ".running_mean", width, 0.0);
    Tensor& run_var = gp.buffer(name + ".running_var", width, 1.0);
    const Tensor& muv = t.value(mu);
    const Tensor& varv = t.value(var);
    for (std::size_t j = 0; j < width; ++j) {
      run_mean[j] = (1.0 - momentum) * run_mean[j] + momentum * muv[j];
      run_var[j] = (1.0 - momentum) * run_var[j] + momentum * varv[j];
    }
  } else {
    mu = t.constant(gp.buffer(name + ".running_mean", width, 0.0));
    var = t.constant(gp.buffer(name + ".running_var", width, 1.0));
  }
  const Var inv = t.rsqrt_eps(var, eps);
  const Var xhat = t.mul_rowvec(t.sub_rowvec(x, mu), inv);
  const Var scaled = t.mul(xhat, t.broadcast_rows(gamma_rows, segs));
  return t.add(scaled, t.broadcast_rows(beta_rows, segs));
}

Var cbn_forward(GraphParams& gp, const std::string& name, Var x, Var code,
                std::size_t code_width, std::size_t width, bool train) {
  const Segments segs =
      Segments::single(static_cast<std::uint32_t>(gp.tape.value(x).rows()));
  return cbn(gp, name, x, segs, {code}, code_width, width, train);
}

Var cbn_resblock(GraphParams& gp, const std::string& name, Var x,
                 const Segments& segs, const std::vector<Var>& codes,
                 std::size_t code_width, std::size_t width, bool train) {
  ad::Tape& t = gp.tape;
  Var net = cbn(gp, name + ".cbn0", x, segs, codes, code_width, width, train);
  net = t.relu(net);
  net = linear(gp, name + ".fc0", net, width, width);
  net = cbn(gp, name + ".cbn1", net, segs, codes, code_width, width, train);
  net = t.relu(net);
  net = linear(gp, name + ".fc1", net, width, width);
  return t.add(x, net);
}

void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads,
               double lr, double beta1, double beta2, double eps) {
  for (const auto& [name, g] : grads) {
    ParamEntry& e = store.entry(name);
    if (e.frozen) continue;
    if (!g.same_shape(e.value))
      throw std::runtime_error("gradient shape mismatch: " + name);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        throw std::runtime_error("non-finite gradient: " + name);
    e.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(e.step));
    const double bc2 = 1.0 - std::pow(beta2, double(e.step));
    for (std::size_t i = 0; i < g.size(); ++i) {
      e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g[i];
      e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      e.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace flow4d::nn
