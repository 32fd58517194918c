#include "flow4d/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "flow4d/kernels/kernels.hpp"
#include "flow4d/rng.hpp"

namespace flow4d::ad {

namespace {

const kernels::Kernels& K() { return kernels::active(); }

void check(bool cond, const char* msg) {
  if (!cond) throw std::runtime_error(msg);
}

std::vector<std::size_t> segment_offsets(const Segments& segs) {
  std::vector<std::size_t> off(segs.size() + 1, 0);
  for (std::size_t s = 0; s < segs.size(); ++s)
    off[s + 1] = off[s] + segs.counts[s];
  return off;
}

constexpr double kBceClamp = 1e-7;

}  // namespace

Var Tape::push(Tensor value, bool requires_grad,
               std::function<void(Tape&)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (!n.grad.same_shape(n.value)) {
    n.grad.resize(n.value.rows(), n.value.cols());
    n.grad.fill(0.0);
  }
  return n.grad;
}

bool Tape::track(std::initializer_list<Var> ins) const {
  if (!grad_enabled_) return false;
  for (Var v : ins)
    if (v.valid() && nodes_[v.id].requires_grad) return true;
  return false;
}

void Tape::accum(Var v, const Tensor& g) {
  if (!nodes_[v.id].requires_grad) return;
  Tensor& dst = grad(v);
  K().add(dst.size(), dst.data(), g.data(), dst.data());
}

void Tape::set_backward(Var v, std::function<void(Tape&)> fn) {
  if (nodes_[v.id].requires_grad) nodes_[v.id].backward = std::move(fn);
}

void Tape::backward(Var root) {
  check(value(root).size() == 1, "backward root must be scalar");
  grad(root).fill(1.0);
  for (std::int32_t id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward) continue;
    if (!n.grad.same_shape(n.value)) continue;  // branch received no gradient
    n.backward(*this);
  }
}

// ---------------------------------------------------------------------------
// linear algebra & elementwise

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  check(!(trans_a && trans_b), "matmul: double transpose unsupported");
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  const std::size_t m = trans_a ? av.cols() : av.rows();
  const std::size_t kk = trans_a ? av.rows() : av.cols();
  const std::size_t kb = trans_b ? bv.cols() : bv.rows();
  const std::size_t n = trans_b ? bv.rows() : bv.cols();
  check(kk == kb, "matmul: inner dimensions differ");
  Tensor out(m, n);
  K().gemm(trans_a, trans_b, m, n, kk, 1.0, av.data(), av.cols(), bv.data(),
           bv.cols(), 0.0, out.data(), out.cols());
  const bool req = track({a, b});
  Var o = push(std::move(out), req, nullptr);
  if (!req) return o;
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      if (!trans_a && !trans_b) {
        K().gemm(false, true, m, kk, n, 1.0, g.data(), n, B.data(), B.cols(),
                 1.0, da.data(), da.cols());
      } else if (!trans_a && trans_b) {
        K().gemm(false, false, m, kk, n, 1.0, g.data(), n, B.data(), B.cols(),
                 1.0, da.data(), da.cols());
      } else {  // trans_a
        K().gemm(false, true, kk, m, n, 1.0, B.data(), B.cols(), g.data(), n,
                 1.0, da.data(), da.cols());
      }
    }
    if (t.requires_grad(b)) {
      Tensor& db = t.grad(b);
      if (!trans_a && !trans_b) {
        K().gemm(true, false, kk, n, m, 1.0, A.data(), A.cols(), g.data(), n,
                 1.0, db.data(), db.cols());
      } else if (!trans_a && trans_b) {
        K().gemm(true, false, n, kk, m, 1.0, g.data(), n, A.data(), A.cols(),
                 1.0, db.data(), db.cols());
      } else {  // trans_a
        K().gemm(false, false, kk, n, m, 1.0, A.data(), A.cols(), g.data(), n,
                 1.0, db.data(), db.cols());
      }
    }
  });
  return o;
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check(av.same_shape(bv), "add: shape mismatch");
  Tensor out(av.rows(), av.cols());
  K().add(av.size(), av.data(), bv.data(), out.data());
  const bool req = track({a, b});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    t.accum(a, g);
    t.accum(b, g);
  });
  return o;
}

Var Tape::sub(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check(av.same_shape(bv), "sub: shape mismatch");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const bool req = track({a, b});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    t.accum(a, g);
    if (t.requires_grad(b)) {
      Tensor& db = t.grad(b);
      K().axpy(g.size(), -1.0, g.data(), db.data());
    }
  });
  return o;
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check(av.same_shape(bv), "mul: shape mismatch");
  Tensor out(av.rows(), av.cols());
  K().mul(av.size(), av.data(), bv.data(), out.data());
  const bool req = track({a, b});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(a)) {
      Tensor tmp(g.rows(), g.cols());
      K().mul(g.size(), g.data(), t.value(b).data(), tmp.data());
      t.accum(a, tmp);
    }
    if (t.requires_grad(b)) {
      Tensor tmp(g.rows(), g.cols());
      K().mul(g.size(), g.data(), t.value(a).data(), tmp.data());
      t.accum(b, tmp);
    }
  });
  return o;
}

Var Tape::scale(Var a, double s) {
  const Tensor& av = value(a);
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      K().axpy(g.size(), s, g.data(), da.data());
    }
  });
  return o;
}

Var Tape::add_scalar(Var a, double s) {
  const Tensor& av = value(a);
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) { t.accum(a, t.nodes_[o.id].grad); });
  return o;
}

Var Tape::relu(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.rows(), av.cols());
  K().relu(av.data(), out.data(), av.size());
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      K().relu_bwd(t.value(a).data(), g.data(), da.data(), g.size());
    }
  });
  return o;
}

Var Tape::sigmoid(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    const Tensor& y = t.nodes_[o.id].value;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        da[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
  return o;
}

Var Tape::square(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.rows(), av.cols());
  K().mul(av.size(), av.data(), av.data(), out.data());
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(a)) {
      const Tensor& x = t.value(a);
      Tensor& da = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += 2.0 * x[i] * g[i];
    }
  });
  return o;
}

Var Tape::sqrt_guarded(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::sqrt(std::max(0.0, av[i]));
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    const Tensor& y = t.nodes_[o.id].value;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        da[i] += g[i] * 0.5 / std::max(y[i], 1e-12);
    }
  });
  return o;
}

Var Tape::rsqrt_eps(Var a, double eps) {
  const Tensor& av = value(a);
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / std::sqrt(av[i] + eps);
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    const Tensor& y = t.nodes_[o.id].value;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        da[i] += g[i] * (-0.5) * y[i] * y[i] * y[i];
    }
  });
  return o;
}

// ---------------------------------------------------------------------------
// shape ops

Var Tape::concat_cols(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    check(value(p).rows() == rows, "concat_cols: row mismatch");
    cols += value(p).cols();
  }
  Tensor out(rows, cols);
  std::size_t at = 0;
  for (Var p : parts) {
    const Tensor& pv = value(p);
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(pv.row(i), pv.row(i) + pv.cols(), out.row(i) + at);
    at += pv.cols();
  }
  bool req = false;
  for (Var p : parts) req = req || track({p});
  Var o = push(std::move(out), req, nullptr);
  std::vector<Var> caps(parts);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    std::size_t start = 0;
    for (Var p : caps) {
      const std::size_t w = t.value(p).cols();
      if (t.requires_grad(p)) {
        Tensor& dp = t.grad(p);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j)
            dp.at(i, j) += g.at(i, start + j);
      }
      start += w;
    }
  });
  return o;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  const std::size_t cols = value(parts[0]).cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    check(value(p).cols() == cols, "concat_rows: column mismatch");
    rows += value(p).rows();
  }
  Tensor out(rows, cols);
  std::size_t at = 0;
  for (Var p : parts) {
    const Tensor& pv = value(p);
    std::copy(pv.data(), pv.data() + pv.size(), out.row(at));
    at += pv.rows();
  }
  bool req = false;
  for (Var p : parts) req = req || track({p});
  Var o = push(std::move(out), req, nullptr);
  std::vector<Var> caps(parts);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    std::size_t start = 0;
    for (Var p : caps) {
      const std::size_t h = t.value(p).rows();
      if (t.requires_grad(p)) {
        Tensor& dp = t.grad(p);
        K().add(dp.size(), dp.data(), g.row(start), dp.data());
      }
      start += h;
    }
  });
  return o;
}

Var Tape::slice_rows(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = value(a);
  check(start + count <= av.rows(), "slice_rows: out of range");
  Tensor out(count, av.cols());
  std::copy(av.row(start), av.row(start) + count * av.cols(), out.data());
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      K().add(g.size(), da.row(start), g.data(), da.row(start));
    }
  });
  return o;
}

// ---------------------------------------------------------------------------
// broadcasts

Var Tape::add_rowvec(Var a, Var r) {
  const Tensor& av = value(a);
  const Tensor& rv = value(r);
  check(rv.rows() == 1 && rv.cols() == av.cols(), "add_rowvec: bad shapes");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    K().add(av.cols(), av.row(i), rv.data(), out.row(i));
  const bool req = track({a, r});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    t.accum(a, g);
    if (t.requires_grad(r)) {
      Tensor& dr = t.grad(r);
      for (std::size_t i = 0; i < g.rows(); ++i)
        K().add(g.cols(), dr.data(), g.row(i), dr.data());
    }
  });
  return o;
}

Var Tape::sub_rowvec(Var a, Var r) {
  const Tensor& av = value(a);
  const Tensor& rv = value(r);
  check(rv.rows() == 1 && rv.cols() == av.cols(), "sub_rowvec: bad shapes");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j)
      out.at(i, j) = av.at(i, j) - rv[j];
  const bool req = track({a, r});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    t.accum(a, g);
    if (t.requires_grad(r)) {
      Tensor& dr = t.grad(r);
      for (std::size_t i = 0; i < g.rows(); ++i)
        K().axpy(g.cols(), -1.0, g.row(i), dr.data());
    }
  });
  return o;
}

Var Tape::mul_rowvec(Var a, Var r) {
  const Tensor& av = value(a);
  const Tensor& rv = value(r);
  check(rv.rows() == 1 && rv.cols() == av.cols(), "mul_rowvec: bad shapes");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    K().mul(av.cols(), av.row(i), rv.data(), out.row(i));
  const bool req = track({a, r});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      const Tensor& rvv = t.value(r);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j)
          da.at(i, j) += g.at(i, j) * rvv[j];
    }
    if (t.requires_grad(r)) {
      Tensor& dr = t.grad(r);
      const Tensor& avv = t.value(a);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j)
          dr[j] += g.at(i, j) * avv.at(i, j);
    }
  });
  return o;
}

Var Tape::sub_colvec(Var a, Var v) {
  const Tensor& av = value(a);
  const Tensor& vv = value(v);
  check(vv.cols() == 1 && vv.rows() == av.rows(), "sub_colvec: bad shapes");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j)
      out.at(i, j) = av.at(i, j) - vv[i];
  const bool req = track({a, v});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    t.accum(a, g);
    if (t.requires_grad(v)) {
      Tensor& dv = t.grad(v);
      for (std::size_t i = 0; i < g.rows(); ++i)
        dv[i] -= K().sum(g.cols(), g.row(i));
    }
  });
  return o;
}

Var Tape::mul_colvec(Var a, Var v) {
  const Tensor& av = value(a);
  const Tensor& vv = value(v);
  check(vv.cols() == 1 && vv.rows() == av.rows(), "mul_colvec: bad shapes");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j)
      out.at(i, j) = av.at(i, j) * vv[i];
  const bool req = track({a, v});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      const Tensor& vvv = t.value(v);
      for (std::size_t i = 0; i < g.rows(); ++i)
        K().axpy(g.cols(), vvv[i], g.row(i), da.row(i));
    }
    if (t.requires_grad(v)) {
      Tensor& dv = t.grad(v);
      const Tensor& avv = t.value(a);
      for (std::size_t i = 0; i < g.rows(); ++i)
        dv[i] += K().dot(g.cols(), g.row(i), avv.row(i));
    }
  });
  return o;
}

Var Tape::broadcast_rows(Var src, const Segments& segs) {
  const Tensor& sv = value(src);
  check(sv.rows() == segs.size(), "broadcast_rows: segment count mismatch");
  const auto off = segment_offsets(segs);
  Tensor out(segs.total(), sv.cols());
  for (std::size_t s = 0; s < segs.size(); ++s)
    for (std::size_t i = off[s]; i < off[s + 1]; ++i)
      std::copy(sv.row(s), sv.row(s) + sv.cols(), out.row(i));
  const bool req = track({src});
  Var o = push(std::move(out), req, nullptr);
  Segments segs_c = segs;
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(src)) {
      Tensor& ds = t.grad(src);
      const auto off2 = segment_offsets(segs_c);
      for (std::size_t s = 0; s < segs_c.size(); ++s)
        for (std::size_t i = off2[s]; i < off2[s + 1]; ++i)
          K().add(g.cols(), ds.row(s), g.row(i), ds.row(s));
    }
  });
  return o;
}

// ---------------------------------------------------------------------------
// reductions

Var Tape::segment_colmax(Var a, const Segments& segs) {
  const Tensor& av = value(a);
  check(av.rows() == segs.total(), "segment_colmax: row count mismatch");
  const auto off = segment_offsets(segs);
  Tensor out(segs.size(), av.cols());
  std::vector<std::uint32_t> argrows(segs.size() * av.cols());
  for (std::size_t s = 0; s < segs.size(); ++s) {
    check(segs.counts[s] > 0, "segment_colmax: empty segment");
    K().colmax(segs.counts[s], av.cols(), av.row(off[s]), out.row(s),
               argrows.data() + s * av.cols());
    for (std::size_t j = 0; j < av.cols(); ++j)
      argrows[s * av.cols() + j] += static_cast<std::uint32_t>(off[s]);
  }
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=, arg = std::move(argrows)](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      for (std::size_t s = 0; s < g.rows(); ++s)
        for (std::size_t j = 0; j < g.cols(); ++j)
          da.at(arg[s * g.cols() + j], j) += g.at(s, j);
    }
  });
  return o;
}

Var Tape::colmean(Var a) {
  const Tensor& av = value(a);
  check(av.rows() >= 1, "colmean: empty");
  Tensor out = Tensor::zeros(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    K().add(av.cols(), out.data(), av.row(i), out.data());
  const double inv = 1.0 / double(av.rows());
  for (std::size_t j = 0; j < av.cols(); ++j) out[j] *= inv;
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      const double w = 1.0 / double(da.rows());
      for (std::size_t i = 0; i < da.rows(); ++i)
        K().axpy(g.cols(), w, g.data(), da.row(i));
    }
  });
  return o;
}

Var Tape::rowsum(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i)
    out[i] = K().sum(av.cols(), av.row(i));
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      for (std::size_t i = 0; i < da.rows(); ++i)
        for (std::size_t j = 0; j < da.cols(); ++j) da.at(i, j) += g[i];
    }
  });
  return o;
}

Var Tape::sum_all(Var a) {
  const Tensor& av = value(a);
  Tensor out = Tensor::scalar(K().sum(av.size(), av.data()));
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const double g = t.nodes_[o.id].grad[0];
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
    }
  });
  return o;
}

Var Tape::mean_all(Var a) {
  const Tensor& av = value(a);
  check(av.size() >= 1, "mean_all: empty");
  Tensor out = Tensor::scalar(K().sum(av.size(), av.data()) / double(av.size()));
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      const double g = t.nodes_[o.id].grad[0] / double(da.size());
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
    }
  });
  return o;
}

Var Tape::softmax_rows(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double mx = av.at(i, 0);
    for (std::size_t j = 1; j < av.cols(); ++j) mx = std::max(mx, av.at(i, j));
    double Z = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) {
      out.at(i, j) = std::exp(av.at(i, j) - mx);
      Z += out.at(i, j);
    }
    for (std::size_t j = 0; j < av.cols(); ++j) out.at(i, j) /= Z;
  }
  const bool req = track({a});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    const Tensor& y = t.nodes_[o.id].value;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const double dot = K().dot(g.cols(), g.row(i), y.row(i));
        for (std::size_t j = 0; j < g.cols(); ++j)
          da.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
      }
    }
  });
  return o;
}

Var Tape::max2(Var x, Var y) {
  check(value(x).size() == 1 && value(y).size() == 1, "max2: scalars only");
  const double xv = value(x)[0], yv = value(y)[0];
  const bool pick_x = xv >= yv;
  Tensor out = Tensor::scalar(pick_x ? xv : yv);
  const bool req = track({x, y});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=](Tape& t) {
    const Tensor& g = t.nodes_[o.id].grad;
    t.accum(pick_x ? x : y, g);
  });
  return o;
}

// ---------------------------------------------------------------------------
// point-set losses

namespace {

struct NnCache {
  std::vector<std::uint32_t> idx;
  std::vector<double> dist;
};

NnCache nearest_rows(const Tensor& a, const Tensor& b) {
  check(a.cols() == 3 && b.cols() == 3, "nn loss: rows must be xyz");
  check(a.rows() > 0 && b.rows() > 0, "nn loss: empty point set");
  const std::size_t nb = b.rows();
  std::vector<double> tx(nb), ty(nb), tz(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    tx[i] = b.at(i, 0);
    ty[i] = b.at(i, 1);
    tz[i] = b.at(i, 2);
  }
  NnCache cache;
  cache.idx.resize(a.rows());
  std::vector<double> d2(a.rows());
  K().nn_scan(a.data(), a.rows(), tx.data(), ty.data(), tz.data(), nb,
              d2.data(), cache.idx.data());
  cache.dist.resize(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) cache.dist[i] = std::sqrt(d2[i]);
  return cache;
}

}  // namespace

Var Tape::directed_nn_mean(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  NnCache cache = nearest_rows(av, bv);
  double sum = 0.0;
  for (double d : cache.dist) sum += d;
  Tensor out = Tensor::scalar(sum / double(av.rows()));
  const bool req = track({a, b});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=, c = std::move(cache)](Tape& t) {
    const double g = t.nodes_[o.id].grad[0] / double(t.value(a).rows());
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    const bool need_a = t.requires_grad(a);
    const bool need_b = t.requires_grad(b);
    if (!need_a && !need_b) return;
    Tensor* da = need_a ? &t.grad(a) : nullptr;
    Tensor* db = need_b ? &t.grad(b) : nullptr;
    for (std::size_t i = 0; i < A.rows(); ++i) {
      const double d = c.dist[i];
      if (d < 1e-15) continue;  // subgradient 0 at coincident points
      const std::uint32_t j = c.idx[i];
      const double ux = (A.at(i, 0) - B.at(j, 0)) / d;
      const double uy = (A.at(i, 1) - B.at(j, 1)) / d;
      const double uz = (A.at(i, 2) - B.at(j, 2)) / d;
      if (da) {
        da->at(i, 0) += g * ux;
        da->at(i, 1) += g * uy;
        da->at(i, 2) += g * uz;
      }
      if (db) {
        db->at(j, 0) -= g * ux;
        db->at(j, 1) -= g * uy;
        db->at(j, 2) -= g * uz;
      }
    }
  });
  return o;
}

Var Tape::directed_nn_max(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  NnCache cache = nearest_rows(av, bv);
  std::size_t imax = 0;
  for (std::size_t i = 1; i < cache.dist.size(); ++i)
    if (cache.dist[i] > cache.dist[imax]) imax = i;
  Tensor out = Tensor::scalar(cache.dist[imax]);
  const bool req = track({a, b});
  Var o = push(std::move(out), req, nullptr);
  const std::uint32_t jmax = cache.idx[imax];
  const double dmax = cache.dist[imax];
  set_backward(o, [=](Tape& t) {
    if (dmax < 1e-15) return;
    const double g = t.nodes_[o.id].grad[0];
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    const double ux = (A.at(imax, 0) - B.at(jmax, 0)) / dmax;
    const double uy = (A.at(imax, 1) - B.at(jmax, 1)) / dmax;
    const double uz = (A.at(imax, 2) - B.at(jmax, 2)) / dmax;
    if (t.requires_grad(a)) {
      Tensor& da = t.grad(a);
      da.at(imax, 0) += g * ux;
      da.at(imax, 1) += g * uy;
      da.at(imax, 2) += g * uz;
    }
    if (t.requires_grad(b)) {
      Tensor& db = t.grad(b);
      db.at(jmax, 0) -= g * ux;
      db.at(jmax, 1) -= g * uy;
      db.at(jmax, 2) -= g * uz;
    }
  });
  return o;
}

Var Tape::swd(Var a, Var b, int n_proj, std::uint64_t seed) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check(av.cols() == 3 && bv.cols() == 3, "swd: rows must be xyz");
  check(av.rows() == bv.rows() && av.rows() > 0, "swd: sizes must match");
  check(n_proj >= 1, "swd: need at least one projection");
  const std::size_t n = av.rows();
  Rng rng(seed);
  std::vector<double> dirs;  // n_proj unit xyz triples
  dirs.reserve(3 * n_proj);
  for (int p = 0; p < n_proj; ++p) {
    for (;;) {
      const double x = rng.uniform(-1.0, 1.0);
      const double y = rng.uniform(-1.0, 1.0);
      const double z = rng.uniform(-1.0, 1.0);
      const double n2 = x * x + y * y + z * z;
      if (n2 > 1e-12 && n2 <= 1.0) {
        const double inv = 1.0 / std::sqrt(n2);
        dirs.push_back(x * inv);
        dirs.push_back(y * inv);
        dirs.push_back(z * inv);
        break;
      }
    }
  }
  // forward + caches for backward
  struct ProjCache {
    std::vector<std::uint32_t> pa, pb;  // sort permutations
    std::vector<double> sgn;            // sign per rank
  };
  std::vector<ProjCache> caches(n_proj);
  double total = 0.0;
  std::vector<double> proj_a(n), proj_b(n);
  for (int p = 0; p < n_proj; ++p) {
    const double dx = dirs[3 * p], dy = dirs[3 * p + 1], dz = dirs[3 * p + 2];
    for (std::size_t i = 0; i < n; ++i) {
      proj_a[i] = av.at(i, 0) * dx + av.at(i, 1) * dy + av.at(i, 2) * dz;
      proj_b[i] = bv.at(i, 0) * dx + bv.at(i, 1) * dy + bv.at(i, 2) * dz;
    }
    auto& c = caches[p];
    c.pa.resize(n);
    c.pb.resize(n);
    std::iota(c.pa.begin(), c.pa.end(), 0u);
    std::iota(c.pb.begin(), c.pb.end(), 0u);
    std::sort(c.pa.begin(), c.pa.end(), [&](std::uint32_t x, std::uint32_t y) {
      return proj_a[x] < proj_a[y] || (proj_a[x] == proj_a[y] && x < y);
    });
    std::sort(c.pb.begin(), c.pb.end(), [&](std::uint32_t x, std::uint32_t y) {
      return proj_b[x] < proj_b[y] || (proj_b[x] == proj_b[y] && x < y);
    });
    c.sgn.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = proj_a[c.pa[i]] - proj_b[c.pb[i]];
      c.sgn[i] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      total += std::abs(diff);
    }
  }
  Tensor out = Tensor::scalar(total / (double(n) * double(n_proj)));
  const bool req = track({a, b});
  Var o = push(std::move(out), req, nullptr);
  set_backward(o, [=, cs = std::move(caches), ds = std::move(dirs)](Tape& t) {
    const double g =
        t.nodes_[o.id].grad[0] / (double(n) * double(n_proj));
    const bool need_a = t.requires_grad(a);
    const bool need_b = t.requires_grad(b);
    if (!need_a && !need_b) return;
    Tensor* da = need_a ? &t.grad(a) : nullptr;
    Tensor* db = need_b ? &t.grad(b) : nullptr;
    for (int p = 0; p < n_proj; ++p) {
      const double dx = ds[3 * p], dy = ds[3 * p + 1], dz = ds[3 * p + 2];
      const auto& c = cs[p];
      for (std::size_t i = 0; i < n; ++i) {
        const double s = g * c.sgn[i];
        if (s == 0.0) continue;
        if (da) {
          da->at(c.pa[i], 0) += s * dx;
          da->at(c.pa[i], 1) += s * dy;
          da->at(c.pa[i], 2) += s * dz;
        }
        if (db) {
          db->at(c.pb[i], 0) -= s * dx;
          db->at(c.pb[i], 1) -= s * dy;
          db->at(c.pb[i], 2) -= s * dz;
        }
      }
    }
  });
  return o;
}

Var Tape::bce_mean(Var probs, const Tensor& labels) {
  const Tensor& pv = value(probs);
  check(pv.same_shape(labels), "bce: prediction/label size mismatch");
  check(pv.size() > 0, "bce: empty");
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p = std::clamp(pv[i], kBceClamp, 1.0 - kBceClamp);
    total += labels[i] > 0.5 ? -std::log(p) : -std::log(1.0 - p);
  }
  Tensor out = Tensor::scalar(total / double(pv.size()));
  const bool req = track({probs});
  Var o = push(std::move(out), req, nullptr);
  Tensor labels_c = labels;
  set_backward(o, [=, lab = std::move(labels_c)](Tape& t) {
    if (!t.requires_grad(probs)) return;
    const Tensor& p = t.value(probs);
    Tensor& dp = t.grad(probs);
    const double g = t.nodes_[o.id].grad[0] / double(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] < kBceClamp || p[i] > 1.0 - kBceClamp) continue;  // clamped
      const double y = lab[i] > 0.5 ? 1.0 : 0.0;
      dp[i] += g * (p[i] - y) / (p[i] * (1.0 - p[i]));
    }
  });
  return o;
}

// ---------------------------------------------------------------------------

double finite_diff_max_rel_error(
    const std::function<double(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, const std::vector<Tensor>& analytic_grads,
    double step, double floor) {
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double saved = inputs[t][i];
      inputs[t][i] = saved + step;
      const double fp = f(inputs);
      inputs[t][i] = saved - step;
      const double fm = f(inputs);
      inputs[t][i] = saved;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = analytic_grads[t][i];
      const double denom = std::max({floor, std::abs(fd), std::abs(an)});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace flow4d::ad
