#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flow4d/tensor.hpp"

namespace flow4d::ad {

// Contiguous row groups of a stacked tensor (e.g. per-frame point blocks).
struct Segments {
  std::vector<std::uint32_t> counts;

  std::size_t total() const {
    std::size_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  std::size_t size() const { return counts.size(); }
  static Segments single(std::uint32_t n) { return {{n}}; }
};

struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over 2-D double tensors. Nodes are created in
// topological order; backward() replays them in reverse. With grads disabled
// the same builders run as plain forward evaluation.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Seeds d(root)=1 (root must be 1x1) and accumulates into every grad.
  void backward(Var root);

  // --- elementwise / linear algebra ---
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var square(Var a);
  Var sqrt_guarded(Var a);            // d/dx uses max(y, 1e-12)
  Var rsqrt_eps(Var a, double eps);   // (x + eps)^(-1/2)

  // --- shape ---
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var a, std::size_t start, std::size_t count);

  // --- broadcasts (r is 1xC, v is Nx1) ---
  Var add_rowvec(Var a, Var r);
  Var sub_rowvec(Var a, Var r);
  Var mul_rowvec(Var a, Var r);
  Var sub_colvec(Var a, Var v);
  Var mul_colvec(Var a, Var v);

  // Per-segment rows of src (S x C) repeated over their row blocks (N x C).
  Var broadcast_rows(Var src, const Segments& segs);

  // --- reductions ---
  Var segment_colmax(Var a, const Segments& segs);  // S x C, ties: low row
  Var colmean(Var a);                               // 1 x C
  Var rowsum(Var a);                                // N x 1
  Var sum_all(Var a);                               // 1 x 1
  Var mean_all(Var a);                              // 1 x 1
  Var softmax_rows(Var a);
  Var max2(Var x, Var y);  // scalars; ties take x

  // --- point-set losses (rows are xyz triples) ---
  // Mean over rows of a of the distance to the nearest row of b; the
  // matching found in the forward pass stays fixed in the backward pass.
  Var directed_nn_mean(Var a, Var b);
  Var directed_nn_max(Var a, Var b);
  // Sliced Wasserstein: mean over `n_proj` seeded random unit directions of
  // the 1-D transport cost between the projected multisets (equal sizes).
  Var swd(Var a, Var b, int n_proj, std::uint64_t seed);

  // Mean binary cross entropy; probabilities clamped to [1e-7, 1 - 1e-7].
  Var bce_mean(Var probs, const Tensor& labels);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  Var push(Tensor value, bool requires_grad,
           std::function<void(Tape&)> backward);
  void set_backward(Var v, std::function<void(Tape&)> fn);
  bool track(std::initializer_list<Var> ins) const;
  void accum(Var v, const Tensor& g);

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// Relative-error check of an analytic gradient against central differences.
// f rebuilds the graph from scratch for perturbed inputs.
double finite_diff_max_rel_error(
    const std::function<double(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, const std::vector<Tensor>& analytic_grads,
    double step = 1e-6, double floor = 1e-6);

}  // namespace flow4d::ad
