#include <cmath>
#include <functional>

#include "doctest.h"
#include "flow4d/autodiff.hpp"
#include "flow4d/rng.hpp"

using namespace flow4d;
using ad::Segments;
using ad::Tape;
using ad::Var;

namespace {

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols,
                     double scale = 1.0) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = scale * rng.uniform(-1.0, 1.0);
  return t;
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Max relative error between the tape gradient and central differences.
double check_grad(const Builder& build, const std::vector<Tensor>& inputs,
                  double step = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.leaf(x, true));
  const Var out = build(tape, vars);
  REQUIRE(tape.value(out).size() == 1);
  tape.backward(out);
  std::vector<Tensor> grads;
  for (const Var v : vars) grads.push_back(tape.grad(v));
  const auto f = [&](const std::vector<Tensor>& xs) {
    Tape t2(/*grad_enabled=*/false);
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(t2.constant(x));
    return t2.value(build(t2, vs))[0];
  };
  return ad::finite_diff_max_rel_error(f, inputs, grads, step);
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("matmul values and gradients (all used transpose modes)") {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor a = random_tensor(rng, 4, 3);
    const Tensor b = random_tensor(rng, 3, 5);
    const Tensor r = random_tensor(rng, 4, 5);
    const Builder nn = [&](Tape& t, const std::vector<Var>& v) {
      return t.sum_all(t.mul(t.matmul(v[0], v[1]), t.constant(r)));
    };
    CHECK(check_grad(nn, {a, b}) < 1e-7);

    const Tensor bt = random_tensor(rng, 5, 3);
    const Builder nt = [&](Tape& t, const std::vector<Var>& v) {
      return t.sum_all(t.mul(t.matmul(v[0], v[1], false, true), t.constant(r)));
    };
    CHECK(check_grad(nt, {a, bt}) < 1e-7);

    const Tensor at = random_tensor(rng, 3, 4);
    const Builder tn = [&](Tape& t, const std::vector<Var>& v) {
      return t.sum_all(t.mul(t.matmul(v[0], v[1], true, false), t.constant(r)));
    };
    CHECK(check_grad(tn, {at, b}) < 1e-7);
  }
}

TEST_CASE("elementwise and broadcast op gradients") {
  Rng rng(2);
  const Tensor a = random_tensor(rng, 5, 4);
  const Tensor b = random_tensor(rng, 5, 4);
  const Tensor row = random_tensor(rng, 1, 4);
  const Tensor col = random_tensor(rng, 5, 1);
  const Tensor r = random_tensor(rng, 5, 4);

  const auto weighted = [&](Tape& t, Var x) {
    return t.sum_all(t.mul(x, t.constant(r)));
  };
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.add(v[0], v[1]));
        }, {a, b}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.sub(v[0], v[1]));
        }, {a, b}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.mul(v[0], v[1]));
        }, {a, b}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.scale(v[0], -1.7));
        }, {a}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.add_rowvec(v[0], v[1]));
        }, {a, row}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.sub_rowvec(v[0], v[1]));
        }, {a, row}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.mul_rowvec(v[0], v[1]));
        }, {a, row}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.sub_colvec(v[0], v[1]));
        }, {a, col}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.mul_colvec(v[0], v[1]));
        }, {a, col}) < 1e-7);
}

TEST_CASE("nonlinearity gradients") {
  Rng rng(3);
  // keep relu inputs away from the kink
  Tensor a = random_tensor(rng, 6, 5);
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i]) < 0.05) a[i] += 0.1;
  const Tensor r = random_tensor(rng, 6, 5);
  const auto weighted = [&](Tape& t, Var x) {
    return t.sum_all(t.mul(x, t.constant(r)));
  };
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.relu(v[0]));
        }, {a}) < 1e-6);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.sigmoid(v[0]));
        }, {a}) < 1e-6);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted(t, t.square(v[0]));
        }, {a}) < 1e-6);
  Tensor pos = random_tensor(rng, 4, 4);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = 0.3 + std::abs(pos[i]);
  const Tensor rp = random_tensor(rng, 4, 4);
  const auto weighted_p = [&](Tape& t, Var x) {
    return t.sum_all(t.mul(x, t.constant(rp)));
  };
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted_p(t, t.sqrt_guarded(v[0]));
        }, {pos}) < 1e-6);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return weighted_p(t, t.rsqrt_eps(v[0], 1e-5));
        }, {pos}) < 1e-6);
}

TEST_CASE("shape op gradients: concat, slice, broadcast, reductions") {
  Rng rng(4);
  const Tensor a = random_tensor(rng, 3, 4);
  const Tensor b = random_tensor(rng, 3, 2);
  const Tensor c = random_tensor(rng, 2, 4);
  const Tensor r6 = random_tensor(rng, 3, 6);
  const Tensor r5 = random_tensor(rng, 5, 4);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return t.sum_all(t.mul(t.concat_cols({v[0], v[1]}), t.constant(r6)));
        }, {a, b}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return t.sum_all(t.mul(t.concat_rows({v[0], v[1]}), t.constant(r5)));
        }, {a, c}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return t.sum_all(t.slice_rows(v[0], 1, 2));
        }, {a}) < 1e-7);

  const Segments segs{{2, 3}};
  const Tensor src = random_tensor(rng, 2, 4);
  const Tensor r54 = random_tensor(rng, 5, 4);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return t.sum_all(t.mul(t.broadcast_rows(v[0], segs), t.constant(r54)));
        }, {src}) < 1e-7);

  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return t.sum_all(t.colmean(v[0]));
        }, {a}) < 1e-7);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return t.mean_all(t.rowsum(v[0]));
        }, {a}) < 1e-7);
}

TEST_CASE("segment colmax: value, tie rule, gradient routing") {
  Tape tape;
  Tensor x = Tensor::from(4, 2, {1.0, 5.0,
                                 3.0, 5.0,
                                 2.0, 0.0,
                                 2.0, 7.0});
  const Var v = tape.leaf(x, true);
  const Var m = tape.segment_colmax(v, Segments{{2, 2}});
  CHECK(tape.value(m).at(0, 0) == 3.0);
  CHECK(tape.value(m).at(0, 1) == 5.0);  // tie: row 0 wins
  CHECK(tape.value(m).at(1, 0) == 2.0);  // tie: row 2 wins
  CHECK(tape.value(m).at(1, 1) == 7.0);
  tape.backward(tape.sum_all(m));
  const Tensor& g = tape.grad(v);
  CHECK(g.at(1, 0) == 1.0);
  CHECK(g.at(0, 1) == 1.0);
  CHECK(g.at(1, 1) == 0.0);  // loser of the tie gets nothing
  CHECK(g.at(2, 0) == 1.0);
  CHECK(g.at(3, 1) == 1.0);

  Rng rng(5);
  const Tensor rnd = random_tensor(rng, 7, 3);
  const Tensor r = random_tensor(rng, 3, 3);
  const Segments segs{{2, 4, 1}};
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v2) {
          return t.sum_all(t.mul(t.segment_colmax(v2[0], segs), t.constant(r)));
        }, {rnd}) < 1e-6);
}

TEST_CASE("softmax rows: stochasticity and gradient") {
  Rng rng(6);
  const Tensor a = random_tensor(rng, 4, 6, 2.0);
  Tape tape;
  const Var v = tape.constant(a);
  const Tensor& y = tape.value(tape.softmax_rows(v));
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      CHECK(y.at(i, j) >= 0.0);
      sum += y.at(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  const Tensor r = random_tensor(rng, 4, 6);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& vs) {
          return t.sum_all(t.mul(t.softmax_rows(vs[0]), t.constant(r)));
        }, {a}) < 1e-6);
}

TEST_CASE("point-set losses: values and gradients with fixed matches") {
  Rng rng(7);
  const Tensor a = random_tensor(rng, 12, 3);
  const Tensor b = random_tensor(rng, 9, 3);

  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return t.directed_nn_mean(v[0], v[1]);
        }, {a, b}) < 1e-5);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return t.directed_nn_max(v[0], v[1]);
        }, {a, b}) < 1e-5);
  const Tensor b_same = random_tensor(rng, 12, 3);
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return t.swd(v[0], v[1], 6, 42);
        }, {a, b_same}) < 1e-5);

  // max2 takes the larger branch's gradient
  Tape tape;
  const Var x = tape.leaf(Tensor::scalar(2.0), true);
  const Var y = tape.leaf(Tensor::scalar(1.0), true);
  tape.backward(tape.max2(x, y));
  CHECK(tape.grad(x)[0] == 1.0);
  CHECK(tape.grad(y)[0] == 0.0);
}

TEST_CASE("bce: clamping and gradient") {
  Tensor labels = Tensor::from(4, 1, {1, 0, 1, 0});
  Tensor probs = Tensor::from(4, 1, {0.8, 0.3, 0.6, 0.1});
  CHECK(check_grad([&](Tape& t, const std::vector<Var>& v) {
          return t.bce_mean(v[0], labels);
        }, {probs}) < 1e-6);
  // perfect confident predictions cost only the clamp floor
  Tape tape;
  Tensor perfect = Tensor::from(2, 1, {1.0, 0.0});
  Tensor lab = Tensor::from(2, 1, {1.0, 0.0});
  CHECK(tape.value(tape.bce_mean(tape.constant(perfect), lab))[0] <= 1.2e-7);
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Tape tape;
  const Var x = tape.leaf(Tensor::scalar(3.0), true);
  const Var y = tape.add(x, x);           // 2x
  const Var z = tape.mul(y, y);           // 4x^2
  tape.backward(tape.sum_all(z));
  CHECK(tape.grad(x)[0] == doctest::Approx(8.0 * 3.0).epsilon(1e-12));
}

TEST_SUITE_END();
