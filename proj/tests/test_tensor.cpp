#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "imf/adam.hpp"
#include "imf/error.hpp"
#include "imf/tape.hpp"
#include "imf/tensor.hpp"
#include "support/grad_check.hpp"

using namespace imf;
using imf::testing::grad_check;

namespace {

Tensor rnd(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Builds the graph twice: once for analytic gradients, once per finite
// difference probe. `build` maps the leaves to a scalar loss.
double op_grad_err(std::vector<Tensor*> inputs,
                   const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                   double h = 1e-5) {
  auto eval = [&]() {
    Tape t;
    std::vector<Var> vars;
    for (Tensor* in : inputs) vars.push_back(t.leaf(*in, true));
    return t.value(build(t, vars))[0];
  };
  Tape t;
  std::vector<Var> vars;
  for (Tensor* in : inputs) vars.push_back(t.leaf(*in, true));
  t.backward(build(t, vars));

  std::vector<std::pair<std::string, Tensor*>> params;
  std::vector<const Tensor*> grads;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    params.emplace_back("in" + std::to_string(i), inputs[i]);
    grads.push_back(&t.grad(vars[i]));
  }
  return grad_check(eval, params, grads, h).max_rel_err;
}

}  // namespace

TEST_CASE("matmul multiplies and rejects bad shapes") {
  Tape t;
  Var a = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var b = t.constant(Tensor::matrix(2, 1, {1, 1}));
  const Tensor& c = t.value(t.matmul(a, b));
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c[0] == 3);
  CHECK(c[1] == 7);

  std::mt19937_64 rng(7);
  Tensor m = rnd({3, 3}, rng);
  Var vm = t.constant(m);
  Var id = t.constant(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  CHECK(t.value(t.matmul(vm, id)).max_abs_diff(m) == 0.0);

  CHECK_THROWS_AS(t.matmul(a, t.constant(Tensor::matrix(3, 1, {1, 1, 1}))), DimensionError);
  CHECK_THROWS_WITH_AS(t.matmul(a, t.constant(Tensor::vec({1, 2}))),
                       doctest::Contains("[2x2]"), DimensionError);
}

TEST_CASE("matmul is associative with identity in the chain") {
  std::mt19937_64 rng(11);
  Tensor a = rnd({3, 4}, rng), b = rnd({4, 2}, rng);
  Tensor eye = Tensor::matrix(4, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  Tape t;
  Var va = t.constant(a), vb = t.constant(b), vi = t.constant(eye);
  const Tensor& left = t.value(t.matmul(t.matmul(va, vi), vb));
  const Tensor& right = t.value(t.matmul(va, t.matmul(vi, vb)));
  CHECK(left.max_abs_diff(right) < 1e-14);
}

TEST_CASE("matmul gradients match finite differences") {
  std::mt19937_64 rng(3);
  Tensor a = rnd({3, 4}, rng), b = rnd({4, 2}, rng);
  double err = op_grad_err({&a, &b}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum_all(t.matmul(v[0], v[1]));
  });
  CHECK(err <= 1e-6);

  Tensor c = rnd({3, 4}, rng), d = rnd({5, 4}, rng);
  err = op_grad_err({&c, &d}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum_all(t.matmul_nt(v[0], v[1]));
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("elementwise forward values") {
  Tape t;
  Var x = t.constant(Tensor::vec({-3, 0, 3}));
  const Tensor& r = t.value(t.relu(x));
  CHECK(r[0] == 0);
  CHECK(r[1] == 0);
  CHECK(r[2] == 3);
  CHECK(t.value(t.sigmoid(t.scalar(0.0)))[0] == doctest::Approx(0.5));
  CHECK(t.value(t.softplus(t.scalar(0.0)))[0] == doctest::Approx(std::log(2.0)));
  CHECK(t.value(t.leaky_relu(t.scalar(-2.0), 0.1))[0] == doctest::Approx(-0.2));
  CHECK(t.value(t.elu(t.scalar(-1.0)))[0] == doctest::Approx(std::expm1(-1.0)));
  CHECK(t.value(t.affine(t.scalar(3.0), 2.0, 1.0))[0] == doctest::Approx(7.0));

  Var big = t.constant(Tensor::vec({-1000, 1000}));
  const Tensor& s = t.value(t.sigmoid(big));
  const Tensor& p = t.value(t.softplus(big));
  CHECK(s.all_finite());
  CHECK(p.all_finite());
  CHECK(s[0] == doctest::Approx(0.0));
  CHECK(s[1] == doctest::Approx(1.0));
  CHECK(p[1] == doctest::Approx(1000.0));
}

TEST_CASE("elementwise domain and shape errors") {
  Tape t;
  CHECK_THROWS_AS(t.log(t.constant(Tensor::vec({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(t.log(t.scalar(-2.0)), DomainError);
  Var a = t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = t.constant(Tensor::vec({1, 2, 3, 4}));
  CHECK_THROWS_AS(t.add(a, b), DimensionError);
}

TEST_CASE("elementwise broadcasting over scalars and unit axes") {
  Tape t;
  Var m = t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  const Tensor& shifted = t.value(t.add(m, t.scalar(10.0)));
  CHECK(shifted[0] == 11);
  CHECK(shifted[5] == 16);

  Var row = t.constant(Tensor::row({10, 20, 30}));
  const Tensor& r = t.value(t.add(m, row));
  CHECK(r.at(0, 2) == 33);
  CHECK(r.at(1, 0) == 14);

  Var col = t.constant(Tensor::matrix(2, 1, {100, 200}));
  const Tensor& c = t.value(t.mul(m, col));
  CHECK(c.at(0, 1) == 200);
  CHECK(c.at(1, 2) == 1200);
}

TEST_CASE("elementwise gradients match finite differences") {
  std::mt19937_64 rng(17);
  Tensor a = rnd({8}, rng), b = rnd({8}, rng);
  double err = op_grad_err({&a, &b}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum_all(t.mul(v[0], v[1]));
  });
  CHECK(err <= 1e-6);

  // Division with the denominator bounded away from zero.
  Tensor num = rnd({4, 3}, rng), den = rnd({4, 3}, rng, 0.5, 1.5);
  err = op_grad_err({&num, &den}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum_all(t.div(v[0], v[1]));
  });
  CHECK(err <= 1e-4);

  // Broadcast paths reduce gradients over the expanded axis.
  Tensor m = rnd({4, 3}, rng), row = rnd({1, 3}, rng), col = rnd({4, 1}, rng);
  err = op_grad_err({&m, &row, &col}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum_all(t.mul(t.add(v[0], v[1]), v[2]));
  });
  CHECK(err <= 1e-4);

  // Smooth unaries, inputs kept away from relu/abs kinks.
  Tensor x = rnd({6}, rng, 0.2, 1.0);
  Tensor xs = rnd({6}, rng, -1.0, -0.2);
  for (auto build : std::vector<std::function<Var(Tape&, const std::vector<Var>&)>>{
           [](Tape& t, const std::vector<Var>& v) { return t.sum_all(t.relu(v[0])); },
           [](Tape& t, const std::vector<Var>& v) { return t.sum_all(t.abs(v[0])); },
           [](Tape& t, const std::vector<Var>& v) { return t.sum_all(t.sigmoid(v[0])); },
           [](Tape& t, const std::vector<Var>& v) { return t.sum_all(t.softplus(v[0])); },
           [](Tape& t, const std::vector<Var>& v) { return t.sum_all(t.log(v[0])); },
           [](Tape& t, const std::vector<Var>& v) { return t.sum_all(t.neg(v[0])); },
           [](Tape& t, const std::vector<Var>& v) { return t.mean_all(t.affine(v[0], 2.5, -1.0)); },
       }) {
    CHECK(op_grad_err({&x}, build) <= 1e-4);
  }
  for (auto build : std::vector<std::function<Var(Tape&, const std::vector<Var>&)>>{
           [](Tape& t, const std::vector<Var>& v) { return t.sum_all(t.leaky_relu(v[0], 0.2)); },
           [](Tape& t, const std::vector<Var>& v) { return t.sum_all(t.elu(v[0])); },
       }) {
    CHECK(op_grad_err({&xs}, build) <= 1e-4);
  }
}

TEST_CASE("range properties of activations") {
  std::mt19937_64 rng(23);
  Tensor x = rnd({200}, rng, -20, 20);
  Tape t;
  Var v = t.constant(x);
  const Tensor& s = t.value(t.sigmoid(v));
  const Tensor& p = t.value(t.softplus(v));
  const Tensor& r = t.value(t.relu(v));
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(s[i] > 0.0);
    CHECK(s[i] < 1.0);
    CHECK(p[i] > 0.0);
    CHECK(r[i] >= 0.0);
  }
}

TEST_CASE("shape ops and gather") {
  Tape t;
  Var m = t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  CHECK(t.value(t.reshape(m, {3, 2})).shape() == Shape{3, 2});
  CHECK(t.value(t.reshape(m, {3, 2}))[2] == 3);
  CHECK_THROWS_AS(t.reshape(m, {4, 2}), DimensionError);

  CHECK(t.value(t.sum_all(m))[0] == 21);
  CHECK(t.value(t.mean_all(m))[0] == doctest::Approx(3.5));
  const Tensor& sr = t.value(t.sum_rows(m));
  CHECK(sr.shape() == Shape{2, 1});
  CHECK(sr[0] == 6);
  CHECK(sr[1] == 15);

  const Tensor& g = t.value(t.gather_rows(m, {1, 0, 1}));
  CHECK(g.shape() == Shape{3, 3});
  CHECK(g.at(0, 0) == 4);
  CHECK(g.at(2, 2) == 6);
  CHECK_THROWS_AS(t.gather_rows(m, {2}), DimensionError);

  Var a = t.constant(Tensor::matrix(2, 1, {1, 2}));
  Var b = t.constant(Tensor::matrix(2, 2, {3, 4, 5, 6}));
  std::vector<Var> parts{a, b};
  const Tensor& cc = t.value(t.concat_cols(parts));
  CHECK(cc.shape() == Shape{2, 3});
  CHECK(cc.at(0, 1) == 3);
  CHECK(cc.at(1, 0) == 2);
  CHECK(cc.at(1, 2) == 6);

  Var c = t.constant(Tensor::matrix(1, 2, {7, 8}));
  std::vector<Var> rows{b, c};
  const Tensor& rr = t.value(t.concat_rows(rows));
  CHECK(rr.shape() == Shape{3, 2});
  CHECK(rr.at(2, 0) == 7);
  CHECK(rr.at(2, 1) == 8);
  std::vector<Var> bad{a, c};
  CHECK_THROWS_AS(t.concat_rows(bad), DimensionError);
}

TEST_CASE("shape op gradients, including scatter-add through repeated gather") {
  std::mt19937_64 rng(29);
  Tensor m = rnd({4, 3}, rng);
  double err = op_grad_err({&m}, [](Tape& t, const std::vector<Var>& v) {
    Var g = t.gather_rows(v[0], {0, 2, 2, 1});
    return t.sum_all(t.mul(g, g));
  });
  CHECK(err <= 1e-4);

  Tensor p = rnd({3, 2}, rng), q = rnd({3, 3}, rng);
  err = op_grad_err({&p, &q}, [](Tape& t, const std::vector<Var>& v) {
    std::vector<Var> parts{v[0], v[1]};
    Var c = t.concat_cols(parts);
    return t.sum_all(t.mul(c, c));
  });
  CHECK(err <= 1e-4);

  Tensor r1 = rnd({2, 3}, rng), r2 = rnd({4, 3}, rng);
  err = op_grad_err({&r1, &r2}, [](Tape& t, const std::vector<Var>& v) {
    std::vector<Var> parts{v[0], v[1]};
    Var c = t.concat_rows(parts);
    return t.sum_all(t.mul(c, c));
  });
  CHECK(err <= 1e-4);

  err = op_grad_err({&m}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum_all(t.mul(t.sum_rows(v[0]), t.sum_rows(v[0])));
  });
  CHECK(err <= 1e-4);

  err = op_grad_err({&m}, [](Tape& t, const std::vector<Var>& v) {
    Var r = t.reshape(v[0], {2, 6});
    return t.sum_all(t.mul(r, r));
  });
  CHECK(err <= 1e-4);
}

TEST_CASE("cosine_rows values") {
  Tape t;
  Var v = t.constant(Tensor::matrix(1, 3, {0.3, -1.2, 2.0}));
  CHECK(t.value(t.cosine_rows(v, v))[0] == doctest::Approx(1.0));

  Var a = t.constant(Tensor::matrix(1, 2, {1, 0}));
  Var b = t.constant(Tensor::matrix(1, 2, {0, 1}));
  CHECK(t.value(t.cosine_rows(a, b))[0] == doctest::Approx(0.0));

  // Broadcast second argument: one reference row against many.
  Var many = t.constant(Tensor::matrix(2, 2, {2, 0, 0, 5}));
  const Tensor& c = t.value(t.cosine_rows(many, a));
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[1] == doctest::Approx(0.0));

  // Zero rows are guarded, not NaN.
  Var z = t.constant(Tensor::matrix(1, 2, {0, 0}));
  const Tensor& zc = t.value(t.cosine_rows(z, a));
  CHECK(zc.all_finite());
  CHECK(zc[0] == 0.0);
}

TEST_CASE("cosine gradients match finite differences") {
  std::mt19937_64 rng(31);
  Tensor a = rnd({5, 8}, rng), b = rnd({5, 8}, rng);
  double err = op_grad_err({&a, &b}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum_all(t.cosine_rows(v[0], v[1]));
  });
  CHECK(err <= 1e-5);

  Tensor one = rnd({1, 8}, rng);
  err = op_grad_err({&a, &one}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum_all(t.cosine_rows(v[0], v[1]));
  });
  CHECK(err <= 1e-5);

  Tensor p = rnd({4, 6}, rng), q = rnd({7, 6}, rng);
  err = op_grad_err({&p, &q}, [](Tape& t, const std::vector<Var>& v) {
    Var c = t.cosine_matrix(v[0], v[1]);
    return t.sum_all(t.mul(c, c));
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("cosine_matrix agrees with per-pair cosine_rows") {
  std::mt19937_64 rng(37);
  Tensor a = rnd({4, 5}, rng), b = rnd({6, 5}, rng);
  Tape t;
  const Tensor& c = t.value(t.cosine_matrix(t.constant(a), t.constant(b)));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      Tensor ra({1, 5}), rb({1, 5});
      for (std::size_t k = 0; k < 5; ++k) {
        ra[k] = a.at(i, k);
        rb[k] = b.at(j, k);
      }
      double want = t.value(t.cosine_rows(t.constant(ra), t.constant(rb)))[0];
      CHECK(c.at(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("l1 distance matrix values and gradients") {
  Tape t;
  Var a = t.constant(Tensor::matrix(1, 2, {0, 0}));
  Var b = t.constant(Tensor::matrix(1, 2, {1, 2}));
  CHECK(t.value(t.l1_distance_matrix(a, b))[0] == doctest::Approx(3.0));

  // Rows of q sit well above/below p so no |x| kink is near the FD probes,
  // and the above/below counts differ so no sign sum cancels to exactly zero
  // (an exact zero drowns the FD probe in rounding noise).
  std::mt19937_64 rng(41);
  Tensor p = rnd({3, 4}, rng, 0.0, 1.0);
  Tensor q = rnd({3, 4}, rng, 2.0, 3.0);
  for (std::size_t j = 0; j < 4; ++j) q.at(2, j) -= 5.0;
  double err = op_grad_err({&p, &q}, [](Tape& t2, const std::vector<Var>& v) {
    return t2.sum_all(t2.l1_distance_matrix(v[0], v[1]));
  });
  CHECK(err <= 1e-4);
}

TEST_CASE("segment softmax normalizes per segment and differentiates") {
  auto seg = std::make_shared<EdgeSegments>();
  seg->offsets = {0, 2, 5, 6};
  seg->dst = {0, 1, 2, 3, 0, 1};

  std::mt19937_64 rng(43);
  Tensor logits = rnd({6}, rng, -2, 2);
  Tape t;
  const Tensor& alpha = t.value(t.segment_softmax(t.constant(logits), seg));
  CHECK(alpha[0] + alpha[1] == doctest::Approx(1.0));
  CHECK(alpha[2] + alpha[3] + alpha[4] == doctest::Approx(1.0));
  CHECK(alpha[5] == doctest::Approx(1.0));

  Tensor rows = rnd({4, 3}, rng);
  Tensor mixw = rnd({3, 3}, rng);
  double err = op_grad_err({&logits, &rows}, [&](Tape& t2, const std::vector<Var>& v) {
    Var a = t2.segment_softmax(v[0], seg);
    Var out = t2.segment_weighted_sum(a, v[1], seg);
    return t2.sum_all(t2.mul(out, t2.constant(mixw)));
  });
  CHECK(err <= 1e-4);

  CHECK_THROWS_AS(t.segment_softmax(t.constant(Tensor::vec({1, 2})), seg), DimensionError);
}

TEST_CASE("backward on hand-checked losses") {
  Tape t;
  Var x = t.leaf(Tensor::vec({1, 2, 3}), true);
  t.backward(t.sum_all(x));
  const Tensor& g = t.grad(x);
  CHECK(g.shape() == Shape{3});
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 1.0);

  Tape t2;
  Var y = t2.leaf(Tensor::vec({1, 2, 3}), true);
  t2.backward(t2.sum_all(t2.mul(y, y)));
  const Tensor& g2 = t2.grad(y);
  CHECK(g2[0] == doctest::Approx(2.0));
  CHECK(g2[1] == doctest::Approx(4.0));
  CHECK(g2[2] == doctest::Approx(6.0));
}

TEST_CASE("backward guards") {
  Tape t;
  Var x = t.leaf(Tensor::vec({1, 2}), true);
  Var loss = t.sum_all(x);
  CHECK_THROWS_AS(t.backward(x), DimensionError);  // non-scalar loss
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), LogicError);  // no reset between calls
  t.reset_grads();
  t.backward(loss);
  CHECK(t.grad(x)[0] == 1.0);

  CHECK_THROWS_AS(t.backward(Var{}), LogicError);  // dangling handle
  Tape empty;
  CHECK_THROWS_AS(empty.backward(Var{0}), LogicError);
}

TEST_CASE("grad buffers match value shapes after backward") {
  std::mt19937_64 rng(47);
  Tensor a = rnd({3, 4}, rng), b = rnd({4, 2}, rng);
  Tape t;
  Var va = t.leaf(a, true), vb = t.leaf(b, true);
  Var loss = t.mean_all(t.sigmoid(t.matmul(va, vb)));
  t.backward(loss);
  for (std::uint32_t i = 0; i < t.num_nodes(); ++i) {
    Var v{i};
    if (t.has_grad(v)) CHECK(t.grad(v).shape() == t.value(v).shape());
  }
  // Unused parameters still receive a zero buffer so optimizers can loop
  // uniformly over everything registered.
  Tape t3;
  Var used = t3.leaf(Tensor::vec({1.0}), true);
  Var unused = t3.leaf(Tensor::vec({5.0}), true);
  t3.backward(t3.sum_all(used));
  CHECK(t3.has_grad(unused));
  CHECK(t3.grad(unused)[0] == 0.0);
}

TEST_CASE("adam fixed point and first step") {
  Tensor p = Tensor::vec({1.0, -2.0});
  AdamState st;
  adam_step(p, Tensor::zeros({2}), st);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);
  CHECK(st.step == 1);

  Tensor q = Tensor::scalar(1.0);
  AdamState st2;
  st2.lr = 0.1;
  adam_step(q, Tensor::scalar(1.0), st2);
  CHECK(q[0] == doctest::Approx(0.9).epsilon(1e-6));

  CHECK_THROWS_AS(adam_step(q, Tensor::vec({1, 2}), st2), DimensionError);
}

TEST_CASE("adam converges on a quadratic bowl") {
  Tensor x = Tensor::vec({5.0, 5.0});
  AdamState st;
  st.lr = 0.1;
  for (int step = 0; step < 500; ++step) {
    Tensor g = Tensor::vec({2 * x[0], 2 * x[1]});
    adam_step(x, g, st);
  }
  CHECK(std::hypot(x[0], x[1]) < 1e-2);
  CHECK(st.step == 500);
  CHECK(st.m.shape() == x.shape());
  CHECK(st.v.shape() == x.shape());
}

TEST_CASE("adam via tape gradients reduces a composite loss") {
  std::mt19937_64 rng(53);
  Tensor w = rnd({4, 3}, rng);
  Tensor data = rnd({6, 4}, rng);
  AdamOptimizer opt(0.05);
  double first = 0, last = 0;
  for (int step = 0; step < 60; ++step) {
    Tape t;
    Var vw = t.leaf(w, true);
    Var pred = t.sigmoid(t.matmul(t.constant(data), vw));
    Var loss = t.mean_all(t.mul(pred, pred));
    t.backward(loss);
    if (step == 0) first = t.value(loss)[0];
    last = t.value(loss)[0];
    opt.update("w", w, t.grad(vw));
  }
  CHECK(last < first);
}
