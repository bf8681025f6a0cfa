#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "imf/error.hpp"
#include "imf/scorer.hpp"
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

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double row_cosine(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.shape()[1]; ++k) {
    dot += a.at(i, k) * b.at(j, k);
    na += a.at(i, k) * a.at(i, k);
    nb += b.at(j, k) * b.at(j, k);
  }
  return dot / (std::max(std::sqrt(na), Tape::kCosineEps) *
                std::max(std::sqrt(nb), Tape::kCosineEps));
}

// Direct evaluation of the relation-conditioned transform: the flattened
// transform row w[k, i*D+j] is read as a D x D matrix contracted against the
// relation vector.
Tensor naive_contextual(const Tensor& e, const std::vector<std::uint32_t>& rel_ids,
                        const Tensor& rel, const Tensor& w, const Tensor& bias) {
  std::size_t b = e.shape()[0], d = e.shape()[1], dr = rel.shape()[1];
  Tensor out({b, d});
  for (std::size_t m = 0; m < b; ++m) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = bias[j];
      for (std::size_t i = 0; i < d; ++i) {
        double wij = 0.0;
        for (std::size_t k = 0; k < dr; ++k) wij += rel.at(rel_ids[m], k) * w.at(k, i * d + j);
        s += e.at(m, i) * wij;
      }
      out.at(m, j) = s;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("scorer kinds parse and print") {
  CHECK(parse_scorer("contextual") == ScorerKind::kContextual);
  CHECK(parse_scorer("transe") == ScorerKind::kTransE);
  CHECK(parse_scorer("distmult") == ScorerKind::kDistMult);
  CHECK(scorer_name(ScorerKind::kDistMult) == std::string("distmult"));
  CHECK_THROWS_AS(parse_scorer("conve"), ConfigError);
}

TEST_CASE("zero transform reduces to the bias") {
  std::mt19937_64 rng(7);
  Tape tape;
  Tensor bias = rnd({1, 4}, rng);
  Var out = contextual_embed(tape, tape.constant(rnd({3, 4}, rng)), {0, 1, 0},
                             tape.constant(rnd({2, 5}, rng)),
                             tape.constant(Tensor::zeros({5, 16})), tape.constant(bias));
  const Tensor& v = tape.value(out);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(v.at(i, j) == bias[j]);
  }
}

TEST_CASE("scalar contextual transform") {
  Tape tape;
  Var out = contextual_embed(tape, tape.constant(Tensor::matrix(1, 1, {4.0})), {0},
                             tape.constant(Tensor::matrix(1, 1, {3.0})),
                             tape.constant(Tensor::matrix(1, 1, {2.0})),
                             tape.constant(Tensor::matrix(1, 1, {1.0})));
  CHECK(tape.value(out)[0] == doctest::Approx(25.0).epsilon(1e-15));
}

TEST_CASE("contextual transform matches the loop contraction") {
  std::mt19937_64 rng(17);
  Tensor e = rnd({5, 4}, rng), rel = rnd({3, 2}, rng), w = rnd({2, 16}, rng);
  Tensor bias = rnd({1, 4}, rng);
  std::vector<std::uint32_t> ids = {1, 0, 1, 2, 0};

  Tape tape;
  Var out = contextual_embed(tape, tape.constant(e), ids, tape.constant(rel), tape.constant(w),
                             tape.constant(bias));
  Tensor want = naive_contextual(e, ids, rel, w, bias);
  const Tensor& got = tape.value(out);
  REQUIRE(got.same_shape(want));
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("contextual transform validates its inputs") {
  std::mt19937_64 rng(18);
  Tape tape;
  Var e = tape.constant(rnd({2, 3}, rng));
  Var rel = tape.constant(rnd({2, 2}, rng));
  Var w = tape.constant(rnd({2, 9}, rng));
  Var bias = tape.constant(rnd({1, 3}, rng));
  CHECK_THROWS_AS(contextual_embed(tape, e, {0, 5}, rel, w, bias), VocabError);
  CHECK_THROWS_AS(contextual_embed(tape, e, {0}, rel, w, bias), DimensionError);
  Var w_bad = tape.constant(rnd({2, 8}, rng));
  CHECK_THROWS_AS(contextual_embed(tape, e, {0, 1}, rel, w_bad, bias), DimensionError);
}

TEST_CASE("contextual transform is linear in the relation vector") {
  std::mt19937_64 rng(19);
  Tensor r1 = rnd({1, 3}, rng), r2 = rnd({1, 3}, rng);
  Tensor rel({3, 3});
  for (std::size_t k = 0; k < 3; ++k) {
    rel.at(0, k) = r1[k];
    rel.at(1, k) = r2[k];
    rel.at(2, k) = r1[k] + r2[k];
  }
  Tensor e = rnd({1, 4}, rng), w = rnd({3, 16}, rng), bias = rnd({1, 4}, rng);

  Tape tape;
  auto embed = [&](std::uint32_t rid) {
    Var out = contextual_embed(tape, tape.constant(e), {rid}, tape.constant(rel),
                               tape.constant(w), tape.constant(bias));
    return tape.value(out);
  };
  Tensor ea = embed(0), eb = embed(1), esum = embed(2);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(esum[j] == doctest::Approx(ea[j] + eb[j] - bias[j]).epsilon(1e-12));
  }
}

TEST_CASE("candidate scores hit the sigmoid landmarks") {
  Tape tape;
  Tensor query = Tensor::matrix(1, 2, {2.0, 0.0});
  Tensor cands = Tensor::matrix(3, 2, {5.0, 0.0, 0.0, 1.0, -3.0, 0.0});
  const Tensor& y = tape.value(score_entities(tape, tape.constant(query), tape.constant(cands)));
  CHECK(y[0] == doctest::Approx(sigmoid(1.0)).epsilon(1e-12));   // parallel
  CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-15));            // orthogonal
  CHECK(y[2] == doctest::Approx(sigmoid(-1.0)).epsilon(1e-12));  // anti-parallel
}

TEST_CASE("candidate scores match a per-row recomputation") {
  std::mt19937_64 rng(23);
  Tensor q = rnd({2, 4}, rng), cands = rnd({6, 4}, rng);
  Tape tape;
  const Tensor& y = tape.value(score_entities(tape, tape.constant(q), tape.constant(cands)));
  REQUIRE(y.shape() == Shape{2, 6});
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(y.at(i, j) == doctest::Approx(sigmoid(row_cosine(q, i, cands, j))).epsilon(1e-12));
      CHECK(y.at(i, j) > 0.0);
      CHECK(y.at(i, j) < 1.0);
    }
  }
}

TEST_CASE("scores are invariant to positive rescaling of either side") {
  std::mt19937_64 rng(29);
  Tensor q = rnd({1, 5}, rng), cands = rnd({4, 5}, rng);
  Tensor q2 = q, cands2 = cands;
  for (std::size_t i = 0; i < q2.size(); ++i) q2[i] *= 7.5;
  for (std::size_t j = 0; j < 5; ++j) cands2.at(2, j) *= 0.125;

  Tape tape;
  const Tensor& base = tape.value(score_entities(tape, tape.constant(q), tape.constant(cands)));
  const Tensor& qs = tape.value(score_entities(tape, tape.constant(q2), tape.constant(cands)));
  const Tensor& cs = tape.value(score_entities(tape, tape.constant(q), tape.constant(cands2)));
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(qs[j] == doctest::Approx(base[j]).epsilon(1e-12));
    CHECK(cs[j] == doctest::Approx(base[j]).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy at the maximum-entropy point is log 2") {
  Tape tape;
  Tensor targets({2, 4}, {1, 0, 0, 1, 0, 0, 1, 0});
  Var loss = bce_from_scores(tape, tape.constant(Tensor::full({2, 4}, 0.5)),
                             tape.constant(targets));
  CHECK(tape.value(loss)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy of a single confident positive") {
  Tape tape;
  Var loss = bce_from_scores(tape, tape.constant(Tensor::matrix(1, 1, {sigmoid(1.0)})),
                             tape.constant(Tensor::matrix(1, 1, {1.0})));
  CHECK(tape.value(loss)[0] == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("cross entropy matches direct summation on an 8-entity batch") {
  std::mt19937_64 rng(31);
  std::bernoulli_distribution coin(0.3);
  Tensor logits = rnd({3, 8}, rng, -2.0, 2.0);
  Tensor scores({3, 8}), targets({3, 8});
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = sigmoid(logits[i]);
    targets[i] = coin(rng) ? 1.0 : 0.0;
  }
  double want = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      double t = targets.at(i, j), y = scores.at(i, j);
      row += t * std::log(y) + (1.0 - t) * std::log(1.0 - y);
    }
    want += -row / 8.0;
  }
  want /= 3.0;

  Tape tape;
  Var from_scores = bce_from_scores(tape, tape.constant(scores), tape.constant(targets));
  Var from_logits = bce_from_logits(tape, tape.constant(logits), tape.constant(targets));
  CHECK(tape.value(from_scores)[0] == doctest::Approx(want).epsilon(1e-12));
  CHECK(tape.value(from_logits)[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects shape mismatches") {
  Tape tape;
  Var y = tape.constant(Tensor::full({2, 3}, 0.5));
  Var t = tape.constant(Tensor::zeros({2, 4}));
  CHECK_THROWS_AS(bce_from_scores(tape, y, t), DimensionError);
  CHECK_THROWS_AS(bce_from_logits(tape, y, t), DimensionError);
}

TEST_CASE("translation scorer peaks at the exact translation") {
  Tape tape;
  Tensor h = Tensor::matrix(1, 3, {1.0, 2.0, 3.0});
  Tensor r = Tensor::matrix(1, 3, {0.5, -1.0, 2.0});
  Tensor cands = Tensor::matrix(3, 3, {1.5, 1.0, 5.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0});
  Var y = tape.sigmoid(transe_logits(tape, tape.constant(h), tape.constant(r),
                                     tape.constant(cands)));
  const Tensor& v = tape.value(y);
  CHECK(v[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(v[0] > v[1]);
  CHECK(v[0] > v[2]);
}

TEST_CASE("bilinear scorer with a zero relation is indifferent") {
  std::mt19937_64 rng(37);
  Tape tape;
  Var y = tape.sigmoid(distmult_logits(tape, tape.constant(rnd({2, 4}, rng)),
                                       tape.constant(Tensor::zeros({2, 4})),
                                       tape.constant(rnd({5, 4}, rng))));
  const Tensor& v = tape.value(y);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == 0.5);
}

TEST_CASE("alternate scorers match hand-computed 5-entity scores") {
  std::mt19937_64 rng(41);
  Tensor h = rnd({2, 3}, rng), r = rnd({2, 3}, rng), cands = rnd({5, 3}, rng);
  Tape tape;
  Var yt = tape.sigmoid(transe_logits(tape, tape.constant(h), tape.constant(r),
                                      tape.constant(cands)));
  Var yd = tape.sigmoid(distmult_logits(tape, tape.constant(h), tape.constant(r),
                                        tape.constant(cands)));
  const Tensor& tv = tape.value(yt);
  const Tensor& dv = tape.value(yd);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double l1 = 0.0, prod = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        l1 += std::abs(h.at(i, k) + r.at(i, k) - cands.at(j, k));
        prod += h.at(i, k) * r.at(i, k) * cands.at(j, k);
      }
      CHECK(tv.at(i, j) == doctest::Approx(sigmoid(-l1)).epsilon(1e-12));
      CHECK(dv.at(i, j) == doctest::Approx(sigmoid(prod)).epsilon(1e-12));
    }
  }
}

TEST_CASE("scoring pipeline gradients match finite differences") {
  std::mt19937_64 rng(43);
  Tensor entities = rnd({4, 3}, rng), rel = rnd({2, 2}, rng), w = rnd({2, 9}, rng);
  Tensor bias = rnd({1, 3}, rng);
  Tensor targets({2, 4});
  targets.at(0, 1) = 1.0;
  targets.at(1, 3) = 1.0;
  targets.at(1, 0) = 1.0;
  std::vector<std::uint32_t> batch_rows = {1, 3};
  std::vector<std::uint32_t> ids = {0, 1};

  std::vector<std::pair<std::string, Tensor*>> params = {
      {"entities", &entities}, {"rel", &rel}, {"w", &w}, {"bias", &bias}};

  auto build = [&](Tape& tape, std::vector<Var>& leaves) {
    for (auto& [name, tensor] : params) leaves.push_back(tape.leaf(*tensor, true));
    Var queries = contextual_embed(tape, tape.gather_rows(leaves[0], batch_rows), ids,
                                   leaves[1], leaves[2], leaves[3]);
    Var scores = score_entities(tape, queries, leaves[0]);
    return bce_from_scores(tape, scores, tape.constant(targets));
  };

  Tape tape;
  std::vector<Var> leaves;
  tape.backward(build(tape, leaves));
  std::vector<const Tensor*> grads;
  for (Var leaf : leaves) grads.push_back(&tape.grad(leaf));

  auto loss_fn = [&]() {
    Tape fresh;
    std::vector<Var> scratch;
    return fresh.value(build(fresh, scratch))[0];
  };
  auto res = grad_check(loss_fn, params, grads);
  CAPTURE(res.worst);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("alternate scorer gradients match finite differences") {
  std::mt19937_64 rng(47);
  Tensor h = rnd({2, 3}, rng, 2.0, 3.0), r = rnd({2, 3}, rng, -1.0, 0.0);
  Tensor cands = rnd({4, 3}, rng, -1.0, 1.0);
  Tensor targets({2, 4});
  targets.at(0, 0) = 1.0;
  targets.at(1, 2) = 1.0;

  for (ScorerKind kind : {ScorerKind::kTransE, ScorerKind::kDistMult}) {
    std::vector<std::pair<std::string, Tensor*>> params = {
        {"h", &h}, {"r", &r}, {"cands", &cands}};
    auto build = [&](Tape& tape, std::vector<Var>& leaves) {
      for (auto& [name, tensor] : params) leaves.push_back(tape.leaf(*tensor, true));
      Var logits = kind == ScorerKind::kTransE
                       ? transe_logits(tape, leaves[0], leaves[1], leaves[2])
                       : distmult_logits(tape, leaves[0], leaves[1], leaves[2]);
      return bce_from_logits(tape, logits, tape.constant(targets));
    };
    Tape tape;
    std::vector<Var> leaves;
    tape.backward(build(tape, leaves));
    std::vector<const Tensor*> grads;
    for (Var leaf : leaves) grads.push_back(&tape.grad(leaf));
    auto loss_fn = [&]() {
      Tape fresh;
      std::vector<Var> scratch;
      return fresh.value(build(fresh, scratch))[0];
    };
    auto res = grad_check(loss_fn, params, grads);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err <= 1e-4);
  }
}
