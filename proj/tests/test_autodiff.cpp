#include <cmath>
#include <memory>

#include "doctest.h"
#include "motret/autodiff.hpp"
#include "motret/gradcheck.hpp"

using namespace motret;
using namespace motret::ad;

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

// Convenience: check d sum(f(x...)) / dx for every leaf coordinate.
double check_op(const LossFn& fn, std::vector<Var> leaves) {
  std::vector<std::string> names;
  for (size_t i = 0; i < leaves.size(); ++i) names.push_back("leaf" + std::to_string(i));
  return grad_check(fn, leaves, names).max_rel_err;
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Var a = Var::constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = Var::constant(Tensor({2, 2}, {10, 20, 30, 40}));
  CHECK(add(a, b).value().at(1, 1) == 44.0);
  CHECK(sub(b, a).value().at(0, 0) == 9.0);
  CHECK(mul(a, b).value().at(0, 1) == 40.0);
  CHECK(scale(a, -2.0).value().at(1, 0) == -6.0);
  CHECK(add_scalar(a, 0.5).value().at(0, 0) == 1.5);
  CHECK(neg(a).value().at(0, 0) == -1.0);
  CHECK(vabs(neg(a)).value().at(1, 1) == 4.0);
}

TEST_CASE("quadratic gradient is exact to first order") {
  Rng rng(11);
  std::vector<Var> leaves{Var::leaf(rand_tensor({6}, rng))};
  std::vector<std::string> names{"x"};
  auto fn = [](const std::vector<Var>& ls) { return sum_all(mul(ls[0], ls[0])); };
  auto res = grad_check(fn, leaves, names, 1e-5);
  CHECK(res.max_rel_err < 1e-8);
  // analytic gradient of sum(x^2) is 2x
  for (long i = 0; i < 6; ++i)
    CHECK(leaves[0].grad()[i] == doctest::Approx(2.0 * leaves[0].value()[i]).epsilon(1e-12));
}

TEST_CASE("gradients: arithmetic and activations") {
  Rng rng(42);
  Var x = Var::leaf(rand_tensor({3, 4}, rng));
  Var y = Var::leaf(rand_tensor({3, 4}, rng));

  CHECK(check_op([](const std::vector<Var>& l) { return sum_all(mul(add(l[0], l[1]), sub(l[0], l[1]))); },
                 {x, y}) < 1e-6);
  CHECK(check_op([](const std::vector<Var>& l) { return sum_all(gelu(l[0])); }, {x}) < 1e-6);
  CHECK(check_op([](const std::vector<Var>& l) { return sum_all(vexp(scale(l[0], 0.3))); }, {x}) < 1e-6);
  CHECK(check_op([](const std::vector<Var>& l) { return sum_all(vlog(add_scalar(vabs(l[0]), 1.0))); },
                 {x}) < 1e-6);
  CHECK(check_op([](const std::vector<Var>& l) {
          return sum_all(pow_scalar(add_scalar(mul(l[0], l[0]), 0.5), -0.5));
        },
                 {x}) < 1e-6);

  Var s = Var::leaf(Tensor::scalar(0.7));
  CHECK(check_op([](const std::vector<Var>& l) { return sum_all(mul_scalar_var(l[0], l[1])); }, {x, s}) <
        1e-6);
}

TEST_CASE("gradients: matmul and bmm") {
  Rng rng(7);
  Var a = Var::leaf(rand_tensor({4, 3}, rng));
  Var b = Var::leaf(rand_tensor({3, 5}, rng));
  CHECK(check_op([](const std::vector<Var>& l) { return sum_all(matmul(l[0], l[1])); }, {a, b}) < 1e-6);

  Var a3 = Var::leaf(rand_tensor({2, 4, 3}, rng));
  CHECK(check_op([](const std::vector<Var>& l) { return sum_all(matmul(l[0], l[1])); }, {a3, b}) < 1e-6);

  Var p = Var::leaf(rand_tensor({2, 3, 4}, rng));
  Var q = Var::leaf(rand_tensor({2, 4, 2}, rng));
  CHECK(check_op([](const std::vector<Var>& l) {
          return sum_all(mul(bmm(l[0], l[1]), bmm(l[0], l[1])));
        },
                 {p, q}) < 1e-6);
}

TEST_CASE("matmul forward against straight loops") {
  Rng rng(3);
  Tensor av = rand_tensor({3, 4}, rng), bv = rand_tensor({4, 2}, rng);
  Tensor want({3, 2});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += av.at(i, k) * bv.at(k, j);
      want.at(i, j) = s;
    }
  Tensor got = matmul(Var::constant(av), Var::constant(bv)).value();
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("gradients: shape and indexing ops") {
  Rng rng(19);
  Var x = Var::leaf(rand_tensor({2, 5, 3}, rng));

  auto sq = [](Var v) { return sum_all(mul(v, v)); };
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(transpose2(l[0])); }, {x}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(permute01(l[0])); }, {x}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(slice_dim1(l[0], 1, 3)); }, {x}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(reshape(l[0], {5, 6})); }, {x}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) {
          return sq(concat_dim1({slice_dim1(l[0], 2, 3), l[0]}));
        },
                 {x}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(index_dim1(l[0], {4, 0, 0, 2})); }, {x}) <
        1e-6);

  Var t = Var::leaf(rand_tensor({4, 6}, rng));
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(broadcast0(l[0], 3)); }, {t}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(gather_rows(l[0], {1, 3, 1, 0})); }, {t}) <
        1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(diag(matmul(l[0], transpose2(l[0])))); },
                 {t}) < 1e-6);

  Var r0 = Var::leaf(rand_tensor({6}, rng));
  Var r1 = Var::leaf(rand_tensor({6}, rng));
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(stack_rows({l[0], l[1], l[0]})); },
                 {r0, r1}) < 1e-6);
}

TEST_CASE("heads split/merge round trip") {
  Rng rng(5);
  Tensor x = rand_tensor({3, 4, 8}, rng);
  Var v = Var::leaf(x);
  Var rt = heads_merge(heads_split(v, 4), 4);
  CHECK(bit_equal(rt.value(), x));
  CHECK(check_op([](const std::vector<Var>& l) {
          Var h = heads_split(l[0], 2);
          return sum_all(mul(h, h));
        },
                 {v}) < 1e-6);
}

TEST_CASE("gradients: reductions and broadcast arithmetic") {
  Rng rng(23);
  Var x = Var::leaf(rand_tensor({4, 5}, rng));
  Var r = Var::leaf(rand_tensor({5}, rng));
  Var c = Var::leaf(rand_tensor({4}, rng));

  auto sq = [](Var v) { return sum_all(mul(v, v)); };
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(row_sum(l[0])); }, {x}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(add_rowvec(l[0], l[1])); }, {x, r}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(mul_colvec(l[0], l[1])); }, {x, c}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return mean_all(mul(l[0], l[0])); }, {x}) < 1e-6);

  std::vector<uint8_t> keep{1, 0, 1, 1};
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(masked_mean0(l[0], keep)); }, {x}) < 1e-6);

  Var x3 = Var::leaf(rand_tensor({4, 2, 3}, rng));
  CHECK(check_op([&](const std::vector<Var>& l) { return sq(masked_mean0(l[0], keep)); }, {x3}) < 1e-6);
}

TEST_CASE("masked_mean0 ignores masked slices") {
  Tensor x({3, 2}, {1, 2, 100, 200, 3, 4});
  std::vector<uint8_t> keep{1, 0, 1};
  Tensor y = masked_mean0(Var::constant(x), keep).value();
  CHECK(y[0] == doctest::Approx(2.0));
  CHECK(y[1] == doctest::Approx(3.0));
}

TEST_CASE("gradients: softmax family and layer norm") {
  Rng rng(31);
  Var x = Var::leaf(rand_tensor({3, 6}, rng, 2.0));
  Var g = Var::leaf(rand_tensor({6}, rng));
  Var b = Var::leaf(rand_tensor({6}, rng));
  Var w = Var::constant(rand_tensor({3, 6}, rng));

  auto wsum = [&](Var v) { return sum_all(mul(v, w)); };
  CHECK(check_op([&](const std::vector<Var>& l) { return wsum(softmax_lastdim(l[0])); }, {x}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return wsum(log_softmax_lastdim(l[0])); }, {x}) < 1e-6);
  CHECK(check_op([&](const std::vector<Var>& l) { return wsum(layer_norm(l[0], l[1], l[2])); },
                 {x, g, b}) < 1e-5);

  Tensor sm = softmax_lastdim(x).value();
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 6; ++j) {
      CHECK(sm.at(i, j) > 0.0);
      s += sm.at(i, j);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor lsm = log_softmax_lastdim(x).value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 6; ++j) CHECK(std::exp(lsm.at(i, j)) == doctest::Approx(sm.at(i, j)));
}

TEST_CASE("gradient accumulates across graph reuse") {
  Var x = Var::leaf(Tensor::scalar(3.0));
  Var y = add(mul(x, x), mul(x, x));  // 2x^2, dy/dx = 4x = 12
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("dropout semantics") {
  Rng rng(9);
  Tensor x = rand_tensor({50, 10}, rng);
  Var v = Var::leaf(x);

  Rng d0(1234);
  CHECK(bit_equal(dropout(v, 0.0, d0).value(), x));  // identity at rate 0

  Rng d1(77), d2(77);
  Tensor a = dropout(v, 0.4, d1).value();
  Tensor b = dropout(v, 0.4, d2).value();
  CHECK(bit_equal(a, b));  // same seed, same mask

  int zeros = 0;
  for (long i = 0; i < a.numel(); ++i) {
    if (a[i] == 0.0) {
      ++zeros;
    } else {
      CHECK(a[i] == doctest::Approx(x[i] / 0.6));
    }
  }
  CHECK(zeros > 100);
  CHECK(zeros < 300);
}

TEST_CASE("log of non-positive input raises") {
  Var x = Var::constant(Tensor({2}, {1.0, 0.0}));
  CHECK_THROWS_AS(vlog(x), NumericError);
}

TEST_CASE("composite graph gradient: attention-like block") {
  Rng rng(101);
  Var q = Var::leaf(rand_tensor({2, 3, 4}, rng, 0.5));
  Var k = Var::leaf(rand_tensor({2, 3, 4}, rng, 0.5));
  Var v = Var::leaf(rand_tensor({2, 3, 4}, rng, 0.5));
  auto fn = [](const std::vector<Var>& l) {
    Var scores = scale(bmm(l[0], transpose2(l[1])), 0.5);
    Var att = softmax_lastdim(scores);
    Var ctx = bmm(att, l[2]);
    return sum_all(mul(ctx, ctx));
  };
  CHECK(check_op(fn, {q, k, v}) < 1e-6);
}

TEST_CASE("checker flags a deliberately inconsistent derivative") {
  // The first invocation builds the graph used for the analytic gradient; all
  // later invocations feed the finite-difference probes. Injecting an extra
  // linear term only into the probe evaluations makes the numeric derivative
  // of coordinate 0 differ by 0.5, which the checker must report.
  Rng rng(5);
  Var x = Var::leaf(rand_tensor({3}, rng, 1.0));
  auto calls = std::make_shared<int>(0);
  auto fn = [calls](const std::vector<Var>& l) {
    ++*calls;
    Var base = sum_all(mul(l[0], l[0]));
    if (*calls == 1) return base;
    Var first = sum_all(mul(l[0], Var::constant(Tensor({3}, {0.5, 0.0, 0.0}))));
    return add(base, first);
  };
  std::vector<Var> leaves{x};
  GradCheckResult res = grad_check(fn, leaves, {"x"});
  CHECK_FALSE(res.ok(1e-4));
  CHECK(res.worst.coord == 0);
  CHECK(std::abs(res.worst.analytic - res.worst.numeric) > 0.4);
}
