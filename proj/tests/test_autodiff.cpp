#include "cot/autodiff.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <vector>

using namespace cot;
using ad::Tape;
using ad::Var;

namespace {

// Central finite differences against the tape gradient for a scalar-valued
// graph over a set of leaf matrices.
void check_grad(const std::vector<Mat>& inputs,
                const std::function<Var(Tape&, std::vector<Var>&)>& build, double tol = 2e-6) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Mat& m : inputs) leaves.push_back(ad::leaf(tape, m));
  Var loss = build(tape, leaves);
  REQUIRE(loss.value().size() == 1);
  tape.backward(loss.id);

  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Mat& g = tape.grad(leaves[k].id);
    for (long i = 0; i < inputs[k].rows(); ++i)
      for (long j = 0; j < inputs[k].cols(); ++j) {
        auto eval = [&](double delta) {
          Tape t2;
          std::vector<Mat> shifted = inputs;
          shifted[k](i, j) += delta;
          std::vector<Var> l2;
          for (const Mat& m : shifted) l2.push_back(ad::leaf(t2, m));
          return build(t2, l2).value()(0, 0);
        };
        const double fd = (eval(h) - eval(-h)) / (2 * h);
        INFO("input " << k << " entry (" << i << "," << j << ") ad=" << g(i, j)
                      << " fd=" << fd);
        CHECK(std::abs(fd - g(i, j)) <=
              tol * std::max({1.0, std::abs(fd), std::abs(g(i, j))}));
      }
  }
}

Mat randm(long r, long c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Mat m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = scale * rng.next_normal();
  return m;
}

}  // namespace

TEST_CASE("gradients of elementwise and matmul ops") {
  const Mat a = randm(3, 4, 1), b = randm(3, 4, 2), c = randm(4, 2, 3);
  check_grad({a, b, c}, [](Tape&, std::vector<Var>& v) {
    Var x = ad::cmul(ad::add(v[0], v[1]), ad::sub(v[0], ad::scale(v[1], 0.3)));
    return ad::sum_all(ad::matmul(x, v[2]));
  });
}

TEST_CASE("gradients of transposed matmuls") {
  const Mat a = randm(3, 4, 4), b = randm(5, 4, 5), c = randm(3, 5, 6);
  check_grad({a, b, c}, [](Tape&, std::vector<Var>& v) {
    Var nt = ad::matmul_nt(v[0], v[1]);        // 3 x 5
    Var tn = ad::matmul_tn(v[2], nt);          // 5 x 5
    return ad::mean_all(ad::cmul(tn, tn));
  });
}

TEST_CASE("gradients of cdiv, exp, log, sqrt") {
  Mat a = randm(2, 3, 7).array().abs().matrix() + Mat::Constant(2, 3, 0.5);
  Mat b = randm(2, 3, 8).array().abs().matrix() + Mat::Constant(2, 3, 0.5);
  check_grad({a, b}, [](Tape&, std::vector<Var>& v) {
    Var q = ad::cdiv(ad::sqrt_(v[0]), ad::exp_(ad::scale(v[1], 0.3)));
    return ad::sum_all(ad::log_(q));
  });
}

TEST_CASE("gradients of broadcast and reduction ops") {
  const Mat a = randm(4, 3, 9);
  const Mat r = randm(1, 3, 10);
  check_grad({a, r}, [](Tape&, std::vector<Var>& v) {
    Var x = ad::add_rowvec(v[0], v[1]);
    Var cols = ad::sum_cols(x);                      // 1 x 3
    Var rows = ad::sum_rows(ad::cmul(x, x));         // 4 x 1
    Var y = ad::cmul(ad::bcast_row(cols, 4), ad::bcast_col(rows, 3));
    return ad::mean_all(y);
  });
}

TEST_CASE("gradients of relu and gelu") {
  const Mat a = randm(3, 5, 11);
  check_grad({a}, [](Tape&, std::vector<Var>& v) {
    return ad::sum_all(ad::add(ad::relu(v[0]), ad::gelu(ad::scale(v[0], 1.3))));
  });
}

TEST_CASE("gradients of softmax_rows") {
  const Mat a = randm(3, 6, 12);
  const Mat w = randm(3, 6, 13);
  check_grad({a, w}, [](Tape&, std::vector<Var>& v) {
    return ad::sum_all(ad::cmul(ad::softmax_rows(v[0]), v[1]));
  });
}

TEST_CASE("softmax rows sum to one") {
  Tape tape;
  Var a = ad::leaf(tape, randm(5, 40, 14, 3.0));
  Var s = ad::softmax_rows(a);
  for (long i = 0; i < s.rows(); ++i)
    CHECK(std::abs(s.value().row(i).sum() - 1.0) < 1e-9);
}

TEST_CASE("gradients of logsumexp reductions") {
  const Mat a = randm(3, 5, 15);
  check_grad({a}, [](Tape&, std::vector<Var>& v) {
    Var lr = ad::logsumexp_rows(v[0]);  // 3 x 1
    Var lc = ad::logsumexp_cols(v[0]);  // 1 x 5
    return ad::add(ad::sum_all(ad::cmul(lr, lr)), ad::sum_all(ad::exp_(lc)));
  });
}

TEST_CASE("gradients of layer_norm") {
  const Mat x = randm(4, 8, 16);
  const Mat g = randm(1, 8, 17, 0.5);
  const Mat b = randm(1, 8, 18, 0.5);
  check_grad({x, g, b}, [](Tape&, std::vector<Var>& v) {
    Var y = ad::layer_norm(v[0], v[1], v[2]);
    return ad::mean_all(ad::cmul(y, y));
  });
}

TEST_CASE("layer_norm output rows have zero mean and unit variance pre gain/bias") {
  Tape tape;
  Var x = ad::leaf(tape, randm(6, 32, 19));
  Var ones = ad::leaf(tape, Mat::Ones(1, 32), false);
  Var zeros = ad::leaf(tape, Mat::Zero(1, 32), false);
  Var y = ad::layer_norm(x, ones, zeros);
  for (long i = 0; i < y.rows(); ++i) {
    const double mean = y.value().row(i).mean();
    const double var = (y.value().row(i).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("gradients of gather, slice and concat") {
  const Mat table = randm(6, 4, 20);
  check_grad({table}, [](Tape&, std::vector<Var>& v) {
    Var g = ad::gather_rows(v[0], {0, 3, 3, 5});
    Var top = ad::slice_rows(g, 0, 2);
    Var bot = ad::slice_rows(g, 2, 2);
    Var cat = ad::concat_rows({top, bot, top});
    Var wide = ad::concat_cols({cat, cat});
    return ad::mean_all(ad::cmul(wide, wide));
  });
}

TEST_CASE("gradients of cross_entropy") {
  const Mat logits = randm(4, 7, 21, 2.0);
  check_grad({logits}, [](Tape&, std::vector<Var>& v) {
    return ad::cross_entropy(v[0], {1, 4, 0, 6}, {true, true, true, false});
  });
}

TEST_CASE("cross_entropy rejects an all-false mask") {
  Tape tape;
  Var logits = ad::leaf(tape, randm(3, 4, 22));
  CHECK_THROWS_AS(ad::cross_entropy(logits, {0, 0, 0}, {false, false, false}), InputError);
}

TEST_CASE("gradients of cosine_rows and l2 normalization") {
  const Mat a = randm(4, 6, 23);
  const Mat b = randm(4, 6, 24);
  check_grad({a, b}, [](Tape&, std::vector<Var>& v) {
    Var cos = ad::cosine_rows(v[0], v[1]);
    Var n = ad::l2_normalize_rows(v[0]);
    return ad::add(ad::sum_all(ad::cmul(cos, cos)), ad::mean_all(n));
  });
}

TEST_CASE("backward accumulates linearly over a sum of losses") {
  const Mat a = randm(3, 3, 25);
  Tape t1;
  Var v1 = ad::leaf(t1, a);
  Var l1 = ad::sum_all(ad::cmul(v1, v1));
  t1.backward(l1.id);

  Tape t2;
  Var v2 = ad::leaf(t2, a);
  Var l2 = ad::mean_all(ad::exp_(v2));
  t2.backward(l2.id);

  Tape t3;
  Var v3 = ad::leaf(t3, a);
  Var l3 = ad::add(ad::sum_all(ad::cmul(v3, v3)), ad::mean_all(ad::exp_(v3)));
  t3.backward(l3.id);

  const Mat expect = t1.grad(v1.id) + t2.grad(v2.id);
  CHECK((t3.grad(v3.id) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a loss independent of a leaf leaves its gradient exactly zero") {
  Tape tape;
  Var used = ad::leaf(tape, randm(2, 2, 26));
  Var unused = ad::leaf(tape, randm(2, 2, 27));
  Var loss = ad::sum_all(ad::cmul(used, used));
  tape.backward(loss.id);
  CHECK(tape.grad(unused.id).cwiseAbs().maxCoeff() == 0.0);
}
