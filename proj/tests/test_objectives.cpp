#include "cot/objectives.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <vector>

using namespace cot;

namespace {
Mat randm(long r, long c, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = rng.next_normal();
  return m;
}

// rows with pairwise cosine exactly `c` between distinct rows
Mat rows_with_cosine(long n, double c) {
  // construct via a common component plus orthogonal unit parts
  const double shared = std::sqrt(c);
  const double own = std::sqrt(1.0 - c);
  Mat m = Mat::Zero(n, n + 1);
  for (long i = 0; i < n; ++i) {
    m(i, 0) = shared;
    m(i, i + 1) = own;
  }
  return m;
}
}  // namespace

TEST_CASE("cosine basics") {
  Eigen::RowVectorXd u(2), v(2), w(2);
  u << 1.0, 0.0;
  v << 0.0, 1.0;
  w << 1.0, 1.0;
  CHECK(cosine(u, u) == Catch::Approx(1.0));
  CHECK(cosine(u, v) == Catch::Approx(0.0).margin(1e-15));
  CHECK(cosine(u, w) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(cosine(u, w) == Catch::Approx(0.70711).margin(1e-5));
  Eigen::RowVectorXd z = Eigen::RowVectorXd::Zero(2);
  CHECK_THROWS_AS(cosine(u, z), InputError);
}

TEST_CASE("transported loss is zero when T_S equals R_S") {
  Mat r = randm(5, 8, 1);
  CHECK(transported_contrastive_loss(r, r, 0.5) == 0.0);
}

TEST_CASE("transported loss with all cosines 0.2 and margin 0.5 is 0.3") {
  // pairs (u_i, t_i) engineered to have cosine exactly 0.2
  const long n = 4;
  Mat r = Mat::Zero(n, 2 * n), t = Mat::Zero(n, 2 * n);
  for (long i = 0; i < n; ++i) {
    r(i, 2 * i) = 1.0;
    t(i, 2 * i) = 0.2;
    t(i, 2 * i + 1) = std::sqrt(1.0 - 0.04);
  }
  CHECK(transported_contrastive_loss(r, t, 0.5) == Catch::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("transported loss is zero exactly at the hinge boundary") {
  const long n = 3;
  Mat r = Mat::Zero(n, 2 * n), t = Mat::Zero(n, 2 * n);
  for (long i = 0; i < n; ++i) {
    r(i, 2 * i) = 1.0;
    t(i, 2 * i) = 0.5;
    t(i, 2 * i + 1) = std::sqrt(1.0 - 0.25);
  }
  CHECK(transported_contrastive_loss(r, t, 0.5) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("self-contrastive loss of mutually orthogonal rows is zero") {
  Mat r = Mat::Identity(4, 4);
  CHECK(self_contrastive_loss(r, 0.5) == 0.0);
}

TEST_CASE("self-contrastive loss of two rows with cosine 0.8 is 0.3") {
  Mat r = rows_with_cosine(2, 0.8);
  CHECK(self_contrastive_loss(r, 0.5) == Catch::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("self-contrastive loss of identical rows equals the margin") {
  Mat r(3, 4);
  r.row(0) << 1.0, 2.0, 3.0, 4.0;
  r.row(1) = r.row(0);
  r.row(2) = r.row(0);
  CHECK(self_contrastive_loss(r, 0.5) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("self-contrastive loss requires at least two rows") {
  CHECK_THROWS_AS(self_contrastive_loss(randm(1, 4, 2), 0.5), InputError);
}

TEST_CASE("both contrastive losses are non-negative on random input") {
  for (std::uint64_t s = 1; s <= 20; ++s) {
    Mat a = randm(5, 6, s), b = randm(5, 6, s + 100);
    CHECK(transported_contrastive_loss(a, b, 0.5) >= 0.0);
    CHECK(self_contrastive_loss(a, 0.5) >= 0.0);
  }
}

TEST_CASE("self-contrastive loss is invariant to uniform positive row scaling") {
  Mat r = randm(4, 7, 3);
  const double base = self_contrastive_loss(r, 0.5);
  CHECK(self_contrastive_loss(Mat(3.7 * r), 0.5) == Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("self-contrastive loss is zero iff off-diagonal cosines stay below 1 - rho2") {
  // cosine 0.45 < 1 - 0.5 -> zero; cosine 0.55 > 0.5 -> positive
  CHECK(self_contrastive_loss(rows_with_cosine(3, 0.45), 0.5) == 0.0);
  CHECK(self_contrastive_loss(rows_with_cosine(3, 0.55), 0.5) > 0.0);
}

TEST_CASE("transported loss is zero iff every paired cosine reaches rho1") {
  const long n = 3;
  Mat r = Mat::Zero(n, 2 * n), above = Mat::Zero(n, 2 * n), below = Mat::Zero(n, 2 * n);
  for (long i = 0; i < n; ++i) {
    r(i, 2 * i) = 1.0;
    above(i, 2 * i) = 0.6;
    above(i, 2 * i + 1) = std::sqrt(1.0 - 0.36);
    below(i, 2 * i) = 0.4;
    below(i, 2 * i + 1) = std::sqrt(1.0 - 0.16);
  }
  CHECK(transported_contrastive_loss(r, above, 0.5) == 0.0);
  CHECK(transported_contrastive_loss(r, below, 0.5) > 0.0);
}

TEST_CASE("losses are invariant under a shared row permutation") {
  Mat a = randm(6, 5, 4), b = randm(6, 5, 5);
  std::vector<long> perm = {3, 0, 5, 1, 4, 2};
  Mat ap(6, 5), bp(6, 5);
  for (long i = 0; i < 6; ++i) {
    ap.row(i) = a.row(perm[i]);
    bp.row(i) = b.row(perm[i]);
  }
  CHECK(transported_contrastive_loss(ap, bp, 0.5) ==
        Catch::Approx(transported_contrastive_loss(a, b, 0.5)).epsilon(1e-12));
  CHECK(self_contrastive_loss(ap, 0.5) ==
        Catch::Approx(self_contrastive_loss(a, 0.5)).epsilon(1e-12));
}

TEST_CASE("tape losses equal the numeric losses") {
  Mat a = randm(5, 6, 6), b = randm(5, 6, 7);
  ad::Tape tape;
  ad::Var va = ad::leaf(tape, a), vb = ad::leaf(tape, b);
  CHECK(transported_contrastive_tape(va, vb, 0.5).value()(0, 0) ==
        Catch::Approx(transported_contrastive_loss(a, b, 0.5)).epsilon(1e-12));
  CHECK(self_contrastive_tape(va, 0.5).value()(0, 0) ==
        Catch::Approx(self_contrastive_loss(a, 0.5)).epsilon(1e-12));
}

TEST_CASE("combined_loss mixes with the betas") {
  auto lb = combined_loss(1.0, 2.0, 3.0, {0.6, 0.4, 0.2});
  CHECK(lb.total == Catch::Approx(2.0).epsilon(1e-12));
  CHECK(std::abs(lb.total - (0.6 * lb.mle + 0.4 * lb.transported +
                             0.2 * lb.self_contrastive)) < 1e-12);
  CHECK(combined_loss(7.5, 9.0, 11.0, {1.0, 0.0, 0.0}).total == 7.5);
  CHECK(combined_loss(0.0, 0.0, 0.0, {0.6, 0.4, 0.2}).total == 0.0);
}

TEST_CASE("margins validate their range") {
  CHECK_THROWS_AS((Margins{-0.1, 0.5}.validate()), ConfigError);
  CHECK_THROWS_AS((Margins{0.5, 2.5}.validate()), ConfigError);
  Margins{0.5, 0.5}.validate();
}
