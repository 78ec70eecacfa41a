#include "cot/model.hpp"

#include "cot/corpus.hpp"
#include "cot/objectives.hpp"
#include "cot/ot.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <vector>

using namespace cot;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg = ModelConfig::desk(64);
  cfg.d = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.n_max = 24;
  return cfg;
}

const std::vector<int> kIds = {BOS, 9, 3, 11, 17, 4, 23, 30, 12};

// scalar loss builders for the finite-difference oracle
enum class Objective { kMle, kTransported, kSelfContrastive };

double loss_value(const ModelParameters& p, const std::vector<int>& ids, Objective which) {
  ad::Tape tape;
  TapeModel tm = TapeModel::bind(tape, p);
  TapeForward fw = forward_tape(tape, tm, ids);
  switch (which) {
    case Objective::kMle: {
      std::vector<int> next(ids.size(), 0);
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) next[i] = ids[i + 1];
      return ad::cross_entropy(fw.logits, next, default_loss_mask(ids.size())).value()(0, 0);
    }
    case Objective::kTransported: {
      ad::Var r_t = ad::slice_rows(fw.hidden, 1, 1);
      ad::Var r_s = ad::slice_rows(fw.hidden, 3, 5);
      ad::Var cost = cost_matrix_tape(r_t, r_s, 0.1);
      ad::Var plan = sinkhorn_tape(cost, uniform_weights(1), uniform_weights(5), 0.1, 5);
      ad::Var t_s = transport_tape(plan, r_t, tm.w_s, tm.b_s);
      return transported_contrastive_tape(r_s, t_s, 0.5).value()(0, 0);
    }
    default: {
      ad::Var r_s = ad::slice_rows(fw.hidden, 3, 5);
      return self_contrastive_tape(r_s, 0.5).value()(0, 0);
    }
  }
}

std::vector<Mat> loss_grads(const ModelParameters& p, const std::vector<int>& ids,
                            Objective which) {
  ad::Tape tape;
  TapeModel tm = TapeModel::bind(tape, p);
  TapeForward fw = forward_tape(tape, tm, ids);
  ad::Var loss{nullptr, -1};
  switch (which) {
    case Objective::kMle: {
      std::vector<int> next(ids.size(), 0);
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) next[i] = ids[i + 1];
      loss = ad::cross_entropy(fw.logits, next, default_loss_mask(ids.size()));
      break;
    }
    case Objective::kTransported: {
      ad::Var r_t = ad::slice_rows(fw.hidden, 1, 1);
      ad::Var r_s = ad::slice_rows(fw.hidden, 3, 5);
      ad::Var cost = cost_matrix_tape(r_t, r_s, 0.1);
      ad::Var plan = sinkhorn_tape(cost, uniform_weights(1), uniform_weights(5), 0.1, 5);
      ad::Var t_s = transport_tape(plan, r_t, tm.w_s, tm.b_s);
      loss = transported_contrastive_tape(r_s, t_s, 0.5);
      break;
    }
    default: {
      ad::Var r_s = ad::slice_rows(fw.hidden, 3, 5);
      loss = self_contrastive_tape(r_s, 0.5);
      break;
    }
  }
  tape.backward(loss.id);
  return tm.collect_grads(tape);
}

}  // namespace

TEST_CASE("forward produces the contracted shapes") {
  auto p = ModelParameters::init(small_cfg(), 1);
  auto out = forward(p, kIds);
  CHECK(out.last_hidden.rows() == static_cast<long>(kIds.size()));
  CHECK(out.last_hidden.cols() == 16);
  CHECK(out.logits.rows() == static_cast<long>(kIds.size()));
  CHECK(out.logits.cols() == 64);
  CHECK(out.last_hidden.allFinite());
  CHECK(out.logits.allFinite());
}

TEST_CASE("forward rejects out-of-range ids and over-long input") {
  auto p = ModelParameters::init(small_cfg(), 1);
  CHECK_THROWS_AS(forward(p, {0, 64}), InputError);
  CHECK_THROWS_AS(forward(p, std::vector<int>(25, 1)), InputError);
  CHECK_THROWS_AS(forward(p, {}), InputError);
}

TEST_CASE("causal invariance: perturbing position p leaves earlier logits unchanged exactly") {
  auto p = ModelParameters::init(small_cfg(), 2);
  auto base = forward(p, kIds);
  for (std::size_t pos = 1; pos < kIds.size(); ++pos) {
    auto ids = kIds;
    ids[pos] = (ids[pos] + 13) % 64;
    auto out = forward(p, ids);
    for (std::size_t i = 0; i < pos; ++i)
      CHECK(out.logits.row(i) == base.logits.row(i));
  }
}

TEST_CASE("forward is bit-identical across runs") {
  auto p = ModelParameters::init(small_cfg(), 3);
  auto a = forward(p, kIds);
  auto b = forward(p, kIds);
  CHECK(a.logits == b.logits);
  CHECK(a.last_hidden == b.last_hidden);
}

TEST_CASE("tape forward and the cached numeric path agree") {
  auto p = ModelParameters::init(small_cfg(), 4);
  auto numeric = forward(p, kIds);
  ad::Tape tape;
  TapeModel tm = TapeModel::bind(tape, p);
  TapeForward fw = forward_tape(tape, tm, p.cfg.n_max > 0 ? kIds : kIds);
  CHECK((fw.hidden.value() - numeric.last_hidden).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((fw.logits.value() - numeric.logits).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("mle_loss of all-zero logits is ln V") {
  Mat logits = Mat::Zero(3, 64);
  std::vector<int> ids = {1, 2, 3};
  CHECK(mle_loss(logits, ids, default_loss_mask(3)) ==
        Catch::Approx(std::log(64.0)).epsilon(1e-12));
}

TEST_CASE("mle_loss vanishes when the correct class dominates") {
  Mat logits = Mat::Zero(2, 8);
  std::vector<int> ids = {0, 5};
  logits(0, 5) = 1e4;  // position 0 predicts token ids[1] = 5
  CHECK(mle_loss(logits, ids, default_loss_mask(2)) < 1e-12);
}

TEST_CASE("mle_loss matches a hand computation on a 3-token sequence") {
  // logits row 0 = (1, 0, 0, 0), row 1 = (0, 2, 0, 1); targets 2 then 3
  Mat logits = Mat::Zero(3, 4);
  logits(0, 0) = 1.0;
  logits(1, 1) = 2.0;
  logits(1, 3) = 1.0;
  std::vector<int> ids = {0, 2, 3};
  const double l0 = std::log(std::exp(1.0) + 3.0) - 0.0;
  const double l1 = std::log(2.0 * std::exp(0.0) + std::exp(2.0) + std::exp(1.0)) - 1.0;
  const double want = (l0 + l1) / 2.0;
  CHECK(mle_loss(logits, ids, default_loss_mask(3)) == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("mle_loss rejects an all-false mask") {
  Mat logits = Mat::Zero(2, 4);
  CHECK_THROWS_AS(mle_loss(logits, {0, 1}, {false, false}), InputError);
}

TEST_CASE("predict_next picks the max and breaks ties to the lowest id") {
  Eigen::RowVectorXd one_hot = Eigen::RowVectorXd::Zero(5);
  one_hot(3) = 1.0;
  CHECK(predict_next(one_hot) == 3);
  CHECK(predict_next(Eigen::RowVectorXd::Zero(4)) == 0);
  Eigen::RowVectorXd row(3);
  row << 0.1, 0.9, 0.3;
  CHECK(predict_next(row) == 1);
}

TEST_CASE("gradient oracle: every parameter block passes finite differences") {
  // d=16, L=2, M=2, V=64; params scaled up so gradients are well above
  // finite-difference noise
  auto p = ModelParameters::init(small_cfg(), 5);
  p.for_each([](const std::string&, Mat& m) { m *= 5.0; });
  for (auto& lp : p.layers) {
    lp.ln1_g = Mat::Ones(1, 16);
    lp.ln2_g = Mat::Ones(1, 16);
  }

  for (Objective which :
       {Objective::kMle, Objective::kTransported, Objective::kSelfContrastive}) {
    auto grads = loss_grads(p, kIds, which);
    std::size_t bi = 0;
    double checked = 0;
    p.for_each([&](const std::string& name, Mat& m) {
      const Mat& g = grads[bi++];
      // a deterministic handful of entries per block keeps the suite quick;
      // the acceptance run sweeps every entry
      const long ri = std::max<long>(1, m.rows() / 2);
      const long cj = std::max<long>(1, m.cols() / 2);
      for (long i = 0; i < m.rows(); i += ri)
        for (long j = 0; j < m.cols(); j += cj) {
          const double h = 1e-5;
          const double orig = m(i, j);
          m(i, j) = orig + h;
          const double lp = loss_value(p, kIds, which);
          m(i, j) = orig - h;
          const double lm = loss_value(p, kIds, which);
          m(i, j) = orig;
          const double fd = (lp - lm) / (2 * h);
          const double diff = std::abs(fd - g(i, j));
          INFO("objective " << static_cast<int>(which) << " block " << name << " (" << i << ","
                            << j << ") ad=" << g(i, j) << " fd=" << fd);
          CHECK(diff <= std::max(1e-4 * std::max(std::abs(fd), std::abs(g(i, j))), 1e-8));
          ++checked;
        }
    });
    CHECK(checked > 0);
  }
}

TEST_CASE("session extension matches a from-scratch forward") {
  auto p = ModelParameters::init(small_cfg(), 6);
  ModelSession s(p);
  s.prefill({BOS, 7, 3, 21, 4});
  s.extend(33);
  s.extend(12);
  std::vector<int> full = {BOS, 7, 3, 21, 4, 33, 12};
  auto out = forward(p, full);
  CHECK((s.hidden() - out.last_hidden).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((s.logits_last() - out.logits.row(6)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("tied output mode reuses the token embedding") {
  ModelConfig cfg = small_cfg();
  cfg.tied_output = true;
  auto p = ModelParameters::init(cfg, 7);
  auto out = forward(p, kIds);
  CHECK(out.logits.cols() == cfg.vocab_size);
  const Mat expect = out.last_hidden * p.tok_emb.transpose();
  CHECK((out.logits - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("full-scale preset carries the published dimensions") {
  ModelConfig c = ModelConfig::full_scale();
  CHECK(c.d == 1024);
  CHECK(c.n_layers == 24);
  CHECK(c.n_heads == 16);
  CHECK(c.vocab_size == 50529);
  c.validate();
}
