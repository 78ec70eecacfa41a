#pragma once

#include "cot/autodiff.hpp"
#include "cot/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace cot {

inline constexpr double kLayerNormEps = 1e-9;
inline constexpr double kAttnMaskValue = -1e9;  // additive pre-softmax mask

struct ModelConfig {
  int d = 64;
  int n_layers = 2;
  int n_heads = 4;
  int vocab_size = 0;
  int n_max = 128;
  int d_ff = 256;
  bool tied_output = false;

  int head_dim() const { return d / n_heads; }

  void validate() const {
    if (d <= 0 || n_layers <= 0 || n_heads <= 0 || vocab_size <= 0 || n_max <= 0 || d_ff <= 0)
      throw ConfigError("ModelConfig: all dimensions must be positive");
    if (d % n_heads != 0) throw ConfigError("ModelConfig: d must be divisible by n_heads");
    if (d_ff < d) throw ConfigError("ModelConfig: d_ff must be >= d");
  }

  static ModelConfig desk(int vocab) {
    ModelConfig c;
    c.vocab_size = vocab;
    return c;
  }

  // Full-size configuration kept for reference; tests never instantiate it.
  static ModelConfig full_scale() {
    ModelConfig c;
    c.d = 1024;
    c.n_layers = 24;
    c.n_heads = 16;
    c.vocab_size = 50529;
    c.n_max = 1024;
    c.d_ff = 4096;
    return c;
  }
};

struct LayerParams {
  std::vector<Mat> wq, wk, wv;  // per head, d x d_m
  Mat wc;                       // d x d
  Mat ln1_g, ln1_b;             // 1 x d
  Mat ff1, ff1_b;               // d x d_ff, 1 x d_ff
  Mat ff2, ff2_b;               // d_ff x d, 1 x d
  Mat ln2_g, ln2_b;             // 1 x d
};

// All trainable arrays. Enumeration order (for_each) is fixed and shared by
// the optimizer state, gradient buffers and the checkpoint format.
struct ModelParameters {
  ModelConfig cfg;
  Mat tok_emb;  // V x d
  Mat pos_emb;  // n_max x d
  std::vector<LayerParams> layers;
  Mat w_pre;  // d x V (absent when tied_output)
  Mat w_s;    // d x d, transported-representation projection
  Mat b_s;    // 1 x d

  template <typename F>
  void for_each(F&& f) {
    f("tok_emb", tok_emb);
    f("pos_emb", pos_emb);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      LayerParams& lp = layers[l];
      for (std::size_t h = 0; h < lp.wq.size(); ++h) {
        const std::string hp = p + "heads." + std::to_string(h) + ".";
        f(hp + "wq", lp.wq[h]);
        f(hp + "wk", lp.wk[h]);
        f(hp + "wv", lp.wv[h]);
      }
      f(p + "wc", lp.wc);
      f(p + "ln1_g", lp.ln1_g);
      f(p + "ln1_b", lp.ln1_b);
      f(p + "ff1", lp.ff1);
      f(p + "ff1_b", lp.ff1_b);
      f(p + "ff2", lp.ff2);
      f(p + "ff2_b", lp.ff2_b);
      f(p + "ln2_g", lp.ln2_g);
      f(p + "ln2_b", lp.ln2_b);
    }
    if (!cfg.tied_output) f("w_pre", w_pre);
    f("w_s", w_s);
    f("b_s", b_s);
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParameters*>(this)->for_each(
        [&](const std::string& name, Mat& m) { f(name, static_cast<const Mat&>(m)); });
  }

  int num_blocks() const {
    int n = 0;
    for_each([&](const std::string&, const Mat&) { ++n; });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Mat& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  static ModelParameters init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParameters p;
    p.cfg = cfg;
    Rng rng(seed);
    auto randn = [&](long r, long c) {
      Mat m(r, c);
      for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) m(i, j) = 0.02 * rng.next_normal();
      return m;
    };
    const int dm = cfg.head_dim();
    p.tok_emb = randn(cfg.vocab_size, cfg.d);
    p.pos_emb = randn(cfg.n_max, cfg.d);
    p.layers.resize(cfg.n_layers);
    for (auto& lp : p.layers) {
      lp.wq.resize(cfg.n_heads);
      lp.wk.resize(cfg.n_heads);
      lp.wv.resize(cfg.n_heads);
      for (int h = 0; h < cfg.n_heads; ++h) {
        lp.wq[h] = randn(cfg.d, dm);
        lp.wk[h] = randn(cfg.d, dm);
        lp.wv[h] = randn(cfg.d, dm);
      }
      lp.wc = randn(cfg.d, cfg.d);
      lp.ln1_g = Mat::Ones(1, cfg.d);
      lp.ln1_b = Mat::Zero(1, cfg.d);
      lp.ff1 = randn(cfg.d, cfg.d_ff);
      lp.ff1_b = Mat::Zero(1, cfg.d_ff);
      lp.ff2 = randn(cfg.d_ff, cfg.d);
      lp.ff2_b = Mat::Zero(1, cfg.d);
      lp.ln2_g = Mat::Ones(1, cfg.d);
      lp.ln2_b = Mat::Zero(1, cfg.d);
    }
    p.w_pre = cfg.tied_output ? Mat() : randn(cfg.d, cfg.vocab_size);
    p.w_s = randn(cfg.d, cfg.d);
    p.b_s = Mat::Zero(1, cfg.d);
    return p;
  }
};

inline void check_input_ids(const ModelConfig& cfg, const std::vector<int>& ids) {
  if (ids.empty()) throw InputError("model: empty input sequence");
  if (static_cast<int>(ids.size()) > cfg.n_max)
    throw InputError("model: input length " + std::to_string(ids.size()) + " exceeds n_max " +
                     std::to_string(cfg.n_max));
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw InputError("model: token id " + std::to_string(id) + " out of vocabulary range");
}

// ---------------------------------------------------------------------------
// Tape-bound model: parameter leaves on a tape, plus the forward graph.
// ---------------------------------------------------------------------------

struct TapeLayer {
  std::vector<ad::Var> wq, wk, wv;
  ad::Var wc, ln1_g, ln1_b, ff1, ff1_b, ff2, ff2_b, ln2_g, ln2_b;
};

struct TapeModel {
  ModelConfig cfg;
  std::vector<std::string> names;  // for_each order
  std::vector<ad::Var> leaves;     // aligned with names
  ad::Var tok_emb, pos_emb, w_pre, w_s, b_s;
  std::vector<TapeLayer> layers;

  static TapeModel bind(ad::Tape& tape, const ModelParameters& params) {
    TapeModel m;
    m.cfg = params.cfg;
    std::vector<ad::Var> ordered;
    params.for_each([&](const std::string& name, const Mat& v) {
      ad::Var var = ad::leaf(tape, v, true);
      m.names.push_back(name);
      m.leaves.push_back(var);
      ordered.push_back(var);
    });
    // re-walk enumeration order to wire the named handles
    std::size_t i = 0;
    m.tok_emb = ordered[i++];
    m.pos_emb = ordered[i++];
    m.layers.resize(params.cfg.n_layers);
    for (int l = 0; l < params.cfg.n_layers; ++l) {
      TapeLayer& tl = m.layers[l];
      tl.wq.resize(params.cfg.n_heads);
      tl.wk.resize(params.cfg.n_heads);
      tl.wv.resize(params.cfg.n_heads);
      for (int h = 0; h < params.cfg.n_heads; ++h) {
        tl.wq[h] = ordered[i++];
        tl.wk[h] = ordered[i++];
        tl.wv[h] = ordered[i++];
      }
      tl.wc = ordered[i++];
      tl.ln1_g = ordered[i++];
      tl.ln1_b = ordered[i++];
      tl.ff1 = ordered[i++];
      tl.ff1_b = ordered[i++];
      tl.ff2 = ordered[i++];
      tl.ff2_b = ordered[i++];
      tl.ln2_g = ordered[i++];
      tl.ln2_b = ordered[i++];
    }
    if (!params.cfg.tied_output) m.w_pre = ordered[i++];
    m.w_s = ordered[i++];
    m.b_s = ordered[i++];
    return m;
  }

  // Gradients in for_each order; zero matrices for untouched blocks.
  std::vector<Mat> collect_grads(ad::Tape& tape) const {
    std::vector<Mat> out;
    out.reserve(leaves.size());
    for (const ad::Var& v : leaves) out.push_back(tape.grad(v.id));
    return out;
  }
};

struct TapeForward {
  ad::Var hidden;  // N x d, last layer
  ad::Var logits;  // N x V
};

// Masked multi-head causal attention, residual + layer norm, feed-forward
// (GELU), residual + layer norm, stacked n_layers times; logits through the
// output projection.
inline TapeForward forward_tape(ad::Tape& tape, const TapeModel& m, const std::vector<int>& ids) {
  check_input_ids(m.cfg, ids);
  const long n = static_cast<long>(ids.size());
  const int dm = m.cfg.head_dim();
  const double inv_sqrt_dm = 1.0 / std::sqrt(static_cast<double>(dm));

  std::vector<int> pos(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) pos[i] = static_cast<int>(i);
  ad::Var h = ad::add(ad::gather_rows(m.tok_emb, ids), ad::gather_rows(m.pos_emb, pos));

  Mat mask = Mat::Zero(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = i + 1; j < n; ++j) mask(i, j) = kAttnMaskValue;

  for (const TapeLayer& lp : m.layers) {
    std::vector<ad::Var> heads;
    heads.reserve(lp.wq.size());
    for (std::size_t j = 0; j < lp.wq.size(); ++j) {
      ad::Var q = ad::matmul(h, lp.wq[j]);
      ad::Var k = ad::matmul(h, lp.wk[j]);
      ad::Var v = ad::matmul(h, lp.wv[j]);
      ad::Var scores = ad::add_const(ad::scale(ad::matmul_nt(q, k), inv_sqrt_dm), mask);
      ad::Var w = ad::softmax_rows(scores);
      heads.push_back(ad::matmul(w, v));
    }
    ad::Var mh = ad::matmul(ad::concat_cols(heads), lp.wc);
    ad::Var e = ad::layer_norm(ad::add(mh, h), lp.ln1_g, lp.ln1_b, kLayerNormEps);
    ad::Var f = ad::add_rowvec(
        ad::matmul(ad::gelu(ad::add_rowvec(ad::matmul(e, lp.ff1), lp.ff1_b)), lp.ff2), lp.ff2_b);
    h = ad::layer_norm(ad::add(f, e), lp.ln2_g, lp.ln2_b, kLayerNormEps);
  }

  ad::Var logits =
      m.cfg.tied_output ? ad::matmul_nt(h, m.tok_emb) : ad::matmul(h, m.w_pre);
  return TapeForward{h, logits};
}

// ---------------------------------------------------------------------------
// Numeric inference path with per-layer K/V caches. Appending a token only
// computes that token's rows, which must agree with a full recompute.
// ---------------------------------------------------------------------------

struct ForwardOutput {
  Mat last_hidden;  // N x d
  Mat logits;       // N x V
};

class ModelSession {
 public:
  explicit ModelSession(const ModelParameters& params) : p_(&params) {
    const ModelConfig& c = p_->cfg;
    cache_k_.assign(c.n_layers, std::vector<Mat>(c.n_heads));
    cache_v_.assign(c.n_layers, std::vector<Mat>(c.n_heads));
  }

  void prefill(const std::vector<int>& ids) {
    check_input_ids(p_->cfg, ids);
    for (int id : ids) extend(id);
  }

  void extend(int token) {
    const ModelConfig& c = p_->cfg;
    if (token < 0 || token >= c.vocab_size)
      throw InputError("model: token id " + std::to_string(token) + " out of vocabulary range");
    if (n_ >= c.n_max) throw InputError("model: sequence exceeds n_max");
    const int dm = c.head_dim();
    const double inv_sqrt_dm = 1.0 / std::sqrt(static_cast<double>(dm));

    Eigen::RowVectorXd h = p_->tok_emb.row(token) + p_->pos_emb.row(n_);
    for (int l = 0; l < c.n_layers; ++l) {
      const LayerParams& lp = p_->layers[l];
      Eigen::RowVectorXd concat(c.d);
      for (int j = 0; j < c.n_heads; ++j) {
        Eigen::RowVectorXd q = h * lp.wq[j];
        Eigen::RowVectorXd k = h * lp.wk[j];
        Eigen::RowVectorXd v = h * lp.wv[j];
        append_row(cache_k_[l][j], k);
        append_row(cache_v_[l][j], v);
        Eigen::RowVectorXd scores =
            (q * cache_k_[l][j].topRows(n_ + 1).transpose()) * inv_sqrt_dm;
        const double mx = scores.maxCoeff();
        Eigen::RowVectorXd w = (scores.array() - mx).exp().matrix();
        w /= w.sum();
        concat.segment(j * dm, dm) = w * cache_v_[l][j].topRows(n_ + 1);
      }
      Eigen::RowVectorXd m = concat * lp.wc;
      Eigen::RowVectorXd e = norm_row(m + h, lp.ln1_g, lp.ln1_b);
      Eigen::RowVectorXd ff = (e * lp.ff1 + lp.ff1_b)
                                  .unaryExpr([](double x) { return ad::detail::gelu_scalar(x); });
      Eigen::RowVectorXd f = ff * lp.ff2 + lp.ff2_b;
      h = norm_row(f + e, lp.ln2_g, lp.ln2_b);
    }
    append_row(hidden_, h);
    ids_.push_back(token);
    ++n_;
  }

  long length() const { return n_; }
  const std::vector<int>& ids() const { return ids_; }

  // final-layer hidden states, N x d
  Mat hidden() const { return hidden_.topRows(n_); }
  Eigen::RowVectorXd hidden_row(long i) const { return hidden_.row(i); }
  Eigen::RowVectorXd hidden_last() const { return hidden_.row(n_ - 1); }

  Eigen::RowVectorXd logits_row(long i) const {
    if (p_->cfg.tied_output) return hidden_.row(i) * p_->tok_emb.transpose();
    return hidden_.row(i) * p_->w_pre;
  }
  Eigen::RowVectorXd logits_last() const { return logits_row(n_ - 1); }

  Mat logits_all() const {
    if (p_->cfg.tied_output) return hidden_.topRows(n_) * p_->tok_emb.transpose();
    return hidden_.topRows(n_) * p_->w_pre;
  }

  const ModelParameters& params() const { return *p_; }

 private:
  static Eigen::RowVectorXd norm_row(const Eigen::RowVectorXd& x, const Mat& g, const Mat& b) {
    const double mean = x.mean();
    Eigen::RowVectorXd c = (x.array() - mean).matrix();
    const double var = c.squaredNorm() / static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    return ((c * inv).array() * g.row(0).array() + b.row(0).array()).matrix();
  }

  static void append_row(Mat& m, const Eigen::RowVectorXd& r) {
    m.conservativeResize(m.rows() + 1, r.size());
    m.row(m.rows() - 1) = r;
  }

  const ModelParameters* p_;
  std::vector<int> ids_;
  std::vector<std::vector<Mat>> cache_k_, cache_v_;
  Mat hidden_;
  long n_ = 0;
};

// Whole-sequence forward over the numeric path.
inline ForwardOutput forward(const ModelParameters& params, const std::vector<int>& ids) {
  ModelSession s(params);
  s.prefill(ids);
  return ForwardOutput{s.hidden(), s.logits_all()};
}

// argmax over one logits row; ties resolved to the lowest id
inline int predict_next(const Eigen::RowVectorXd& logits_row) {
  if (logits_row.size() == 0) throw InputError("predict_next: empty row");
  if (!logits_row.allFinite()) throw InputError("predict_next: non-finite logits");
  int best = 0;
  for (int i = 1; i < logits_row.size(); ++i)
    if (logits_row(i) > logits_row(best)) best = i;
  return best;
}

// Numeric MLE loss: mean over supervised positions of
// -log softmax(logits[i])[ids[i+1]].
inline double mle_loss(const Mat& logits, const std::vector<int>& ids,
                       const std::vector<bool>& loss_mask) {
  const long n = logits.rows();
  if (static_cast<long>(ids.size()) != n || static_cast<long>(loss_mask.size()) != n)
    throw InputError("mle_loss: length mismatch");
  long count = 0;
  double loss = 0.0;
  for (long i = 0; i < n; ++i) {
    if (!loss_mask[i]) continue;
    if (i + 1 >= n) throw InputError("mle_loss: last position cannot be supervised");
    const auto row = logits.row(i);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    loss += lse - row(ids[i + 1]);
    ++count;
  }
  if (count == 0) throw InputError("mle_loss: loss mask selects no positions");
  return loss / static_cast<double>(count);
}

// mask covering every predictive position (all but the last)
inline std::vector<bool> default_loss_mask(std::size_t n) {
  std::vector<bool> m(n, true);
  if (!m.empty()) m.back() = false;
  return m;
}

}  // namespace cot
