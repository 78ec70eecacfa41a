#pragma once

#include "cot/checkpoint.hpp"
#include "cot/common.hpp"
#include "cot/corpus.hpp"
#include "cot/model.hpp"
#include "cot/objectives.hpp"
#include "cot/ot.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace cot {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  int accumulation_steps = 1;
  int total_steps = 2000;
  double peak_lr = 1e-3;
  double warmup_rate = 0.1;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int eval_every = 100;
  int patience = 5;
  std::uint64_t seed = 42;
  double beta1 = 0.6;  // loss weights (MLE, transported, self-contrastive)
  double beta2 = 0.4;
  double beta3 = 0.2;
  double rho1 = 0.5;
  double rho2 = 0.5;
  double ot_eta = 0.1;
  double ot_epsilon = 0.1;
  int ot_max_iters = 5;
  std::string ot_cost = "kernel";

  void validate() const {
    if (epochs < 1 || batch_size < 1 || accumulation_steps < 1 || total_steps < 1)
      throw ConfigError("TrainConfig: counts must be >= 1");
    if (!(warmup_rate > 0.0 && warmup_rate < 1.0))
      throw ConfigError("TrainConfig: warmup_rate must lie in (0, 1)");
    if (patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
    if (eval_every < 1) throw ConfigError("TrainConfig: eval_every must be >= 1");
    if (peak_lr < 0.0 || weight_decay < 0.0) throw ConfigError("TrainConfig: negative rate");
    Margins{rho1, rho2}.validate();
    for (double b : {beta1, beta2, beta3})
      if (!std::isfinite(b)) throw ConfigError("TrainConfig: loss betas must be finite");
    if (ot_eta <= 0.0 || ot_epsilon <= 0.0 || ot_max_iters < 1)
      throw ConfigError("TrainConfig: invalid optimal-transport settings");
    cost_kind_from_string(ot_cost);
  }

  std::array<double, 3> loss_betas() const { return {beta1, beta2, beta3}; }

  // Full-scale preset; accumulation derived from effective batch 128 / batch 8.
  static TrainConfig full_scale_preset() {
    TrainConfig c;
    c.epochs = 480;
    c.batch_size = 8;
    c.accumulation_steps = 16;
    c.total_steps = 15000;
    c.peak_lr = 2e-5;
    c.warmup_rate = 0.1;
    return c;
  }
};

// Flat `key = value` file; keys must match TrainConfig field names exactly.
inline TrainConfig parse_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  TrainConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected `key = value`");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };
    try {
      if (key == "epochs") c.epochs = as_int();
      else if (key == "batch_size") c.batch_size = as_int();
      else if (key == "accumulation_steps") c.accumulation_steps = as_int();
      else if (key == "total_steps") c.total_steps = as_int();
      else if (key == "peak_lr") c.peak_lr = as_double();
      else if (key == "warmup_rate") c.warmup_rate = as_double();
      else if (key == "weight_decay") c.weight_decay = as_double();
      else if (key == "adam_beta1") c.adam_beta1 = as_double();
      else if (key == "adam_beta2") c.adam_beta2 = as_double();
      else if (key == "adam_eps") c.adam_eps = as_double();
      else if (key == "eval_every") c.eval_every = as_int();
      else if (key == "patience") c.patience = as_int();
      else if (key == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(value));
      else if (key == "beta1") c.beta1 = as_double();
      else if (key == "beta2") c.beta2 = as_double();
      else if (key == "beta3") c.beta3 = as_double();
      else if (key == "rho1") c.rho1 = as_double();
      else if (key == "rho2") c.rho2 = as_double();
      else if (key == "ot_eta") c.ot_eta = as_double();
      else if (key == "ot_epsilon") c.ot_epsilon = as_double();
      else if (key == "ot_max_iters") c.ot_max_iters = as_int();
      else if (key == "ot_cost") c.ot_cost = value;
      else throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key \"" + key + "\"");
    } catch (const std::invalid_argument&) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad value for \"" + key + "\"");
    }
  }
  c.validate();
  return c;
}

// Linear warmup to peak over warmup_rate * total_steps, then linear decay
// to zero at total_steps.
inline double lr_at(long step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps)
    throw InputError("lr_at: step outside [0, total_steps]");
  const double total = static_cast<double>(cfg.total_steps);
  const double warm = cfg.warmup_rate * total;
  const double s = static_cast<double>(step);
  if (s <= warm) return cfg.peak_lr * (warm > 0.0 ? s / warm : 1.0);
  return cfg.peak_lr * (total - s) / (total - warm);
}

struct TrainState {
  long step = 0;    // completed optimizer steps
  long adam_t = 0;  // bias-correction counter
  std::vector<Mat> m, v;
  std::vector<Mat> grad_accum;
  long samples_accum = 0;
  int micro_steps = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int evals_since_improve = 0;
  Rng rng{0};

  static TrainState init(const ModelParameters& params, std::uint64_t seed) {
    TrainState s;
    s.rng = Rng(seed ^ 0x5eedULL);
    params.for_each([&](const std::string&, const Mat& m) {
      s.m.push_back(Mat::Zero(m.rows(), m.cols()));
      s.v.push_back(Mat::Zero(m.rows(), m.cols()));
      s.grad_accum.push_back(Mat::Zero(m.rows(), m.cols()));
    });
    return s;
  }
};

namespace detail {

struct SampleResult {
  LossBreakdown loss;
  std::vector<Mat> grads;  // empty if gradients were not requested
};

// Loss graph for one sample: MLE over all predictive positions, plus the
// transported and self-contrastive terms over the sentence-token hidden
// states (target and special positions excluded).
inline SampleResult sample_loss(const ModelParameters& params, const EncodedSample& sample,
                                const TrainConfig& cfg, bool with_grads) {
  ad::Tape tape;
  TapeModel tm = TapeModel::bind(tape, params);
  TapeForward fw = forward_tape(tape, tm, sample.ids);

  const std::size_t n = sample.ids.size();
  std::vector<int> next(n, 0);
  for (std::size_t i = 0; i + 1 < n; ++i) next[i] = sample.ids[i + 1];
  ad::Var mle = ad::cross_entropy(fw.logits, next, default_loss_mask(n));

  ad::Var total = ad::scale(mle, cfg.beta1);
  double lt_value = 0.0, lc_value = 0.0;

  const long n_sent = sample.hs_span.size() + sample.cn_span.size();
  if ((cfg.beta2 != 0.0 || cfg.beta3 != 0.0) && n_sent >= 1) {
    ad::Var r_h = ad::slice_rows(fw.hidden, sample.hs_span.begin, sample.hs_span.size());
    ad::Var r_s = r_h;
    if (sample.cn_span.size() > 0) {
      ad::Var r_c = ad::slice_rows(fw.hidden, sample.cn_span.begin, sample.cn_span.size());
      r_s = ad::concat_rows({r_h, r_c});
    }
    if (cfg.beta2 != 0.0) {
      ad::Var r_t = ad::slice_rows(fw.hidden, sample.target_span.begin, sample.target_span.size());
      ad::Var cost = cost_matrix_tape(r_t, r_s, cfg.ot_eta, cost_kind_from_string(cfg.ot_cost));
      ad::Var plan = sinkhorn_tape(cost, uniform_weights(r_t.rows()), uniform_weights(n_sent),
                                   cfg.ot_epsilon, cfg.ot_max_iters);
      ad::Var t_s = transport_tape(plan, r_t, tm.w_s, tm.b_s);
      ad::Var lt = transported_contrastive_tape(r_s, t_s, cfg.rho1);
      lt_value = lt.value()(0, 0);
      total = ad::add(total, ad::scale(lt, cfg.beta2));
    }
    if (cfg.beta3 != 0.0 && n_sent >= 2) {
      ad::Var lc = self_contrastive_tape(r_s, cfg.rho2);
      lc_value = lc.value()(0, 0);
      total = ad::add(total, ad::scale(lc, cfg.beta3));
    }
  }

  SampleResult out;
  out.loss = combined_loss(mle.value()(0, 0), lt_value, lc_value, cfg.loss_betas());
  if (!std::isfinite(out.loss.total)) throw NumericalError("sample loss is not finite");
  if (with_grads) {
    tape.backward(total.id);
    out.grads = tm.collect_grads(tape);
  }
  return out;
}

// Per-sample results computed by up to COT_THREADS workers, reduced in
// sample order so the result does not depend on the thread count.
inline std::vector<SampleResult> batch_losses(const ModelParameters& params,
                                              const std::vector<EncodedSample>& batch,
                                              const TrainConfig& cfg, bool with_grads) {
  std::vector<SampleResult> results(batch.size());
  std::vector<std::string> errors(batch.size());
  const int workers =
      std::max(1, std::min<int>(env_thread_cap(), static_cast<int>(batch.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      try {
        results[i] = sample_loss(params, batch[i], cfg, with_grads);
      } catch (const std::exception& e) {
        throw NumericalError("batch sample " + std::to_string(i) + ": " + e.what());
      }
    }
    return results;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = static_cast<std::size_t>(w); i < batch.size();
           i += static_cast<std::size_t>(workers)) {
        try {
          results[i] = sample_loss(params, batch[i], cfg, with_grads);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw NumericalError("batch sample " + std::to_string(i) + ": " + errors[i]);
  return results;
}

}  // namespace detail

// One micro-batch: accumulate gradients; on the accumulation boundary apply
// gradient clipping (global norm 1.0) and an AdamW update at lr_at(step).
inline LossBreakdown train_step(ModelParameters& params, const std::vector<EncodedSample>& batch,
                                const TrainConfig& cfg, TrainState& state) {
  if (batch.empty()) throw InputError("train_step: empty batch");
  auto results = detail::batch_losses(params, batch, cfg, /*with_grads=*/true);

  LossBreakdown mean;
  mean.betas = cfg.loss_betas();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    mean.mle += r.loss.mle;
    mean.transported += r.loss.transported;
    mean.self_contrastive += r.loss.self_contrastive;
    for (std::size_t b = 0; b < state.grad_accum.size(); ++b)
      state.grad_accum[b] += r.grads[b];
  }
  const double inv = 1.0 / static_cast<double>(results.size());
  mean.mle *= inv;
  mean.transported *= inv;
  mean.self_contrastive *= inv;
  mean.total = cfg.beta1 * mean.mle + cfg.beta2 * mean.transported +
               cfg.beta3 * mean.self_contrastive;

  state.samples_accum += static_cast<long>(results.size());
  if (++state.micro_steps < cfg.accumulation_steps) return mean;

  // optimizer step
  const double denom = static_cast<double>(state.samples_accum);
  double sq_norm = 0.0;
  for (auto& g : state.grad_accum) {
    g /= denom;
    sq_norm += g.squaredNorm();
  }
  const double norm = std::sqrt(sq_norm);
  if (norm > 1.0)
    for (auto& g : state.grad_accum) g /= norm;

  const double lr = lr_at(std::min<long>(state.step + 1, cfg.total_steps), cfg);
  ++state.adam_t;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.adam_t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.adam_t));
  std::size_t b = 0;
  params.for_each([&](const std::string&, Mat& p) {
    Mat& g = state.grad_accum[b];
    state.m[b] = cfg.adam_beta1 * state.m[b] + (1.0 - cfg.adam_beta1) * g;
    state.v[b] = cfg.adam_beta2 * state.v[b] + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
    const Mat mhat = state.m[b] / bc1;
    const Mat vhat = state.v[b] / bc2;
    p -= lr * (mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg.adam_eps).matrix()) +
               cfg.weight_decay * p);
    g.setZero();
    ++b;
  });
  state.micro_steps = 0;
  state.samples_accum = 0;
  ++state.step;
  return mean;
}

inline LossBreakdown evaluate_corpus_loss(const ModelParameters& params,
                                          const std::vector<EncodedSample>& corpus,
                                          const TrainConfig& cfg) {
  if (corpus.empty()) throw InputError("evaluate_corpus_loss: empty corpus");
  LossBreakdown mean;
  mean.betas = cfg.loss_betas();
  const std::size_t chunk = 64;
  for (std::size_t at = 0; at < corpus.size(); at += chunk) {
    std::vector<EncodedSample> part(corpus.begin() + at,
                                    corpus.begin() + std::min(corpus.size(), at + chunk));
    auto results = detail::batch_losses(params, part, cfg, /*with_grads=*/false);
    for (const auto& r : results) {
      mean.mle += r.loss.mle;
      mean.transported += r.loss.transported;
      mean.self_contrastive += r.loss.self_contrastive;
    }
  }
  const double inv = 1.0 / static_cast<double>(corpus.size());
  mean.mle *= inv;
  mean.transported *= inv;
  mean.self_contrastive *= inv;
  mean.total = cfg.beta1 * mean.mle + cfg.beta2 * mean.transported +
               cfg.beta3 * mean.self_contrastive;
  return mean;
}

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  std::string vocab_path;
  double best_val_total = std::numeric_limits<double>::infinity();
  long steps_completed = 0;
  bool stopped_early = false;
};

// Full training run: vocabulary from the train split only, shuffled batches,
// validation every eval_every steps, patience-based early stop, best
// checkpoint + JSONL log written under out_dir.
inline TrainResult train(const TrainConfig& cfg, const ModelConfig& arch, int vocab_max,
                         const std::vector<RawSample>& train_samples,
                         const std::vector<RawSample>& valid_samples,
                         const std::string& out_dir) {
  cfg.validate();
  if (train_samples.empty() || valid_samples.empty())
    throw InputError("train: corpora must be non-empty");

  Vocabulary vocab = build_vocab(train_samples, vocab_max);
  ModelConfig mc = arch;
  mc.vocab_size = vocab.size();
  mc.validate();

  auto encode_all = [&](const std::vector<RawSample>& raw) {
    std::vector<EncodedSample> out;
    out.reserve(raw.size());
    for (const auto& r : raw) out.push_back(encode_sample(r, vocab, mc.n_max));
    return out;
  };
  const std::vector<EncodedSample> train_enc = encode_all(train_samples);
  const std::vector<EncodedSample> valid_enc = encode_all(valid_samples);

  ModelParameters params = ModelParameters::init(mc, cfg.seed);
  TrainState state = TrainState::init(params, cfg.seed);

  TrainResult res;
  res.checkpoint_path = out_dir + "/model.ckpt";
  res.log_path = out_dir + "/train_log.jsonl";
  res.vocab_path = out_dir + "/vocab.txt";
  vocab.save(res.vocab_path);

  std::ofstream log(res.log_path, std::ios::binary);
  if (!log) throw IoError("cannot open training log for writing: " + res.log_path);

  bool wrote_checkpoint = false;
  bool done = false;
  LossBreakdown acc;  // losses accumulated across the micro-batches of one step
  int acc_n = 0;

  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::vector<std::size_t> order(train_enc.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    state.rng.shuffle(order);

    for (std::size_t at = 0; at < order.size() && !done; at += cfg.batch_size) {
      std::vector<EncodedSample> batch;
      for (std::size_t i = at; i < std::min(order.size(), at + cfg.batch_size); ++i)
        batch.push_back(train_enc[order[i]]);
      const long step_before = state.step;
      LossBreakdown bd = train_step(params, batch, cfg, state);
      acc.mle += bd.mle;
      acc.transported += bd.transported;
      acc.self_contrastive += bd.self_contrastive;
      ++acc_n;
      if (state.step == step_before) continue;  // still accumulating

      const double inv = 1.0 / static_cast<double>(acc_n);
      nlohmann::json row;
      row["step"] = state.step;
      row["lr"] = lr_at(std::min<long>(state.step, cfg.total_steps), cfg);
      row["mle"] = acc.mle * inv;
      row["lt"] = acc.transported * inv;
      row["lc"] = acc.self_contrastive * inv;
      row["total"] = cfg.beta1 * acc.mle * inv + cfg.beta2 * acc.transported * inv +
                     cfg.beta3 * acc.self_contrastive * inv;
      acc = LossBreakdown{};
      acc_n = 0;

      const bool last_step = state.step >= cfg.total_steps;
      if (state.step % cfg.eval_every == 0 || last_step) {
        LossBreakdown val = evaluate_corpus_loss(params, valid_enc, cfg);
        row["val_total"] = val.total;
        if (val.total < state.best_val) {
          state.best_val = val.total;
          state.evals_since_improve = 0;
          save_checkpoint(res.checkpoint_path, params, vocab);
          wrote_checkpoint = true;
        } else {
          ++state.evals_since_improve;
          if (state.evals_since_improve >= cfg.patience) {
            res.stopped_early = true;
            done = true;
          }
        }
      }
      log << row.dump() << "\n";
      if (last_step) done = true;
    }
  }
  if (!wrote_checkpoint) save_checkpoint(res.checkpoint_path, params, vocab);
  res.best_val_total = state.best_val;
  res.steps_completed = state.step;
  if (!log) throw IoError("failed while writing training log: " + res.log_path);
  return res;
}

}  // namespace cot
