#pragma once

#include "cot/common.hpp"
#include "cot/corpus.hpp"
#include "cot/model.hpp"
#include "cot/objectives.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

namespace cot {

enum class DecodeStrategy { kGreedy, kBeam, kNucleus, kContrastive, kTarget };

inline DecodeStrategy strategy_from_string(const std::string& s) {
  if (s == "greedy") return DecodeStrategy::kGreedy;
  if (s == "beam") return DecodeStrategy::kBeam;
  if (s == "nucleus") return DecodeStrategy::kNucleus;
  if (s == "contrastive") return DecodeStrategy::kContrastive;
  if (s == "target") return DecodeStrategy::kTarget;
  throw ConfigError("unknown decoding strategy: " + s);
}

inline std::string to_string(DecodeStrategy s) {
  switch (s) {
    case DecodeStrategy::kGreedy: return "greedy";
    case DecodeStrategy::kBeam: return "beam";
    case DecodeStrategy::kNucleus: return "nucleus";
    case DecodeStrategy::kContrastive: return "contrastive";
    default: return "target";
  }
}

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::kTarget;
  int k = 8;
  std::array<double, 3> alphas{0.6, 0.2, 0.2};
  int beam_width = 7;
  double top_p = 0.9;
  int max_len = 80;
  std::uint64_t seed = 0;
  double contrastive_alpha = 0.6;  // contrastive strategy only
  bool penalize_prompt = false;    // widen S_P to prompt tokens as well

  void validate() const {
    if (k < 1) throw ConfigError("DecodeConfig: k must be >= 1");
    if (beam_width < 1) throw ConfigError("DecodeConfig: beam_width must be >= 1");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("DecodeConfig: top_p must be in (0, 1]");
    if (max_len < 1) throw ConfigError("DecodeConfig: max_len must be >= 1");
    for (double a : alphas)
      if (!std::isfinite(a)) throw ConfigError("DecodeConfig: alphas must be finite");
    if (contrastive_alpha < 0.0 || contrastive_alpha > 1.0)
      throw ConfigError("DecodeConfig: contrastive alpha must be in [0, 1]");
  }

  // A combined score with zero similarity and zero relevance weight reduces
  // to plain likelihood search, so those runs are dispatched (and labeled)
  // as greedy. This keeps e.g. `target --alphas 1,0,0` byte-identical to an
  // explicit greedy run.
  DecodeStrategy effective_strategy() const {
    if (strategy == DecodeStrategy::kTarget && alphas[1] == 0.0 && alphas[2] == 0.0 &&
        alphas[0] > 0.0)
      return DecodeStrategy::kGreedy;
    if (strategy == DecodeStrategy::kContrastive && contrastive_alpha == 0.0)
      return DecodeStrategy::kGreedy;
    return strategy;
  }
};

enum class TermReason { kEos, kMaxLen };

inline std::string to_string(TermReason r) { return r == TermReason::kEos ? "eos" : "max_len"; }

struct StepScore {
  double s_c = 0.0;  // model confidence, p(x | prefix)
  double s_p = 0.0;  // degeneration penalty: max cosine to prior generated tokens
  double s_a = 0.0;  // relevance encouragement: cosine to the target hidden state
  double combined = 0.0;
};

struct GenerationResult {
  std::vector<int> ids;  // generated counter-narrative tokens, EOS excluded
  std::vector<StepScore> steps;
  TermReason reason = TermReason::kMaxLen;
};

inline Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::RowVectorXd p = (logits.array() - m).exp().matrix();
  return p / p.sum();
}

// ids ranked by probability (descending), ties to the lower id
inline std::vector<std::pair<int, double>> top_k_candidates(const Eigen::RowVectorXd& probs,
                                                            int k) {
  std::vector<std::pair<int, double>> all(probs.size());
  for (int i = 0; i < probs.size(); ++i) all[i] = {i, probs(i)};
  const int n = std::min<int>(k, static_cast<int>(all.size()));
  std::partial_sort(all.begin(), all.begin() + n, all.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  all.resize(n);
  return all;
}

// Pure scoring rule of the target-oriented search, exposed for tests:
// argmax of a1*S_C - a2*S_P + a3*S_A over the candidates, ties to lower id.
inline int target_choose(const std::vector<std::pair<int, StepScore>>& scored) {
  if (scored.empty()) throw InputError("target_choose: no candidates");
  int best = -1;
  double best_score = 0.0;
  for (const auto& [id, sc] : scored) {
    if (best < 0 || sc.combined > best_score || (sc.combined == best_score && id < best)) {
      best = id;
      best_score = sc.combined;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Search strategies, generic over a session type providing extend(),
// length(), logits_last(), hidden_last(), hidden_row() and copy semantics.
// ---------------------------------------------------------------------------

template <typename S>
GenerationResult greedy_search(S session, int eos_id, int max_len) {
  GenerationResult out;
  for (int t = 0; t < max_len; ++t) {
    const Eigen::RowVectorXd probs = softmax_row(session.logits_last());
    const int id = predict_next(probs);
    if (id == eos_id) {
      out.reason = TermReason::kEos;
      return out;
    }
    session.extend(id);
    out.ids.push_back(id);
    out.steps.push_back(StepScore{probs(id), 0.0, 0.0, probs(id)});
  }
  out.reason = TermReason::kMaxLen;
  return out;
}

// Each step expands the top-k candidates of the model distribution; the
// candidate hidden state h^x is the last-layer state after appending x.
// S_P compares h^x against previously generated tokens (positions at or
// after penalty_from; pass 0 to widen the penalty to the prompt).
template <typename S>
GenerationResult target_search(S session, long penalty_from,
                               std::optional<Eigen::RowVectorXd> target_hidden, int eos_id,
                               int k, const std::array<double, 3>& alphas, int max_len) {
  GenerationResult out;
  for (int t = 0; t < max_len; ++t) {
    const Eigen::RowVectorXd probs = softmax_row(session.logits_last());
    const auto cands = top_k_candidates(probs, k);

    int best_id = -1;
    double best_combined = 0.0;
    StepScore best_score;
    std::optional<S> best_session;
    for (const auto& [id, p] : cands) {
      S s2 = session;
      s2.extend(id);
      const Eigen::RowVectorXd h = s2.hidden_last();
      StepScore sc;
      sc.s_c = p;
      if (session.length() > penalty_from) {
        double mx = -1.0;
        for (long j = penalty_from; j < session.length(); ++j)
          mx = std::max(mx, cosine(h, s2.hidden_row(j)));
        sc.s_p = mx;
      }
      if (target_hidden && alphas[2] != 0.0) sc.s_a = cosine(h, *target_hidden);
      sc.combined = alphas[0] * sc.s_c - alphas[1] * sc.s_p + alphas[2] * sc.s_a;
      if (best_id < 0 || sc.combined > best_combined ||
          (sc.combined == best_combined && id < best_id)) {
        best_id = id;
        best_combined = sc.combined;
        best_score = sc;
        best_session = std::move(s2);
      }
    }
    if (best_id == eos_id) {
      out.reason = TermReason::kEos;
      return out;
    }
    session = std::move(*best_session);
    out.ids.push_back(best_id);
    out.steps.push_back(best_score);
  }
  out.reason = TermReason::kMaxLen;
  return out;
}

// Length-normalized beam search; hypotheses that emit EOS retire. Ties are
// broken by the lexicographically lower token-id sequence.
template <typename S>
GenerationResult beam_search(S session, int eos_id, int beam_width, int max_len) {
  struct Hyp {
    std::vector<int> ids;
    std::vector<double> step_probs;
    double logp = 0.0;
    S session;
  };
  struct Done {
    std::vector<int> ids;
    std::vector<double> step_probs;
    double score = 0.0;
  };
  auto norm_score = [](double logp, std::size_t len) {
    return logp / static_cast<double>(std::max<std::size_t>(1, len));
  };

  std::vector<Hyp> active;
  active.push_back(Hyp{{}, {}, 0.0, std::move(session)});
  std::vector<Done> retired;

  for (int t = 0; t < max_len && !active.empty(); ++t) {
    struct Cand {
      int hyp;
      int token;
      double logp;
      double prob;
    };
    std::vector<Cand> pool;
    for (std::size_t hi = 0; hi < active.size(); ++hi) {
      const Eigen::RowVectorXd probs = softmax_row(active[hi].session.logits_last());
      for (int v = 0; v < probs.size(); ++v)
        pool.push_back(Cand{static_cast<int>(hi), v, active[hi].logp + std::log(probs(v)),
                            probs(v)});
    }
    auto seq_less = [&](const Cand& a, const Cand& b) {
      const auto& sa = active[a.hyp].ids;
      const auto& sb = active[b.hyp].ids;
      const std::size_t n = std::min(sa.size(), sb.size());
      for (std::size_t i = 0; i < n; ++i)
        if (sa[i] != sb[i]) return sa[i] < sb[i];
      if (sa.size() != sb.size()) return sa.size() < sb.size();
      return a.token < b.token;
    };
    const std::size_t keep = std::min<std::size_t>(beam_width, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + keep, pool.end(),
                      [&](const Cand& a, const Cand& b) {
                        if (a.logp != b.logp) return a.logp > b.logp;
                        return seq_less(a, b);
                      });
    pool.resize(keep);

    std::vector<Hyp> next;
    for (const Cand& c : pool) {
      const Hyp& parent = active[c.hyp];
      if (c.token == eos_id) {
        Done d{parent.ids, parent.step_probs, norm_score(c.logp, parent.ids.size() + 1)};
        retired.push_back(std::move(d));
      } else {
        Hyp h{parent.ids, parent.step_probs, c.logp, parent.session};
        h.session.extend(c.token);
        h.ids.push_back(c.token);
        h.step_probs.push_back(c.prob);
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);
  }

  // surviving hypotheses compete with the retired ones
  std::vector<Done> finished = std::move(retired);
  const std::size_t n_eos = finished.size();
  for (auto& h : active) {
    const double score = norm_score(h.logp, h.ids.size());
    finished.push_back(Done{std::move(h.ids), std::move(h.step_probs), score});
  }
  if (finished.empty()) throw NumericalError("beam_search: no hypotheses produced");
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (finished[i].score > finished[best].score ||
        (finished[i].score == finished[best].score &&
         std::lexicographical_compare(finished[i].ids.begin(), finished[i].ids.end(),
                                      finished[best].ids.begin(), finished[best].ids.end())))
      best = i;
  }
  GenerationResult out;
  out.ids = finished[best].ids;
  for (double p : finished[best].step_probs) out.steps.push_back(StepScore{p, 0.0, 0.0, p});
  out.reason = best < n_eos ? TermReason::kEos : TermReason::kMaxLen;
  return out;
}

// Smallest probability-sorted prefix of the vocabulary whose mass reaches
// top_p, with renormalized probabilities.
inline std::vector<std::pair<int, double>> nucleus_filter(const Eigen::RowVectorXd& probs,
                                                          double top_p) {
  std::vector<std::pair<int, double>> sorted(probs.size());
  for (int i = 0; i < probs.size(); ++i) sorted[i] = {i, probs(i)};
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::size_t cut = 0;
  double mass = 0.0;
  while (cut < sorted.size()) {
    mass += sorted[cut].second;
    ++cut;
    if (mass >= top_p) break;
  }
  sorted.resize(cut);
  for (auto& [id, p] : sorted) p /= mass;
  return sorted;
}

// Nucleus sampling with the seeded generator.
template <typename S>
GenerationResult nucleus_search(S session, int eos_id, double top_p, std::uint64_t seed,
                                int max_len) {
  Rng rng(seed ^ 0x6e75636cULL);
  GenerationResult out;
  for (int t = 0; t < max_len; ++t) {
    const Eigen::RowVectorXd probs = softmax_row(session.logits_last());
    const auto nucleus = nucleus_filter(probs, top_p);
    const double u = rng.next_double();
    double cum = 0.0;
    int id = nucleus.back().first;
    for (const auto& [cand, q] : nucleus) {
      cum += q;
      if (u < cum) {
        id = cand;
        break;
      }
    }
    const double p = probs(id);  // trace keeps the model probability
    if (id == eos_id) {
      out.reason = TermReason::kEos;
      return out;
    }
    session.extend(id);
    out.ids.push_back(id);
    out.steps.push_back(StepScore{p, 0.0, 0.0, p});
  }
  out.reason = TermReason::kMaxLen;
  return out;
}

// ---------------------------------------------------------------------------
// Model-backed decoding front end.
// ---------------------------------------------------------------------------

struct PromptInfo {
  Span target_span;  // token positions of the target inside the prompt
};

// Prompt must follow the [BOS] target [EOT] hate-speech [EOS] layout.
inline PromptInfo validate_prompt(const std::vector<int>& prompt) {
  if (prompt.size() < 5 || prompt.front() != BOS || prompt.back() != EOS)
    throw InputError("decode: prompt must be [BOS] target [EOT] hate-speech [EOS]");
  int eot_pos = -1;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (prompt[i] == EOT) {
      if (eot_pos >= 0) throw InputError("decode: prompt has more than one EOT");
      eot_pos = static_cast<int>(i);
    }
    if (prompt[i] == EOS && i + 1 != prompt.size())
      throw InputError("decode: EOS must terminate the prompt");
  }
  if (eot_pos < 2) throw InputError("decode: prompt is missing target tokens before EOT");
  if (eot_pos + 2 >= static_cast<int>(prompt.size()))
    throw InputError("decode: prompt is missing hate-speech tokens before EOS");
  return PromptInfo{Span{1, eot_pos}};
}

inline GenerationResult decode(const ModelParameters& params, const std::vector<int>& prompt,
                               const DecodeConfig& cfg) {
  cfg.validate();
  const PromptInfo info = validate_prompt(prompt);
  ModelSession session(params);
  session.prefill(prompt);

  const long prompt_len = session.length();
  const int room = params.cfg.n_max - static_cast<int>(prompt_len);
  const int max_len = std::min(cfg.max_len, room);
  if (max_len <= 0) return GenerationResult{{}, {}, TermReason::kMaxLen};

  switch (cfg.effective_strategy()) {
    case DecodeStrategy::kGreedy:
      return greedy_search(std::move(session), EOS, max_len);
    case DecodeStrategy::kBeam:
      return beam_search(std::move(session), EOS, cfg.beam_width, max_len);
    case DecodeStrategy::kNucleus:
      return nucleus_search(std::move(session), EOS, cfg.top_p, cfg.seed, max_len);
    case DecodeStrategy::kContrastive:
      return target_search(std::move(session), cfg.penalize_prompt ? 0 : prompt_len,
                           std::nullopt, EOS, cfg.k,
                           {1.0 - cfg.contrastive_alpha, cfg.contrastive_alpha, 0.0}, max_len);
    case DecodeStrategy::kTarget:
    default: {
      Eigen::RowVectorXd target_hidden =
          Eigen::RowVectorXd::Zero(session.hidden_row(0).size());
      for (int i = info.target_span.begin; i < info.target_span.end; ++i)
        target_hidden += session.hidden_row(i);
      target_hidden /= static_cast<double>(info.target_span.size());
      return target_search(std::move(session), cfg.penalize_prompt ? 0 : prompt_len,
                           std::make_optional(target_hidden), EOS, cfg.k, cfg.alphas, max_len);
    }
  }
}

}  // namespace cot
