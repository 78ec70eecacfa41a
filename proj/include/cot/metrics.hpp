#pragma once

#include "cot/common.hpp"
#include "cot/corpus.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace cot {

using Tokens = std::vector<std::string>;

namespace detail {
inline std::map<Tokens, int> ngram_counts(const Tokens& toks, int n) {
  std::map<Tokens, int> out;
  if (static_cast<int>(toks.size()) < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++out[Tokens(toks.begin() + i, toks.begin() + i + n)];
  return out;
}
}  // namespace detail

// Clipped n-gram precision: each reference n-gram can be matched at most as
// often as it occurs; candidates shorter than n score 0.
inline double modified_precision(const Tokens& candidate, const std::vector<Tokens>& references,
                                 int n) {
  if (n < 1) throw InputError("modified_precision: n must be >= 1");
  const auto cand = detail::ngram_counts(candidate, n);
  long long total = 0;
  for (const auto& [g, c] : cand) total += c;
  if (total == 0) return 0.0;
  std::map<Tokens, int> max_ref;
  for (const auto& ref : references)
    for (const auto& [g, c] : detail::ngram_counts(ref, n)) {
      auto& v = max_ref[g];
      v = std::max(v, c);
    }
  long long clipped = 0;
  for (const auto& [g, c] : cand) {
    auto it = max_ref.find(g);
    if (it != max_ref.end()) clipped += std::min(c, it->second);
  }
  return static_cast<double>(clipped) / static_cast<double>(total);
}

// Corpus BLEU_N with uniform weights, counts pooled over the corpus, and the
// brevity penalty exp(1 - r/c) applied when the candidate side is shorter.
inline double bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                   int max_n) {
  if (candidates.empty()) throw InputError("bleu: empty corpus");
  if (candidates.size() != references.size())
    throw InputError("bleu: candidate/reference corpus lengths differ");
  if (max_n < 1 || max_n > 4) throw InputError("bleu: N must lie in 1..4");

  long long cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<long long>(candidates[i].size());
    ref_len += static_cast<long long>(references[i].size());
  }
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    long long clipped = 0, total = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto cand = detail::ngram_counts(candidates[i], n);
      const auto ref = detail::ngram_counts(references[i], n);
      for (const auto& [g, c] : cand) {
        total += c;
        auto it = ref.find(g);
        if (it != ref.end()) clipped += std::min(c, it->second);
      }
    }
    if (clipped == 0 || total == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total)) /
               static_cast<double>(max_n);
  }
  const double bp =
      cand_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return bp * std::exp(log_sum);
}

// ---------------------------------------------------------------------------
// METEOR-style score: staged unigram matching (exact, suffix stem, optional
// synonym classes), fragmentation penalty over contiguous matched chunks.
// ---------------------------------------------------------------------------

struct MeteorParams {
  double alpha = 0.9;
  double gamma = 0.5;
  double theta = 3.0;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("meteor: alpha must lie in (0, 1)");
    if (gamma <= 0.0 || theta <= 0.0) throw ConfigError("meteor: gamma/theta must be positive");
  }
};

// Tab-separated equivalence classes, one class per line.
class SynonymTable {
 public:
  SynonymTable() = default;

  static SynonymTable load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open synonym table: " + path);
    SynonymTable t;
    std::string line;
    int cls = 0;
    while (std::getline(f, line)) {
      std::stringstream ss(line);
      std::string word;
      bool any = false;
      while (std::getline(ss, word, '\t')) {
        word = trim(word);
        if (!word.empty()) {
          t.class_of_.emplace(word, cls);
          any = true;
        }
      }
      if (any) ++cls;
    }
    return t;
  }

  std::optional<int> class_of(const std::string& w) const {
    auto it = class_of_.find(w);
    if (it == class_of_.end()) return std::nullopt;
    return it->second;
  }

  bool empty() const { return class_of_.empty(); }

 private:
  std::unordered_map<std::string, int> class_of_;
};

namespace detail {

// strip s/es/ed/ing when the remaining stem keeps >= 3 letters
inline std::string suffix_stem(const std::string& w) {
  for (const char* suf : {"ing", "es", "ed", "s"}) {
    const std::size_t n = std::string(suf).size();
    if (w.size() >= n + 3 && w.compare(w.size() - n, n, suf) == 0)
      return w.substr(0, w.size() - n);
  }
  return w;
}

struct MeteorAlignment {
  int m = 0;   // matched unigrams
  int ch = 0;  // contiguous matched chunks
  // matched candidate position -> reference position
  std::vector<std::pair<int, int>> pairs;
};

// Key of a token at a matching stage; stage 0 exact, 1 stem, 2 synonym.
inline std::optional<std::string> stage_key(const std::string& tok, int stage,
                                            const SynonymTable* syn) {
  switch (stage) {
    case 0: return tok;
    case 1: return suffix_stem(tok);
    default: {
      if (syn == nullptr || syn->empty()) return std::nullopt;
      auto c = syn->class_of(tok);
      if (!c) return std::nullopt;
      return "#" + std::to_string(*c);
    }
  }
}

// Staged maximum matching, then a left-to-right greedy position assignment
// preferring the reference position adjacent to the previous match.
inline MeteorAlignment meteor_align(const Tokens& cand, const Tokens& ref,
                                    const SynonymTable* syn) {
  const int nc = static_cast<int>(cand.size());
  const int nr = static_cast<int>(ref.size());
  std::vector<int> cand_stage(nc, -1);
  std::vector<std::string> cand_key(nc);
  std::vector<bool> ref_used(nr, false);
  std::vector<bool> cand_used(nc, false);

  // stage-by-stage multiset matching; leftmost positions claim the match
  for (int stage = 0; stage < 3; ++stage) {
    std::map<std::string, std::vector<int>> ref_avail;
    for (int j = 0; j < nr; ++j) {
      if (ref_used[j]) continue;
      auto k = stage_key(ref[j], stage, syn);
      if (k) ref_avail[*k].push_back(j);
    }
    for (int i = 0; i < nc; ++i) {
      if (cand_used[i]) continue;
      auto k = stage_key(cand[i], stage, syn);
      if (!k) continue;
      auto it = ref_avail.find(*k);
      if (it == ref_avail.end() || it->second.empty()) continue;
      cand_used[i] = true;
      cand_stage[i] = stage;
      cand_key[i] = *k;
      ref_used[it->second.front()] = true;
      it->second.erase(it->second.begin());
    }
  }

  std::vector<int> matched;
  for (int i = 0; i < nc; ++i)
    if (cand_stage[i] >= 0) matched.push_back(i);

  // a matched candidate may take any still-free reference position whose key
  // at the candidate's stage agrees
  std::vector<bool> used(nr, false);
  auto compatible = [&](int i, int j) {
    if (j < 0 || j >= nr || used[j]) return false;
    auto k = stage_key(ref[j], cand_stage[i], syn);
    return k && *k == cand_key[i];
  };
  // length of the run that would start by pairing matched[t0] with ref r
  auto chain_len = [&](std::size_t t0, int r) {
    int len = 0;
    int rr = r;
    for (std::size_t t = t0; t < matched.size(); ++t) {
      if (!compatible(matched[t], rr)) break;
      ++len;
      if (t + 1 >= matched.size() || matched[t + 1] != matched[t] + 1) break;
      ++rr;
    }
    return len;
  };

  MeteorAlignment out;
  int prev_cand = -2, prev_ref = -2;
  for (std::size_t t = 0; t < matched.size(); ++t) {
    const int i = matched[t];
    int pick = -1;
    if (i == prev_cand + 1 && compatible(i, prev_ref + 1)) {
      pick = prev_ref + 1;  // extend the open run
    } else {
      // starting a new chunk: prefer the ref that opens the longest run
      int best_len = 0;
      for (int r = 0; r < nr; ++r) {
        if (!compatible(i, r)) continue;
        const int len = chain_len(t, r);
        if (len > best_len) {
          best_len = len;
          pick = r;
        }
      }
    }
    if (pick < 0) continue;  // exhausted by cross-stage overlap; drop the token
    used[pick] = true;
    out.pairs.emplace_back(i, pick);
    prev_cand = i;
    prev_ref = pick;
  }
  out.m = static_cast<int>(out.pairs.size());
  int prev_c = -2;
  prev_ref = -2;
  for (const auto& [ci, rj] : out.pairs) {
    if (!(ci == prev_c + 1 && rj == prev_ref + 1)) ++out.ch;
    prev_c = ci;
    prev_ref = rj;
  }
  return out;
}

}  // namespace detail

inline double meteor(const Tokens& candidate, const Tokens& reference,
                     const MeteorParams& params = {}, const SynonymTable* synonyms = nullptr) {
  params.validate();
  if (candidate.empty() || reference.empty()) {
    std::cerr << "warning: meteor on an empty candidate or reference scores 0\n";
    return 0.0;
  }
  const auto align = detail::meteor_align(candidate, reference, synonyms);
  if (align.m == 0) return 0.0;
  const double m = static_cast<double>(align.m);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double f = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
  const double pen =
      params.gamma * std::pow(static_cast<double>(align.ch) / m, params.theta);
  return std::max(0.0, 1.0 - pen) * f;
}

// Jaccard similarity on token sets; two empty sets count as identical.
inline double jaccard(const Tokens& a, const Tokens& b) {
  const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& w : sa) inter += sb.count(w);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct PerSentence {
  std::vector<double> scores;
  double mean = 0.0;
};

// Novelty(S_i) = 1 - max_j Jaccard(S_i, G_j) against the training references.
inline PerSentence novelty(const std::vector<Tokens>& generated,
                           const std::vector<Tokens>& train_refs) {
  if (train_refs.empty()) throw InputError("novelty: training references must be non-empty");
  PerSentence out;
  for (const auto& s : generated) {
    double mx = 0.0;
    for (const auto& g : train_refs) mx = std::max(mx, jaccard(s, g));
    out.scores.push_back(1.0 - mx);
    out.mean += 1.0 - mx;
  }
  if (!generated.empty()) out.mean /= static_cast<double>(generated.size());
  return out;
}

// Diversity(S_i) = 1 - max_{j != i} Jaccard(S_i, S_j) within the generated set.
inline PerSentence diversity(const std::vector<Tokens>& generated) {
  if (generated.size() < 2) throw InputError("diversity: needs at least 2 sentences");
  PerSentence out;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    double mx = 0.0;
    for (std::size_t j = 0; j < generated.size(); ++j) {
      if (j == i) continue;
      mx = std::max(mx, jaccard(generated[i], generated[j]));
    }
    out.scores.push_back(1.0 - mx);
    out.mean += 1.0 - mx;
  }
  out.mean /= static_cast<double>(generated.size());
  return out;
}

// fraction of repeated n-grams within one sequence (0 when below 2 n-grams)
inline double ngram_repetition_rate(const std::vector<int>& ids, int n) {
  if (static_cast<int>(ids.size()) < n) return 0.0;
  std::set<std::vector<int>> uniq;
  long long total = 0;
  for (std::size_t i = 0; i + n <= ids.size(); ++i) {
    uniq.insert(std::vector<int>(ids.begin() + i, ids.begin() + i + n));
    ++total;
  }
  if (total <= 1) return 0.0;
  return 1.0 - static_cast<double>(uniq.size()) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Paired t-test (one-sided upper tail).
// ---------------------------------------------------------------------------

struct TTestResult {
  double mean_diff = 0.0;
  double std_error = 0.0;
  double t_statistic = 0.0;
  double degrees_of_freedom = 0.0;
  double p_value = 0.5;  // one-sided
};

inline TTestResult ttest_from_summary(double mean_diff, double std_error, double df) {
  TTestResult r;
  r.mean_diff = mean_diff;
  r.std_error = std_error;
  r.degrees_of_freedom = df;
  if (std_error > 0.0) {
    r.t_statistic = mean_diff / std_error;
    boost::math::students_t dist(df);
    r.p_value = 1.0 - boost::math::cdf(dist, r.t_statistic);
  } else {
    r.t_statistic = mean_diff == 0.0
                        ? 0.0
                        : std::copysign(std::numeric_limits<double>::infinity(), mean_diff);
    r.p_value = mean_diff == 0.0 ? 0.5 : (mean_diff > 0.0 ? 0.0 : 1.0);
  }
  return r;
}

inline TTestResult paired_ttest(const std::vector<double>& scores_a,
                                const std::vector<double>& scores_b) {
  if (scores_a.size() != scores_b.size()) throw InputError("paired_ttest: length mismatch");
  const std::size_t n = scores_a.size();
  if (n < 2) throw InputError("paired_ttest: needs at least 2 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += scores_a[i] - scores_b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = scores_a[i] - scores_b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));  // sample std dev
  const double se = sd / std::sqrt(static_cast<double>(n));
  return ttest_from_summary(mean, se, static_cast<double>(n - 1));
}

// ---------------------------------------------------------------------------
// Corpus-level report.
// ---------------------------------------------------------------------------

struct MetricReport {
  double mp = 0.0;  // corpus-pooled clipped unigram precision
  std::array<double, 4> bleu{};
  double meteor = 0.0;  // mean of per-sentence scores
  std::optional<double> novelty;
  std::optional<double> diversity;
  std::vector<double> mp_s, meteor_s, novelty_s, diversity_s;
  std::array<std::vector<double>, 4> bleu_s;
};

inline MetricReport evaluate_corpus(const std::vector<Tokens>& hyp,
                                    const std::vector<Tokens>& ref,
                                    const std::vector<Tokens>* train_refs = nullptr,
                                    const MeteorParams& mp_params = {},
                                    const SynonymTable* synonyms = nullptr) {
  if (hyp.empty()) throw InputError("evaluate_corpus: empty corpus");
  if (hyp.size() != ref.size()) throw InputError("evaluate_corpus: corpus lengths differ");
  MetricReport rep;
  // headline MP: pooled clipped unigram precision without the brevity penalty
  {
    long long clipped = 0, total = 0;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      const auto cand = detail::ngram_counts(hyp[i], 1);
      const auto r = detail::ngram_counts(ref[i], 1);
      for (const auto& [g, c] : cand) {
        total += c;
        auto it = r.find(g);
        if (it != r.end()) clipped += std::min(c, it->second);
      }
    }
    rep.mp = total == 0 ? 0.0 : static_cast<double>(clipped) / static_cast<double>(total);
  }
  for (int n = 1; n <= 4; ++n) rep.bleu[n - 1] = bleu(hyp, ref, n);
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    rep.mp_s.push_back(modified_precision(hyp[i], {ref[i]}, 1));
    rep.meteor_s.push_back(meteor(hyp[i], ref[i], mp_params, synonyms));
    rep.meteor += rep.meteor_s.back();
    for (int n = 1; n <= 4; ++n)
      rep.bleu_s[n - 1].push_back(bleu({hyp[i]}, {ref[i]}, n));
  }
  rep.meteor /= static_cast<double>(hyp.size());
  if (train_refs != nullptr) {
    PerSentence nv = novelty(hyp, *train_refs);
    rep.novelty = nv.mean;
    rep.novelty_s = std::move(nv.scores);
  }
  if (hyp.size() >= 2) {
    PerSentence dv = diversity(hyp);
    rep.diversity = dv.mean;
    rep.diversity_s = std::move(dv.scores);
  }
  return rep;
}

}  // namespace cot
