#pragma once

#include "cot/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace cot {

// One target / hate-speech / counter-narrative triple, whitespace-trimmed.
struct RawSample {
  std::string target;
  std::string hate_speech;
  std::string counter_narrative;
};

// Fixed special token ids. The remaining vocabulary starts at id 5.
enum SpecialId : int { PAD = 0, UNK = 1, BOS = 2, EOT = 3, EOS = 4 };
inline constexpr int kNumSpecials = 5;

inline const std::vector<std::string>& special_token_strings() {
  static const std::vector<std::string> s = {"<pad>", "<unk>", "<bos>", "<eot>", "<eos>"};
  return s;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Lowercase whitespace tokenization; ASCII punctuation is split off into
// single-character tokens.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
  }
  flush();
  return out;
}

class Vocabulary {
 public:
  Vocabulary() {
    for (const auto& s : special_token_strings()) push(s);
  }

  int id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? UNK : it->second;
  }

  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  const std::string& token_of(int id) const {
    if (id < 0 || id >= static_cast<int>(id_to_token_.size()))
      throw InputError("Vocabulary: id out of range: " + std::to_string(id));
    return id_to_token_[id];
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }

  void push(const std::string& token) {
    token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(token);
  }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  // One token per line; line number == id.
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open vocabulary file for writing: " + path);
    for (const auto& t : id_to_token_) f << t << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open vocabulary file: " + path);
    Vocabulary v;
    v.token_to_id_.clear();
    v.id_to_token_.clear();
    std::string line;
    while (std::getline(f, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      v.push(line);
    }
    if (v.size() < kNumSpecials) throw ParseError("vocabulary file too short: " + path);
    return v;
  }

  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    v.token_to_id_.clear();
    v.id_to_token_.clear();
    for (const auto& t : tokens) v.push(t);
    if (v.size() < kNumSpecials) throw ParseError("vocabulary token list too short");
    return v;
  }

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct Span {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  int size() const { return end - begin; }
};

// Token-id layout: [BOS] target [EOT] hate-speech [EOS] counter-narrative.
struct EncodedSample {
  std::vector<int> ids;
  Span target_span;
  Span hs_span;
  Span cn_span;
  int length() const { return static_cast<int>(ids.size()); }
};

inline std::vector<RawSample> load_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open dataset: " + path);
  std::vector<RawSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ParseError(path + ":" + std::to_string(lineno) + ": malformed JSON object");
    for (const char* key : {"target", "hate_speech", "counter_narrative"}) {
      if (!j.contains(key) || !j[key].is_string())
        throw ParseError(path + ":" + std::to_string(lineno) + ": missing string key \"" +
                         key + "\"");
    }
    RawSample s{trim(j["target"].get<std::string>()), trim(j["hate_speech"].get<std::string>()),
                trim(j["counter_narrative"].get<std::string>())};
    out.push_back(std::move(s));
  }
  return out;
}

// Prompt-only variant: counter_narrative may be absent (generation inputs).
inline std::vector<RawSample> load_jsonl_prompts(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open dataset: " + path);
  std::vector<RawSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ParseError(path + ":" + std::to_string(lineno) + ": malformed JSON object");
    for (const char* key : {"target", "hate_speech"}) {
      if (!j.contains(key) || !j[key].is_string())
        throw ParseError(path + ":" + std::to_string(lineno) + ": missing string key \"" +
                         key + "\"");
    }
    RawSample s;
    s.target = trim(j["target"].get<std::string>());
    s.hate_speech = trim(j["hate_speech"].get<std::string>());
    if (j.contains("counter_narrative") && j["counter_narrative"].is_string())
      s.counter_narrative = trim(j["counter_narrative"].get<std::string>());
    out.push_back(std::move(s));
  }
  return out;
}

inline void save_jsonl(const std::string& path, const std::vector<RawSample>& samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open dataset for writing: " + path);
  for (const auto& s : samples) {
    nlohmann::json j;
    j["target"] = s.target;
    j["hate_speech"] = s.hate_speech;
    j["counter_narrative"] = s.counter_narrative;
    f << j.dump() << "\n";
  }
}

// Frequency-ranked vocabulary over all three text fields; ties broken
// lexicographically. Ids 0..4 are reserved for the specials.
inline Vocabulary build_vocab(const std::vector<RawSample>& samples, int max_size) {
  if (max_size < kNumSpecials + 1)
    throw ConfigError("build_vocab: max_size must be at least " +
                      std::to_string(kNumSpecials + 1));
  std::map<std::string, long long> freq;
  for (const auto& s : samples) {
    for (const std::string* field : {&s.target, &s.hate_speech, &s.counter_narrative})
      for (auto& t : tokenize(*field)) ++freq[t];
  }
  std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  const int room = max_size - kNumSpecials;
  for (int i = 0; i < static_cast<int>(ranked.size()) && i < room; ++i) v.push(ranked[i].first);
  return v;
}

// Sequences longer than max_len lose counter-narrative tokens from the tail.
// If even the prompt part (through EOS) does not fit, the sample is rejected.
inline EncodedSample encode_sample(const RawSample& sample, const Vocabulary& vocab,
                                   int max_len) {
  if (max_len < 8) throw ConfigError("encode_sample: max_len must be >= 8");
  auto tgt = tokenize(sample.target);
  auto hs = tokenize(sample.hate_speech);
  auto cn = tokenize(sample.counter_narrative);
  if (tgt.empty() || hs.empty() || cn.empty())
    throw InputError("encode_sample: sample has an empty field after trimming");

  EncodedSample e;
  e.ids.push_back(BOS);
  e.target_span.begin = 1;
  for (auto& t : tgt) e.ids.push_back(vocab.id_of(t));
  e.target_span.end = static_cast<int>(e.ids.size());
  e.ids.push_back(EOT);
  e.hs_span.begin = static_cast<int>(e.ids.size());
  for (auto& t : hs) e.ids.push_back(vocab.id_of(t));
  e.hs_span.end = static_cast<int>(e.ids.size());
  e.ids.push_back(EOS);
  const int prompt_len = static_cast<int>(e.ids.size());
  if (prompt_len > max_len)
    throw InputError("encode_sample: prompt of " + std::to_string(prompt_len) +
                     " tokens exceeds max_len " + std::to_string(max_len) +
                     "; truncation would remove EOS");
  e.cn_span.begin = prompt_len;
  for (auto& t : cn) {
    if (static_cast<int>(e.ids.size()) >= max_len) break;
    e.ids.push_back(vocab.id_of(t));
  }
  e.cn_span.end = static_cast<int>(e.ids.size());
  return e;
}

inline std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += vocab.token_of(id);
  }
  return out;
}

struct ToyCorpusSpec {
  int num_targets = 2;
  int samples_per_target = 250;
  int vocab_per_target = 30;
  std::uint64_t seed = 0;
};

inline std::string toy_target_name(int t) { return "target" + std::to_string(t); }

// Keyword sets are derived from the target index alone, so they are stable
// across seeds and disjoint between targets by construction.
inline std::vector<std::string> toy_keywords(int target, int vocab_per_target) {
  std::vector<std::string> kw;
  kw.reserve(vocab_per_target);
  for (int j = 0; j < vocab_per_target; ++j)
    kw.push_back("kw" + std::to_string(target) + "q" + std::to_string(j));
  return kw;
}

inline std::vector<std::string> toy_shared_pool() {
  std::vector<std::string> pool;
  for (int j = 0; j < 8; ++j) pool.push_back("shared" + std::to_string(j));
  return pool;
}

namespace toy_detail {

// Fixed per-target phrase banks. Sentences are built from four-token
// collocations, so sequences stay learnable at desk scale while sentence
// composition still varies. Banks depend on the target index only, never on
// the corpus seed; held-out corpora therefore share the same phrase
// inventory.
inline std::vector<std::vector<std::string>> cn_bank(int target, int vocab_per_target) {
  const auto kw = toy_keywords(target, vocab_per_target);
  const auto pool = toy_shared_pool();
  const int k = static_cast<int>(kw.size());
  std::vector<std::vector<std::string>> bank;
  for (int j = 0; j < 6; ++j)  // keyword-heavy collocations
    bank.push_back({kw[(5 * j + 1) % k], kw[(7 * j + 2) % k], kw[(11 * j + 3) % k],
                    kw[(13 * j + 5) % k]});
  for (int j = 0; j < 6; ++j)  // shared-heavy collocations
    bank.push_back({pool[(3 * j + 1) % pool.size()], pool[(5 * j + 2) % pool.size()],
                    pool[(7 * j + 4) % pool.size()], kw[(17 * j + 7) % k]});
  return bank;
}

inline std::vector<std::vector<std::string>> hs_bank(int target, int vocab_per_target) {
  const auto kw = toy_keywords(target, vocab_per_target);
  const auto pool = toy_shared_pool();
  const int k = static_cast<int>(kw.size());
  std::vector<std::vector<std::string>> bank;
  for (int j = 0; j < 8; ++j)
    bank.push_back({kw[(9 * j + 4) % k], pool[(j + 3) % pool.size()], kw[(15 * j + 6) % k]});
  return bank;
}

inline void append_phrase(std::string& s, const std::vector<std::string>& phrase) {
  for (const auto& w : phrase) {
    if (!s.empty()) s += ' ';
    s += w;
  }
}

}  // namespace toy_detail

// Deterministic synthetic corpus. Counter-narratives for a target draw at
// least half of their tokens from that target's keyword set (keyword-heavy
// collocations are kept in the majority), the rest from the shared pool.
inline std::vector<RawSample> gen_toy_corpus(const ToyCorpusSpec& spec) {
  if (spec.num_targets < 1 || spec.samples_per_target < 1 || spec.vocab_per_target < 1)
    throw ConfigError("gen_toy_corpus: all counts must be >= 1");
  Rng rng(spec.seed * 0x9e3779b9ull + 0xc01dULL);
  std::vector<RawSample> out;
  out.reserve(static_cast<std::size_t>(spec.num_targets) * spec.samples_per_target);
  for (int t = 0; t < spec.num_targets; ++t) {
    const auto cn_phrases = toy_detail::cn_bank(t, spec.vocab_per_target);
    const auto hs_phrases = toy_detail::hs_bank(t, spec.vocab_per_target);
    const std::size_t heavy = cn_phrases.size() / 2;  // first half is keyword-heavy
    for (int s = 0; s < spec.samples_per_target; ++s) {
      RawSample r;
      r.target = toy_target_name(t);

      std::string hs;
      toy_detail::append_phrase(hs, hs_phrases[rng.next_below(hs_phrases.size())]);
      toy_detail::append_phrase(hs, hs_phrases[rng.next_below(hs_phrases.size())]);
      r.hate_speech = hs;

      // three collocations; at least one keyword-heavy keeps the sentence
      // fraction at >= 50% even in the worst draw
      const int n_heavy = 1 + static_cast<int>(rng.next_below(2));
      std::vector<std::size_t> picks;
      for (int i = 0; i < n_heavy; ++i) picks.push_back(rng.next_below(heavy));
      for (int i = n_heavy; i < 3; ++i)
        picks.push_back(heavy + rng.next_below(cn_phrases.size() - heavy));
      rng.shuffle(picks);
      std::string cn;
      for (std::size_t p : picks) toy_detail::append_phrase(cn, cn_phrases[p]);
      r.counter_narrative = cn;
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace cot
