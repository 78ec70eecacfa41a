// Command-line front end: corpus generation, training, generation,
// evaluation, diagnostics and significance testing.

#include "cot/checkpoint.hpp"
#include "cot/corpus.hpp"
#include "cot/decoder.hpp"
#include "cot/metrics.hpp"
#include "cot/model.hpp"
#include "cot/ot.hpp"
#include "cot/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

std::string fmt_sig(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

void write_csv_matrix(const std::string& path, const cot::Mat& m, int digits) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw cot::IoError("cannot open CSV for writing: " + path);
  for (long i = 0; i < m.rows(); ++i) {
    for (long j = 0; j < m.cols(); ++j) {
      if (j) f << ',';
      f << fmt_sig(m(i, j), digits);
    }
    f << '\n';
  }
}

std::vector<cot::Tokens> load_text_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw cot::IoError("cannot open file: " + path);
  std::vector<cot::Tokens> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (cot::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string())
      throw cot::ParseError(path + ":" + std::to_string(lineno) +
                            ": expected an object with a string \"text\" key");
    out.push_back(cot::tokenize(j["text"].get<std::string>()));
  }
  return out;
}

// accepts either {"text": ...} lines or full dataset triples (the
// counter-narrative field is what Novelty compares against)
std::vector<cot::Tokens> load_reference_texts(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw cot::IoError("cannot open file: " + path);
  std::vector<cot::Tokens> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (cot::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.is_object()) {
      if (j.contains("text") && j["text"].is_string()) {
        out.push_back(cot::tokenize(j["text"].get<std::string>()));
        continue;
      }
      if (j.contains("counter_narrative") && j["counter_narrative"].is_string()) {
        out.push_back(cot::tokenize(j["counter_narrative"].get<std::string>()));
        continue;
      }
    }
    throw cot::ParseError(path + ":" + std::to_string(lineno) +
                          ": expected \"text\" or \"counter_narrative\"");
  }
  return out;
}

std::vector<double> load_score_column(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw cot::IoError("cannot open score file: " + path);
  std::vector<double> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::string s = cot::trim(line);
    if (s.empty()) continue;
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      out.push_back(v);
    } catch (const std::exception&) {
      if (lineno == 1) continue;  // tolerate a header line
      throw cot::ParseError(path + ":" + std::to_string(lineno) + ": not a number: " + s);
    }
  }
  return out;
}

std::vector<int> build_prompt(const cot::RawSample& s, const cot::Vocabulary& vocab) {
  std::vector<int> p;
  p.push_back(cot::BOS);
  for (const auto& t : cot::tokenize(s.target)) p.push_back(vocab.id_of(t));
  p.push_back(cot::EOT);
  for (const auto& t : cot::tokenize(s.hate_speech)) p.push_back(vocab.id_of(t));
  p.push_back(cot::EOS);
  return p;
}

std::array<double, 3> parse_alphas(const std::string& s) {
  std::array<double, 3> a{};
  std::stringstream ss(s);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 3) throw cot::ConfigError("--alphas expects three comma-separated values");
    a[i++] = std::stod(cot::trim(part));
  }
  if (i != 3) throw cot::ConfigError("--alphas expects three comma-separated values");
  return a;
}

int cmd_gen_toy(int targets, int per_target, int vocab_per_target, std::uint64_t seed,
                const std::string& out) {
  cot::ToyCorpusSpec spec;
  spec.num_targets = targets;
  spec.samples_per_target = per_target;
  spec.vocab_per_target = vocab_per_target;
  spec.seed = seed;
  cot::save_jsonl(out, cot::gen_toy_corpus(spec));
  std::cerr << "wrote " << targets * per_target << " samples to " << out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, train_path, valid_path, out_dir;
  std::string preset = "desk";
  int d = 64, layers = 2, heads = 4, d_ff = 256, n_max = 128, vocab_max = 2048;
};

int cmd_train(const TrainArgs& a) {
  cot::TrainConfig cfg =
      a.config.empty() ? cot::TrainConfig{} : cot::parse_train_config(a.config);
  cot::ModelConfig arch;
  if (a.preset == "full") {
    arch = cot::ModelConfig::full_scale();
  } else if (a.preset == "desk") {
    arch.d = a.d;
    arch.n_layers = a.layers;
    arch.n_heads = a.heads;
    arch.d_ff = a.d_ff;
    arch.n_max = a.n_max;
  } else {
    throw cot::ConfigError("--model-preset must be desk or full");
  }
  std::filesystem::create_directories(a.out_dir);
  auto train_samples = cot::load_jsonl(a.train_path);
  auto valid_samples = cot::load_jsonl(a.valid_path);
  cot::TrainResult res =
      cot::train(cfg, arch, a.vocab_max, train_samples, valid_samples, a.out_dir);
  std::cerr << "finished after " << res.steps_completed << " steps"
            << (res.stopped_early ? " (early stop)" : "") << "; best validation total "
            << res.best_val_total << "\n"
            << "checkpoint: " << res.checkpoint_path << "\n"
            << "log: " << res.log_path << "\n";
  return 0;
}

struct GenerateArgs {
  std::string ckpt, input, out, strategy = "target";
  int k = 8, beam = 7, max_len = 80;
  double top_p = 0.9, contra_alpha = 0.6;
  std::string alphas = "0.6,0.2,0.2";
  std::uint64_t seed = 0;
  bool scores = false;
  bool penalize_prompt = false;
};

int cmd_generate(const GenerateArgs& a) {
  cot::Checkpoint ck = cot::load_checkpoint(a.ckpt);
  cot::DecodeConfig cfg;
  cfg.strategy = cot::strategy_from_string(a.strategy);
  cfg.k = a.k;
  cfg.alphas = parse_alphas(a.alphas);
  cfg.beam_width = a.beam;
  cfg.top_p = a.top_p;
  cfg.max_len = a.max_len;
  cfg.seed = a.seed;
  cfg.contrastive_alpha = a.contra_alpha;
  cfg.penalize_prompt = a.penalize_prompt;
  cfg.validate();

  auto samples = cot::load_jsonl_prompts(a.input);
  std::ofstream out(a.out, std::ios::binary);
  if (!out) throw cot::IoError("cannot open output for writing: " + a.out);
  for (const auto& s : samples) {
    const auto prompt = build_prompt(s, ck.vocab);
    cot::GenerationResult g = cot::decode(ck.params, prompt, cfg);
    json row;
    row["target"] = s.target;
    row["hate_speech"] = s.hate_speech;
    row["generated"] = cot::detokenize(g.ids, ck.vocab);
    row["strategy"] = cot::to_string(cfg.effective_strategy());
    if (a.scores) {
      json steps = json::array();
      for (const auto& st : g.steps)
        steps.push_back({{"s_c", st.s_c}, {"s_p", st.s_p}, {"s_a", st.s_a},
                         {"combined", st.combined}});
      row["scores"] = steps;
      row["termination"] = cot::to_string(g.reason);
    }
    out << row.dump() << "\n";
  }
  return 0;
}

struct EvalArgs {
  std::string hyp, ref, train_corpus, synonyms, out, per_sentence;
};

int cmd_eval(const EvalArgs& a) {
  auto hyp = load_text_jsonl(a.hyp);
  auto ref = load_text_jsonl(a.ref);
  std::optional<std::vector<cot::Tokens>> train;
  if (!a.train_corpus.empty()) train = load_reference_texts(a.train_corpus);
  cot::SynonymTable syn;
  if (!a.synonyms.empty()) syn = cot::SynonymTable::load(a.synonyms);

  cot::MetricReport rep = cot::evaluate_corpus(hyp, ref, train ? &*train : nullptr,
                                               cot::MeteorParams{}, syn.empty() ? nullptr : &syn);
  json j;
  j["count"] = hyp.size();
  j["mp"] = rep.mp;
  j["bleu"] = {{"1", rep.bleu[0]}, {"2", rep.bleu[1]}, {"3", rep.bleu[2]}, {"4", rep.bleu[3]}};
  j["meteor"] = rep.meteor;
  j["novelty"] = rep.novelty ? json(*rep.novelty) : json(nullptr);
  j["diversity"] = rep.diversity ? json(*rep.diversity) : json(nullptr);
  std::ofstream out(a.out, std::ios::binary);
  if (!out) throw cot::IoError("cannot open output for writing: " + a.out);
  out << j.dump(2) << "\n";

  if (!a.per_sentence.empty()) {
    std::ofstream csv(a.per_sentence, std::ios::binary);
    if (!csv) throw cot::IoError("cannot open CSV for writing: " + a.per_sentence);
    csv << "index,mp,bleu1,bleu2,bleu3,bleu4,meteor,novelty,diversity\n";
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      csv << i << ',' << fmt_sig(rep.mp_s[i], 9);
      for (int n = 0; n < 4; ++n) csv << ',' << fmt_sig(rep.bleu_s[n][i], 9);
      csv << ',' << fmt_sig(rep.meteor_s[i], 9) << ',';
      if (!rep.novelty_s.empty()) csv << fmt_sig(rep.novelty_s[i], 9);
      csv << ',';
      if (!rep.diversity_s.empty()) csv << fmt_sig(rep.diversity_s[i], 9);
      csv << '\n';
    }
  }
  return 0;
}

struct InspectArgs {
  std::string ckpt, input, out, hidden_out, dump_plan;
  double ot_eta = 0.1, ot_epsilon = 0.1;
  int ot_iters = 5;
  std::string ot_cost = "kernel";
};

int cmd_inspect(const InspectArgs& a) {
  cot::Checkpoint ck = cot::load_checkpoint(a.ckpt);
  auto samples = cot::load_jsonl(a.input);
  if (samples.empty()) throw cot::InputError("inspect: input file holds no samples");
  cot::EncodedSample enc = cot::encode_sample(samples.front(), ck.vocab, ck.params.cfg.n_max);

  cot::ForwardOutput fw = cot::forward(ck.params, enc.ids);
  const long n = fw.last_hidden.rows();
  cot::Mat sim(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j)
      sim(i, j) = i == j ? 1.0
                         : cot::cosine(fw.last_hidden.row(i), fw.last_hidden.row(j));
  write_csv_matrix(a.out, sim, 9);

  const std::string hidden_path =
      a.hidden_out.empty() ? a.out + ".hidden.csv" : a.hidden_out;
  write_csv_matrix(hidden_path, fw.last_hidden, 9);

  if (!a.dump_plan.empty()) {
    const long n_sent = enc.hs_span.size() + enc.cn_span.size();
    cot::Mat r_t = fw.last_hidden.middleRows(enc.target_span.begin, enc.target_span.size());
    cot::Mat r_s(n_sent, fw.last_hidden.cols());
    r_s.topRows(enc.hs_span.size()) =
        fw.last_hidden.middleRows(enc.hs_span.begin, enc.hs_span.size());
    r_s.bottomRows(enc.cn_span.size()) =
        fw.last_hidden.middleRows(enc.cn_span.begin, enc.cn_span.size());
    cot::CostMatrix cost =
        cot::cost_matrix(r_t, r_s, a.ot_eta, cot::cost_kind_from_string(a.ot_cost));
    cot::TransportPlan plan =
        cot::sinkhorn(cost, cot::uniform_weights(r_t.rows()), cot::uniform_weights(n_sent),
                      a.ot_epsilon, a.ot_iters, 0.0);
    write_csv_matrix(a.dump_plan, plan.p, 17);
    std::cerr << "plan residual " << plan.residual << " after " << plan.iterations_run
              << " iterations\n";
  }
  return 0;
}

int cmd_ttest(const std::string& a_path, const std::string& b_path) {
  auto a = load_score_column(a_path);
  auto b = load_score_column(b_path);
  cot::TTestResult r = cot::paired_ttest(a, b);
  json j;
  j["mean_diff"] = r.mean_diff;
  j["std_error"] = r.std_error;
  j["t_statistic"] = r.t_statistic;
  j["degrees_of_freedom"] = r.degrees_of_freedom;
  j["p_value_one_sided"] = r.p_value;
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"counter-narrative generation toolkit"};
  app.require_subcommand(1);

  // gen-toy
  int targets = 2, per_target = 250, vocab_per_target = 30;
  std::uint64_t toy_seed = 0;
  std::string toy_out;
  auto* gen_toy = app.add_subcommand("gen-toy", "generate a synthetic keyword-keyed corpus");
  gen_toy->add_option("--targets", targets, "number of target categories")->required();
  gen_toy->add_option("--per-target", per_target, "samples per target")->required();
  gen_toy->add_option("--seed", toy_seed, "rng seed")->required();
  gen_toy->add_option("--out", toy_out, "output JSONL path")->required();
  gen_toy->add_option("--vocab-per-target", vocab_per_target, "keywords per target");

  // train
  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", ta.config, "key = value training config");
  train->add_option("--train", ta.train_path, "training JSONL")->required();
  train->add_option("--valid", ta.valid_path, "validation JSONL")->required();
  train->add_option("--out", ta.out_dir, "output directory")->required();
  train->add_option("--model-preset", ta.preset, "desk|full");
  train->add_option("--d", ta.d, "embedding width");
  train->add_option("--layers", ta.layers, "transformer layers");
  train->add_option("--heads", ta.heads, "attention heads");
  train->add_option("--d-ff", ta.d_ff, "feed-forward width");
  train->add_option("--n-max", ta.n_max, "max sequence length");
  train->add_option("--vocab-max", ta.vocab_max, "vocabulary cap");

  // generate
  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "decode counter-narratives for prompts");
  gen->add_option("--ckpt", ga.ckpt, "checkpoint path")->required();
  gen->add_option("--input", ga.input, "JSONL with target + hate_speech")->required();
  gen->add_option("--strategy", ga.strategy, "greedy|beam|nucleus|contrastive|target")
      ->required();
  gen->add_option("--k", ga.k, "top-k candidate count");
  gen->add_option("--alphas", ga.alphas, "a1,a2,a3 for the target strategy");
  gen->add_option("--beam", ga.beam, "beam width");
  gen->add_option("--top-p", ga.top_p, "nucleus mass");
  gen->add_option("--max-len", ga.max_len, "max generated tokens");
  gen->add_option("--seed", ga.seed, "sampling seed (nucleus)");
  gen->add_option("--contra-alpha", ga.contra_alpha, "contrastive penalty weight");
  gen->add_flag("--scores", ga.scores, "include per-step score traces");
  gen->add_flag("--penalize-prompt", ga.penalize_prompt,
                "extend the degeneration penalty over prompt tokens");
  gen->add_option("--out", ga.out, "output JSONL path")->required();

  // eval
  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score hypotheses against references");
  eval->add_option("--hyp", ea.hyp, "hypotheses JSONL (key \"text\")")->required();
  eval->add_option("--ref", ea.ref, "references JSONL (key \"text\")")->required();
  eval->add_option("--train-corpus", ea.train_corpus, "training corpus for Novelty");
  eval->add_option("--synonyms", ea.synonyms, "tab-separated synonym classes");
  eval->add_option("--out", ea.out, "metric report JSON path")->required();
  eval->add_option("--per-sentence", ea.per_sentence, "per-sentence score CSV path");

  // inspect
  InspectArgs ia;
  auto* inspect = app.add_subcommand("inspect", "token similarity / hidden state diagnostics");
  inspect->add_option("--ckpt", ia.ckpt, "checkpoint path")->required();
  inspect->add_option("--input", ia.input, "JSONL; the first sample is inspected")->required();
  inspect->add_option("--out", ia.out, "token cosine-similarity CSV")->required();
  inspect->add_option("--hidden-out", ia.hidden_out, "raw last-layer hidden state CSV");
  inspect->add_option("--dump-plan", ia.dump_plan, "write the transport plan CSV");
  inspect->add_option("--ot-eta", ia.ot_eta, "kernel bandwidth");
  inspect->add_option("--ot-epsilon", ia.ot_epsilon, "entropic regularization");
  inspect->add_option("--ot-iters", ia.ot_iters, "sinkhorn iterations");
  inspect->add_option("--ot-cost", ia.ot_cost, "kernel|neg_dot|gaussian");

  // ttest
  std::string tt_a, tt_b;
  auto* tt = app.add_subcommand("ttest", "paired t-test over per-sentence score files");
  tt->add_option("--a", tt_a, "scores A (one value per line)")->required();
  tt->add_option("--b", tt_b, "scores B (one value per line)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_toy) return cmd_gen_toy(targets, per_target, vocab_per_target, toy_seed, toy_out);
    if (*train) return cmd_train(ta);
    if (*gen) return cmd_generate(ga);
    if (*eval) return cmd_eval(ea);
    if (*inspect) return cmd_inspect(ia);
    if (*tt) return cmd_ttest(tt_a, tt_b);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
