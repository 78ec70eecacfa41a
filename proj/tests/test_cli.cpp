#include <catch2/catch_amalgamated.hpp>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace {

namespace fs = std::filesystem;

const std::string kCli = COT_CLI_PATH;

const std::string& dir() {
  static std::string d = [] {
    auto p = fs::temp_directory_path() / "cot_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
  }();
  return d;
}

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>> " + (dir() + "/stderr.log");
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string read_file(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

int count_lines(const std::string& p) {
  std::ifstream f(p);
  std::string line;
  int n = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("cli round trip: gen-toy, train, generate, eval, inspect, ttest") {
  const std::string d = dir();

  SECTION("everything, in dependency order") {
    // --- gen-toy: deterministic given the seed
    REQUIRE(run("gen-toy --targets 2 --per-target 24 --seed 5 --out " + d + "/train.jsonl") == 0);
    REQUIRE(run("gen-toy --targets 2 --per-target 24 --seed 5 --out " + d + "/train2.jsonl") ==
            0);
    CHECK(read_file(d + "/train.jsonl") == read_file(d + "/train2.jsonl"));
    REQUIRE(run("gen-toy --targets 2 --per-target 6 --seed 6 --out " + d + "/valid.jsonl") == 0);
    CHECK(count_lines(d + "/train.jsonl") == 48);

    // --- train
    {
      std::ofstream cfg(d + "/cfg.txt");
      cfg << "total_steps = 80\nbatch_size = 8\neval_every = 40\npatience = 10\n"
          << "peak_lr = 1e-3\nseed = 42\n";
    }
    REQUIRE(run("train --config " + d + "/cfg.txt --train " + d + "/train.jsonl --valid " + d +
                "/valid.jsonl --out " + d + "/run") == 0);
    CHECK(fs::exists(d + "/run/model.ckpt"));
    CHECK(fs::exists(d + "/run/train_log.jsonl"));
    CHECK(fs::exists(d + "/run/vocab.txt"));

    // --- generate: greedy vs target with alphas 1,0,0 must be byte-identical
    const std::string ckpt = d + "/run/model.ckpt";
    REQUIRE(run("generate --ckpt " + ckpt + " --input " + d +
                "/valid.jsonl --strategy greedy --out " + d + "/g_greedy.jsonl") == 0);
    REQUIRE(run("generate --ckpt " + ckpt + " --input " + d +
                "/valid.jsonl --strategy target --alphas 1,0,0 --out " + d +
                "/g_t100.jsonl") == 0);
    CHECK(read_file(d + "/g_greedy.jsonl") == read_file(d + "/g_t100.jsonl"));
    CHECK(count_lines(d + "/g_greedy.jsonl") == 12);

    REQUIRE(run("generate --ckpt " + ckpt + " --input " + d +
                "/valid.jsonl --strategy target --scores --out " + d + "/g_target.jsonl") == 0);
    {
      std::ifstream f(d + "/g_target.jsonl");
      std::string line;
      REQUIRE(std::getline(f, line).good());
      auto j = nlohmann::json::parse(line);
      CHECK(j.contains("target"));
      CHECK(j.contains("hate_speech"));
      CHECK(j.contains("generated"));
      CHECK(j["strategy"] == "target");
      CHECK(j.contains("scores"));
    }

    // nucleus decoding twice with the same seed is deterministic
    REQUIRE(run("generate --ckpt " + ckpt + " --input " + d +
                "/valid.jsonl --strategy nucleus --seed 7 --out " + d + "/g_n1.jsonl") == 0);
    REQUIRE(run("generate --ckpt " + ckpt + " --input " + d +
                "/valid.jsonl --strategy nucleus --seed 7 --out " + d + "/g_n2.jsonl") == 0);
    CHECK(read_file(d + "/g_n1.jsonl") == read_file(d + "/g_n2.jsonl"));

    // --- eval: identity corpus scores BLEU-1 = 1
    {
      std::ifstream in(d + "/valid.jsonl");
      std::ofstream hyp(d + "/hyp.jsonl"), ref(d + "/ref.jsonl");
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        nlohmann::json t{{"text", j["counter_narrative"]}};
        hyp << t.dump() << "\n";
        ref << t.dump() << "\n";
      }
    }
    REQUIRE(run("eval --hyp " + d + "/hyp.jsonl --ref " + d + "/ref.jsonl --train-corpus " + d +
                "/train.jsonl --out " + d + "/report.json --per-sentence " + d + "/ps.csv") ==
            0);
    auto rep = nlohmann::json::parse(read_file(d + "/report.json"));
    CHECK(rep["bleu"]["1"].get<double>() == 1.0);
    CHECK(rep["mp"].get<double>() == 1.0);
    CHECK(rep["novelty"].is_number());
    CHECK(count_lines(d + "/ps.csv") == 13);  // header + 12 rows

    // --- inspect: n x n cosine matrix with a unit diagonal
    REQUIRE(run("inspect --ckpt " + ckpt + " --input " + d + "/valid.jsonl --out " + d +
                "/sim.csv --dump-plan " + d + "/plan.csv") == 0);
    {
      std::ifstream f(d + "/sim.csv");
      std::string line;
      int rows = 0;
      std::size_t cols = 0;
      int diag_ok = 0;
      while (std::getline(f, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        if (cols == 0) cols = vals.size();
        CHECK(vals.size() == cols);
        if (std::abs(vals[rows] - 1.0) < 1e-9) ++diag_ok;
        ++rows;
      }
      CHECK(rows == static_cast<int>(cols));
      CHECK(diag_ok == rows);
      CHECK(fs::exists(d + "/sim.csv.hidden.csv"));
      CHECK(fs::exists(d + "/plan.csv"));
    }

    // --- ttest on per-sentence scores
    {
      std::ofstream a(d + "/a.csv"), b(d + "/b.csv");
      a << "0.9\n0.8\n0.95\n0.7\n";
      b << "0.5\n0.6\n0.4\n0.65\n";
    }
    const std::string cmd = kCli + " ttest --a " + d + "/a.csv --b " + d + "/b.csv > " + d +
                            "/tt.json 2>/dev/null";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    auto tt = nlohmann::json::parse(read_file(d + "/tt.json"));
    CHECK(tt["t_statistic"].get<double>() > 0.0);
    CHECK(tt["degrees_of_freedom"].get<double>() == 3.0);
    CHECK(tt["p_value_one_sided"].get<double>() < 0.05);
  }
}

TEST_CASE("cli exit codes: 2 on usage errors, 1 on runtime errors") {
  CHECK(run("no-such-subcommand") == 2);
  CHECK(run("train --train missing.jsonl") == 2);  // missing required flags
  CHECK(run("generate --ckpt /nonexistent.ckpt --input /nonexistent.jsonl --strategy greedy "
            "--out /tmp/cot_cli_x.jsonl") == 1);
  CHECK(run("ttest --a /nonexistent.csv --b /nonexistent.csv") == 1);
}
