// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "flexquant/cli.hpp"
#include "flexquant/engine.hpp"

using namespace flexquant;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / "flexquant_cli_test";
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(std::initializer_list<std::string> args) {
  return cli::run(std::vector<std::string>(args));
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Trace lines with the timing fields removed.
std::vector<nlohmann::json> trace_minus_timing(const std::string& path) {
  std::vector<nlohmann::json> out;
  std::ifstream is(path);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    j.erase("elapsed_ns");
    j.erase("buckets");
    out.push_back(std::move(j));
  }
  return out;
}

} // namespace

TEST_CASE("cli end-to-end pipeline") {
  TempDir tmp;
  const std::string model = tmp.file("m.fqw");
  const std::string plan = tmp.file("m.fqp");
  const std::string prompt = tmp.file("p.txt");
  std::ofstream(prompt) << "Rain fell on the tin roof while the kettle warmed slowly.";

  REQUIRE(run_cli({"make-fixture", "--out", model, "--preset", "micro", "--seed", "11"}) == 0);
  REQUIRE(run_cli({"analyze", "--model", model, "--bits", "8,4", "--bins", "256", "--out", plan}) == 0);

  const SwitchPlan loaded = load_plan_file(plan);
  CHECK(loaded.size() == 26);

  SUBCASE("generate writes sequence and trace") {
    const std::string trace = tmp.file("t.jsonl");
    const std::string out = tmp.file("seq.bin");
    REQUIRE(run_cli({"generate", "--model", model, "--plan", plan, "--prompt-file", prompt,
                     "--max-new", "32", "--theta", "1.0", "--threshold-mode", "prefill",
                     "--trace", trace, "--out", out}) == 0);
    CHECK(fs::file_size(out) == 32);
    CHECK(trace_minus_timing(trace).size() == 32);
  }

  SUBCASE("repeated invocations are bit-identical apart from timing") {
    const std::string t1 = tmp.file("t1.jsonl"), t2 = tmp.file("t2.jsonl");
    const std::string o1 = tmp.file("o1.bin"), o2 = tmp.file("o2.bin");
    for (auto [t, o] : {std::pair{t1, o1}, std::pair{t2, o2}})
      REQUIRE(run_cli({"generate", "--model", model, "--plan", plan, "--prompt-file", prompt,
                       "--max-new", "40", "--trace", t, "--out", o}) == 0);
    CHECK(slurp(o1) == slurp(o2));
    CHECK(trace_minus_timing(t1) == trace_minus_timing(t2));
  }

  SUBCASE("static rung pins every layer") {
    const std::string trace = tmp.file("ts.jsonl");
    REQUIRE(run_cli({"generate", "--model", model, "--prompt-file", prompt, "--max-new", "8",
                     "--static-rung", "4", "--trace", trace}) == 0);
    for (const nlohmann::json& j : trace_minus_timing(trace))
      CHECK(j.at("effective_bits").get<double>() == 4.0);
  }

  SUBCASE("bench produces a sweep csv") {
    const std::string csv = tmp.file("sweep.csv");
    REQUIRE(run_cli({"bench", "--model", model, "--plan", plan, "--prompt-file", prompt,
                     "--sweep", "5,50", "--max-new", "30", "--out", csv}) == 0);
    const std::string content = slurp(csv);
    CHECK(content.rfind("prompt,speed,final_effective_bits", 0) == 0);
    CHECK(content.find("MEAN,5,") != std::string::npos);
    CHECK(content.find("MEAN,50,") != std::string::npos);
  }

  SUBCASE("eval emits a structured report") {
    const std::string rep = tmp.file("eval.txt");
    REQUIRE(run_cli({"eval", "--model", model, "--plan", plan, "--prompt-file", prompt,
                     "--max-new", "24", "--out", rep}) == 0);
    const std::string content = slurp(rep);
    CHECK(content.rfind("flexquant-eval v1", 0) == 0);
    for (const char* key : {"effective_bits_final=", "effective_bits_mean=", "rouge_l=",
                            "agreement_rate=", "perplexity=", "bytes_per_token_mean="})
      CHECK(content.find(key) != std::string::npos);
  }

  SUBCASE("report renders csv from a trace") {
    const std::string trace = tmp.file("tr.jsonl");
    const std::string csv = tmp.file("tr.csv");
    REQUIRE(run_cli({"generate", "--model", model, "--plan", plan, "--prompt-file", prompt,
                     "--max-new", "12", "--trace", trace}) == 0);
    REQUIRE(run_cli({"report", "--trace", trace, "--out", csv}) == 0);
    const std::string content = slurp(csv);
    CHECK(content.rfind("token_index,token_id,ppl_entropy", 0) == 0);
    CHECK(std::count(content.begin(), content.end(), '\n') == 13); // header + 12 rows
  }
}

TEST_CASE("cli rejects unknown arguments and missing files") {
  CHECK(run_cli({"no-such-command"}) != 0);
  CHECK(run_cli({"analyze", "--model", "missing.fqw", "--out", "x.fqp"}) != 0);
  CHECK(run_cli({"generate", "--model", "missing.fqw", "--prompt", "hi"}) != 0);
}
