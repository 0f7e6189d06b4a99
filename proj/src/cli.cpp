// SPDX-License-Identifier: Apache-2.0
#include "flexquant/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "flexquant/analyzer.hpp"
#include "flexquant/engine.hpp"
#include "flexquant/fixture.hpp"
#include "flexquant/metrics.hpp"
#include "flexquant/model.hpp"

namespace flexquant::cli {

namespace {

namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open file: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open file for writing: " + path);
  os << content;
}

// Prompt sources: explicit files plus every .txt in a corpus directory,
// sorted by name so runs are reproducible.
std::vector<std::string> collect_prompts(const std::vector<std::string>& files,
                                         const std::string& corpus_dir) {
  std::vector<std::string> out = files;
  if (!corpus_dir.empty()) {
    std::vector<std::string> found;
    for (const auto& entry : fs::directory_iterator(corpus_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".txt")
        found.push_back(entry.path().string());
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  if (out.empty()) throw InputError("no prompt files given");
  return out;
}

std::vector<Rung> parse_bits_list(const std::string& s) {
  std::vector<Rung> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(parse_rung(tok));
  if (out.empty()) throw ConfigError("--bits: empty list");
  return out;
}

std::vector<int64_t> parse_int_list(const std::string& s) {
  std::vector<int64_t> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stoll(tok));
  return out;
}

struct SchedulerFlags {
  double theta = 1.0;
  std::string threshold_mode = "prefill";
  int window_len = 20;
  int layers_per_switch = 1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--theta", theta, "threshold factor (prefill mode) or value (absolute mode)");
    cmd->add_option("--threshold-mode", threshold_mode, "prefill|absolute")
        ->check(CLI::IsMember({"prefill", "absolute"}));
    cmd->add_option("--window-len", window_len, "sliding window length");
    cmd->add_option("--layers-per-switch", layers_per_switch, "plan entries applied per trigger");
  }

  SchedulerConfig to_config() const {
    SchedulerConfig cfg;
    cfg.theta = theta;
    cfg.threshold_mode =
        threshold_mode == "absolute" ? ThresholdMode::Absolute : ThresholdMode::Prefill;
    cfg.window_len = window_len;
    cfg.layers_per_switch = layers_per_switch;
    return cfg;
  }
};

int cmd_make_fixture(const std::string& out, const std::string& preset, uint64_t seed,
                     const std::string& quant_mode, bool zero, bool grid_exact, int64_t max_seq) {
  ModelConfig cfg = preset == "micro" ? micro_config() : tiny_config();
  if (max_seq > 0) cfg.max_seq_len = max_seq;
  const QuantMode mode = quant_mode == "sym" ? QuantMode::Symmetric : QuantMode::Asymmetric;
  Model model = zero          ? make_zero_model(cfg)
                : grid_exact  ? make_grid_exact_model(cfg, seed, mode)
                              : make_fixture_model(cfg, seed, mode);
  save_model_file(model, out);
  std::cout << "wrote " << preset << " fixture (seed " << seed << ", " << to_string(mode)
            << ") to " << out << "\n";
  return 0;
}

int cmd_analyze(const std::string& model_path, const std::string& bits, int bins,
                const std::string& out) {
  const Model model = load_model_file(model_path);
  const std::vector<Rung> rungs = parse_bits_list(bits);
  const SwitchPlan plan = build_ladder_plan(model, rungs, bins);
  save_plan_file(plan, out);
  std::cout << "wrote plan with " << plan.size() << " entries to " << out << "\n";
  return 0;
}

int cmd_generate(const std::string& model_path, const std::string& plan_path,
                 const std::string& prompt_file, const std::string& prompt_text,
                 int64_t max_new, const SchedulerFlags& sched, const std::string& start_rung,
                 const std::string& static_rung, int eos, const std::string& trace_path,
                 const std::string& out_path) {
  Model model = load_model_file(model_path);
  const std::string text = prompt_file.empty() ? prompt_text : read_file(prompt_file);
  const std::vector<TokenId> prompt = bytes_to_tokens(text);

  GenerationConfig cfg;
  cfg.max_new_tokens = max_new;
  cfg.scheduler = sched.to_config();
  cfg.start_rung = parse_rung(start_rung);
  cfg.trace_path = trace_path;
  if (eos >= 0) cfg.eos_token = static_cast<TokenId>(eos);

  GenerationResult result;
  if (!static_rung.empty()) {
    result = generate_static(prompt, model, parse_rung(static_rung), cfg);
  } else {
    const SwitchPlan plan = plan_path.empty() ? SwitchPlan{} : load_plan_file(plan_path);
    result = generate(prompt, model, plan, cfg);
  }

  if (!out_path.empty()) write_file(out_path, tokens_to_bytes(result.sequence));

  size_t switches = 0;
  uint64_t total_ns = 0;
  for (const TraceRecord& r : result.trace.records) {
    switches += r.switch_events.size();
    total_ns += r.elapsed_ns;
  }
  std::cout << "generated " << result.sequence.size() << " tokens, threshold "
            << result.threshold << ", switches " << switches << ", final effective bits "
            << model.effective_bits() << "\n";
  std::cout << "tpot_ns " << (total_ns / std::max<size_t>(result.trace.size(), 1)) << "\n";
  return 0;
}

int cmd_bench(const std::string& model_path, const std::string& plan_path,
              const std::vector<std::string>& prompt_files, const std::string& corpus_dir,
              const std::string& sweep, int64_t max_new, const SchedulerFlags& sched,
              const std::string& start_rung, const std::string& out_path) {
  Model model = load_model_file(model_path);
  const SwitchPlan plan = load_plan_file(plan_path);
  const std::vector<int64_t> speeds = parse_int_list(sweep);
  const std::vector<std::string> prompts = collect_prompts(prompt_files, corpus_dir);

  GenerationConfig cfg;
  cfg.max_new_tokens = max_new;
  cfg.scheduler = sched.to_config();
  cfg.start_rung = parse_rung(start_rung);

  std::ostringstream csv;
  csv << sweep_csv_header();
  std::map<int64_t, SweepRow> totals; // per-speed sums over prompts
  for (const std::string& path : prompts) {
    const std::vector<TokenId> prompt = bytes_to_tokens(read_file(path));
    const std::vector<SweepRow> rows = sweep_switch_speed(prompt, model, plan, speeds, cfg);
    const std::string name = fs::path(path).filename().string();
    for (const SweepRow& row : rows) {
      csv << sweep_csv_row(name, row);
      SweepRow& sum = totals[row.speed];
      sum.speed = row.speed;
      sum.agreement_vs_fp += row.agreement_vs_fp;
      sum.mean_bytes_per_token += row.mean_bytes_per_token;
      sum.rouge_l_vs_fp += row.rouge_l_vs_fp;
      sum.final_effective_bits += row.final_effective_bits;
    }
  }
  const double n_prompts = static_cast<double>(prompts.size());
  for (auto& [speed, sum] : totals) {
    SweepRow mean;
    mean.speed = speed;
    mean.agreement_vs_fp = sum.agreement_vs_fp / n_prompts;
    mean.mean_bytes_per_token = sum.mean_bytes_per_token / n_prompts;
    mean.rouge_l_vs_fp = sum.rouge_l_vs_fp / n_prompts;
    mean.final_effective_bits = sum.final_effective_bits / n_prompts;
    csv << sweep_csv_row("MEAN", mean);
  }
  write_file(out_path, csv.str());
  std::cout << "wrote sweep over " << prompts.size() << " prompts x " << speeds.size()
            << " speeds to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& plan_path,
             const std::vector<std::string>& prompt_files, const std::string& corpus_dir,
             int64_t max_new, const SchedulerFlags& sched, const std::string& start_rung,
             const std::string& out_path) {
  Model model = load_model_file(model_path);
  const SwitchPlan plan = load_plan_file(plan_path);
  const std::vector<std::string> prompts = collect_prompts(prompt_files, corpus_dir);

  GenerationConfig cfg;
  cfg.max_new_tokens = max_new;
  cfg.scheduler = sched.to_config();
  cfg.start_rung = parse_rung(start_rung);

  EvalReport report;
  for (const std::string& path : prompts) {
    const std::vector<TokenId> prompt = bytes_to_tokens(read_file(path));
    const GenerationResult base = generate_static(prompt, model, Rung::Fp, cfg);
    const GenerationResult dyn = generate(prompt, model, plan, cfg);

    report.effective_bits_final += model.effective_bits();
    double bits_sum = 0.0, bytes_sum = 0.0;
    for (const TraceRecord& r : dyn.trace.records) {
      bits_sum += r.effective_bits;
      bytes_sum += r.weight_bytes_touched;
    }
    report.effective_bits_mean += bits_sum / static_cast<double>(dyn.trace.size());
    report.bytes_per_token_mean += bytes_sum / static_cast<double>(dyn.trace.size());
    report.rouge_l += rouge_l(dyn.sequence, base.sequence);
    report.agreement_rate += agreement_rate(dyn.sequence, base.sequence).rate;
    // Perplexity of the prompt text under the post-generation mixed state.
    report.perplexity += corpus_perplexity(model, prompt);
  }
  const double n = static_cast<double>(prompts.size());
  report.effective_bits_final /= n;
  report.effective_bits_mean /= n;
  report.bytes_per_token_mean /= n;
  report.rouge_l /= n;
  report.agreement_rate /= n;
  report.perplexity /= n;

  const std::string text = format_eval_report(report);
  if (!out_path.empty()) write_file(out_path, text);
  std::cout << text;
  return 0;
}

int cmd_report(const std::string& trace_path, const std::string& out_path) {
  const DecodeTrace trace = load_trace_file(trace_path);
  if (!out_path.empty()) write_file(out_path, trace_to_csv(trace));
  std::cout << format_traffic_report(traffic_report(trace));
  return 0;
}

} // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"dynamic-precision transformer inference engine"};
  app.require_subcommand(1);

  // make-fixture
  auto* mk = app.add_subcommand("make-fixture", "build a seeded pseudo-random model file");
  std::string mk_out, mk_preset = "tiny", mk_mode = "asym";
  uint64_t mk_seed = 1;
  bool mk_zero = false, mk_grid = false;
  int64_t mk_max_seq = 0;
  mk->add_option("--out", mk_out, "output weights file")->required();
  mk->add_option("--preset", mk_preset, "tiny|micro")->check(CLI::IsMember({"tiny", "micro"}));
  mk->add_option("--seed", mk_seed, "rng seed");
  mk->add_option("--quant-mode", mk_mode, "asym|sym")->check(CLI::IsMember({"asym", "sym"}));
  mk->add_flag("--zero", mk_zero, "all-zero weights (uniform logits)");
  mk->add_flag("--grid-exact", mk_grid, "snap weights to the 8-bit grid");
  mk->add_option("--max-seq", mk_max_seq, "override max sequence length");

  // analyze
  auto* an = app.add_subcommand("analyze", "offline per-layer divergence analysis -> switch plan");
  std::string an_model, an_bits = "8,4", an_out;
  int an_bins = kDefaultHistogramBins;
  an->add_option("--model", an_model, "weights file")->required();
  an->add_option("--bits", an_bits, "comma-separated rung ladder, e.g. 8,4");
  an->add_option("--bins", an_bins, "histogram bins");
  an->add_option("--out", an_out, "output plan file")->required();

  // generate
  auto* gen = app.add_subcommand("generate", "dynamic-precision greedy generation");
  std::string g_model, g_plan, g_prompt_file, g_prompt, g_start = "fp", g_static, g_trace, g_out;
  int64_t g_max_new = 64;
  int g_eos = -1;
  SchedulerFlags g_sched;
  gen->add_option("--model", g_model, "weights file")->required();
  gen->add_option("--plan", g_plan, "switch plan file");
  gen->add_option("--prompt-file", g_prompt_file, "prompt text file");
  gen->add_option("--prompt", g_prompt, "prompt text");
  gen->add_option("--max-new", g_max_new, "max new tokens");
  g_sched.attach(gen);
  gen->add_option("--start-rung", g_start, "fp|8");
  gen->add_option("--static-rung", g_static, "pin all layers to fp|8|4 and disable switching");
  gen->add_option("--eos", g_eos, "stop token id");
  gen->add_option("--trace", g_trace, "trace output (jsonl)");
  gen->add_option("--out", g_out, "generated bytes output file");

  // bench
  auto* bn = app.add_subcommand("bench", "switching-speed sweep");
  std::string b_model, b_plan, b_corpus, b_sweep = "1,5,10,20,40", b_start = "fp", b_out;
  std::vector<std::string> b_prompts;
  int64_t b_max_new = 200;
  SchedulerFlags b_sched;
  bn->add_option("--model", b_model, "weights file")->required();
  bn->add_option("--plan", b_plan, "switch plan file")->required();
  bn->add_option("--prompt-file", b_prompts, "prompt text file (repeatable)");
  bn->add_option("--corpus", b_corpus, "directory of .txt prompts");
  bn->add_option("--sweep", b_sweep, "comma-separated tokens-per-switch list");
  bn->add_option("--max-new", b_max_new, "tokens per run");
  b_sched.attach(bn);
  bn->add_option("--start-rung", b_start, "fp|8");
  bn->add_option("--out", b_out, "output csv")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "dynamic vs full-precision evaluation report");
  std::string e_model, e_plan, e_corpus, e_start = "fp", e_out;
  std::vector<std::string> e_prompts;
  int64_t e_max_new = 128;
  SchedulerFlags e_sched;
  ev->add_option("--model", e_model, "weights file")->required();
  ev->add_option("--plan", e_plan, "switch plan file")->required();
  ev->add_option("--prompt-file", e_prompts, "prompt text file (repeatable)");
  ev->add_option("--corpus", e_corpus, "directory of .txt prompts");
  ev->add_option("--max-new", e_max_new, "tokens per run");
  e_sched.attach(ev);
  ev->add_option("--start-rung", e_start, "fp|8");
  ev->add_option("--out", e_out, "output report file");

  // report
  auto* rp = app.add_subcommand("report", "render a trace to csv and print the latency breakdown");
  std::string r_trace, r_out;
  rp->add_option("--trace", r_trace, "trace jsonl file")->required();
  rp->add_option("--out", r_out, "output csv file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed); // CLI11 consumes tokens back to front
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (mk->parsed())
      return cmd_make_fixture(mk_out, mk_preset, mk_seed, mk_mode, mk_zero, mk_grid, mk_max_seq);
    if (an->parsed()) return cmd_analyze(an_model, an_bits, an_bins, an_out);
    if (gen->parsed())
      return cmd_generate(g_model, g_plan, g_prompt_file, g_prompt, g_max_new, g_sched, g_start,
                          g_static, g_eos, g_trace, g_out);
    if (bn->parsed())
      return cmd_bench(b_model, b_plan, b_prompts, b_corpus, b_sweep, b_max_new, b_sched, b_start,
                       b_out);
    if (ev->parsed())
      return cmd_eval(e_model, e_plan, e_prompts, e_corpus, e_max_new, e_sched, e_start, e_out);
    if (rp->parsed()) return cmd_report(r_trace, r_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

} // namespace flexquant::cli
