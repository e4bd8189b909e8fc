#include "codemend/commands.hpp"
#include "codemend/error.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

// Flag values land on top of the config file: flags > file > defaults.
template <typename T>
void override_key(codemend::RunConfig& config, const std::string& section,
                  const std::string& key, const std::optional<T>& value) {
  if (value) {
    config.doc[section][key] = *value;
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"oracle-guided vulnerable-code repair, fine-tuning data "
               "synthesis, and code-security evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> output_dir;
  std::optional<uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> backend_path;
  std::optional<std::string> oracle_path;
  app.add_option("--config", config_path, "run configuration file (JSON)");
  app.add_option("--output-dir", output_dir, "output directory");
  app.add_option("--seed", seed, "seed for randomized behavior");
  app.add_option("--jobs", jobs, "worker count (default: logical cores)");
  app.add_option("--backend", backend_path,
                 "backend config file (overrides the config's backend)");
  app.add_option("--oracle", oracle_path,
                 "oracle config file (overrides the config's oracle)");

  // synthesize
  auto* synthesize = app.add_subcommand(
      "synthesize", "repair a vulnerable corpus into secure pairs");
  std::string corpus_path;
  std::optional<std::string> synth_mode;
  std::optional<int> synth_tokens;
  std::optional<double> synth_temperature;
  std::optional<int> retry_budget;
  synthesize->add_option("corpus", corpus_path, "vulnerable corpus (JSONL)")
      ->required();
  synthesize->add_option("--mode", synth_mode,
                         "report arm: full, codeql_only, no_report");
  synthesize->add_option("--max-new-tokens", synth_tokens, "per-repair budget");
  synthesize->add_option("--temperature", synth_temperature,
                         "sampling temperature");
  synthesize->add_option("--retry-budget", retry_budget,
                         "extra attempts after a still-vulnerable fix");

  // dataset
  auto* dataset = app.add_subcommand(
      "dataset", "turn secure pairs into masked fine-tuning records");
  std::string pairs_path;
  std::optional<std::string> benchmark_path;
  std::optional<double> threshold;
  std::optional<double> val_fraction;
  std::optional<std::string> scheme;
  dataset->add_option("pairs", pairs_path, "pairs file (JSONL)")->required();
  dataset->add_option("--benchmark-prompts", benchmark_path,
                      "benchmark prompts to decontaminate against (JSONL)");
  dataset->add_option("--overlap-threshold", threshold,
                      "token-overlap removal threshold");
  dataset->add_option("--val-fraction", val_fraction,
                      "validation share of records");
  dataset->add_option("--scheme", scheme,
                      "tokenizer scheme: lexical, whitespace, external");

  // generate
  auto* generate = app.add_subcommand(
      "generate", "complete prompts in one-step or two-step mode");
  std::optional<std::string> prompt_file;
  std::optional<std::string> inline_prompt;
  std::string inline_language = "python";
  std::optional<std::string> gen_mode;
  std::optional<int> step1_max;
  std::optional<int> step2_max;
  std::optional<int> gen_tokens;
  std::optional<double> gen_temperature;
  std::optional<double> gen_top_p;
  std::optional<int> gen_samples;
  generate->add_option("--prompt-file", prompt_file,
                       "benchmark prompt file (JSONL)");
  generate->add_option("--prompt", inline_prompt, "inline prompt text");
  generate->add_option("--language", inline_language,
                       "language of the inline prompt");
  generate->add_option("--mode", gen_mode, "one-step or two-step");
  generate->add_option("--step1-max", step1_max, "step-1 token budget");
  generate->add_option("--step2-max", step2_max, "step-2 token budget");
  generate->add_option("--max-new-tokens", gen_tokens,
                       "one-step token budget");
  generate->add_option("--temperature", gen_temperature,
                       "sampling temperature");
  generate->add_option("--top-p", gen_top_p, "nucleus parameter");
  generate->add_option("--n-samples", gen_samples, "samples per prompt");

  // eval-security
  auto* eval_security = app.add_subcommand(
      "eval-security", "sample completions and count vulnerable programs");
  std::string security_prompts;
  std::optional<int> q;
  std::vector<int> top_x;
  std::optional<std::string> eval_mode;
  std::optional<double> eval_temperature;
  std::optional<int> eval_tokens;
  eval_security
      ->add_option("prompts", security_prompts, "benchmark prompts (JSONL)")
      ->required();
  eval_security->add_option("--q", q, "samples per prompt");
  eval_security->add_option("--top-x", top_x, "ranking depths to report");
  eval_security->add_option("--mode", eval_mode, "one-step or two-step");
  eval_security->add_option("--temperature", eval_temperature,
                            "sampling temperature");
  eval_security->add_option("--max-new-tokens", eval_tokens,
                            "per-sample token budget");

  // eval-functional
  auto* eval_functional = app.add_subcommand(
      "eval-functional", "run unit-test tasks and report pass@k");
  std::string tasks_path;
  std::optional<int> func_n;
  std::vector<int> k_list;
  std::vector<double> temperatures;
  std::optional<int> func_tokens;
  std::optional<int> timeout_s;
  eval_functional->add_option("tasks", tasks_path, "task file (JSONL)")
      ->required();
  eval_functional->add_option("--n", func_n, "samples per task");
  eval_functional->add_option("--k", k_list, "pass@k depths");
  eval_functional->add_option("--temperatures", temperatures,
                              "sampling temperatures to sweep");
  eval_functional->add_option("--max-new-tokens", func_tokens,
                              "per-sample token budget");
  eval_functional->add_option("--timeout-s", timeout_s,
                              "per-test sandbox timeout");

  // report
  auto* report = app.add_subcommand("report",
                                    "render a machine-readable report");
  std::string report_path;
  report->add_option("file", report_path, "report JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : codemend::kExitSetup;
  }

  try {
    codemend::RunConfig config;
    if (!config_path.empty()) {
      config = codemend::RunConfig::from_file(config_path);
    }
    if (output_dir) {
      config.output_dir = *output_dir;
    }
    if (seed) {
      config.seed = *seed;
    }
    if (jobs) {
      config.jobs = *jobs;
    }
    auto load_section = [](const std::string& path) {
      std::ifstream in(path);
      if (!in) {
        throw codemend::ConfigError("cannot open file: " + path);
      }
      nlohmann::json doc;
      in >> doc;
      return doc;
    };
    if (backend_path) {
      config.doc["backend"] = load_section(*backend_path);
    }
    if (oracle_path) {
      config.doc["oracle"] = load_section(*oracle_path);
    }

    if (*synthesize) {
      override_key(config, "synthesize", "mode", synth_mode);
      override_key(config, "synthesize", "max_new_tokens", synth_tokens);
      override_key(config, "synthesize", "temperature", synth_temperature);
      override_key(config, "synthesize", "retry_budget", retry_budget);
      return codemend::cmd_synthesize(config, corpus_path);
    }
    if (*dataset) {
      override_key(config, "dataset", "overlap_threshold", threshold);
      override_key(config, "dataset", "val_fraction", val_fraction);
      override_key(config, "dataset", "scheme", scheme);
      std::optional<std::filesystem::path> benchmark;
      if (benchmark_path) {
        benchmark = *benchmark_path;
      }
      return codemend::cmd_dataset(config, pairs_path, benchmark);
    }
    if (*generate) {
      override_key(config, "generate", "mode", gen_mode);
      override_key(config, "generate", "step1_max", step1_max);
      override_key(config, "generate", "step2_max", step2_max);
      override_key(config, "generate", "max_new_tokens", gen_tokens);
      override_key(config, "generate", "temperature", gen_temperature);
      override_key(config, "generate", "top_p", gen_top_p);
      override_key(config, "generate", "n_samples", gen_samples);
      std::optional<std::filesystem::path> file;
      if (prompt_file) {
        file = *prompt_file;
      }
      return codemend::cmd_generate(config, file, inline_prompt,
                                    inline_language);
    }
    if (*eval_security) {
      override_key(config, "eval_security", "q", q);
      if (!top_x.empty()) {
        config.doc["eval_security"]["top_x"] = top_x;
      }
      override_key(config, "eval_security", "mode", eval_mode);
      override_key(config, "eval_security", "temperature", eval_temperature);
      override_key(config, "eval_security", "max_new_tokens", eval_tokens);
      return codemend::cmd_eval_security(config, security_prompts);
    }
    if (*eval_functional) {
      override_key(config, "eval_functional", "n", func_n);
      if (!k_list.empty()) {
        config.doc["eval_functional"]["k"] = k_list;
      }
      if (!temperatures.empty()) {
        config.doc["eval_functional"]["temperatures"] = temperatures;
      }
      override_key(config, "eval_functional", "max_new_tokens", func_tokens);
      override_key(config, "eval_functional", "timeout_s", timeout_s);
      return codemend::cmd_eval_functional(config, tasks_path);
    }
    if (*report) {
      return codemend::cmd_report(report_path);
    }
  } catch (const codemend::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return codemend::kExitSetup;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return codemend::kExitSetup;
  }
  return codemend::kExitSetup;
}
