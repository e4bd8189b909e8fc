#include "codemend/commands.hpp"

#include "codemend/dataset.hpp"
#include "codemend/error.hpp"
#include "codemend/eval.hpp"
#include "codemend/journal.hpp"
#include "codemend/llm.hpp"
#include "codemend/oracle.hpp"
#include "codemend/repair.hpp"
#include "codemend/twostep.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

namespace codemend {

namespace {

std::optional<std::filesystem::path> catalog_path(const RunConfig& config) {
  if (config.doc.contains("catalog") && config.doc["catalog"].is_string()) {
    return std::filesystem::path(config.doc["catalog"].get<std::string>());
  }
  return std::nullopt;
}

std::shared_ptr<Backend> backend_from(const RunConfig& config) {
  if (!config.doc.contains("backend")) {
    throw ConfigError("config lacks a 'backend' section");
  }
  return make_backend(config.doc["backend"]);
}

std::unique_ptr<Analyzer> oracle_from(const RunConfig& config) {
  if (!config.doc.contains("oracle")) {
    throw ConfigError("config lacks an 'oracle' section");
  }
  return make_analyzer(config.doc["oracle"]);
}

int effective_jobs(const RunConfig& config) {
  if (config.jobs > 0) {
    return config.jobs;
  }
  const unsigned cores = std::thread::hardware_concurrency();
  return cores == 0 ? 1 : static_cast<int>(cores);
}

nlohmann::json repair_stats_to_json(const RepairStats& stats,
                                    ReportMode mode) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& cwe : stats.cwes(mode)) {
    rows.push_back({{"cwe", cwe.str()},
                    {"attempted", stats.attempted(cwe, mode)},
                    {"repaired", stats.repaired(cwe, mode)},
                    {"rate_percent", stats.repair_rate(cwe, mode)}});
  }
  return nlohmann::json{
      {"kind", "repair_stats"},
      {"mode", to_string(mode)},
      {"rows", rows},
      {"total_attempted", stats.total_attempted(mode)},
      {"total_repaired", stats.total_repaired(mode)},
      {"average_rate_percent", stats.average_repair_rate(mode)}};
}

} // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file: " + path.string());
  }
  RunConfig config;
  try {
    in >> config.doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config file " + path.string() + ": " + e.what());
  }
  if (config.doc.contains("output_dir")) {
    config.output_dir = config.doc["output_dir"].get<std::string>();
  }
  if (config.doc.contains("seed")) {
    config.seed = config.doc["seed"].get<uint64_t>();
  }
  if (config.doc.contains("jobs")) {
    config.jobs = config.doc["jobs"].get<int>();
  }
  return config;
}

// ---------------------------------------------------------------------------
// synthesize

int cmd_synthesize(const RunConfig& config,
                   const std::filesystem::path& corpus_path) {
  std::shared_ptr<Backend> backend;
  std::unique_ptr<Analyzer> oracle;
  Catalog catalog = Catalog::builtin();
  std::vector<VulnerableSample> samples;
  ReportMode mode = ReportMode::full;
  RepairParams params;
  try {
    backend = backend_from(config);
    oracle = oracle_from(config);
    catalog = Catalog::load(catalog_path(config));
    mode = parse_report_mode(
        config.get<std::string>("synthesize", "mode", "full"));
    params.max_new_tokens =
        config.get<int>("synthesize", "max_new_tokens", 1000);
    params.temperature = config.get<double>("synthesize", "temperature", 0.1);
    params.top_p = config.get<double>("synthesize", "top_p", 0.95);
    params.retry_budget = config.get<int>("synthesize", "retry_budget", 0);
    for (const auto& doc : read_jsonl(corpus_path)) {
      samples.push_back(sample_from_json(doc));
    }
  } catch (const Error& e) {
    std::cerr << "synthesize: setup failed: " << e.what() << "\n";
    return kExitSetup;
  }

  std::filesystem::create_directories(config.output_dir);
  RunJournal journal(config.output_dir / "synthesize.journal.jsonl");
  std::map<std::string, RepairOutcome> done;
  for (const auto& [id, payload] : RunJournal::replay(journal.path())) {
    try {
      done.emplace(id, outcome_from_json(payload));
    } catch (const Error&) {
      // Unreadable journal entries are reprocessed.
    }
  }

  const BatchResult result = run_batch(
      samples, mode, *backend, *oracle, catalog, params,
      effective_jobs(config), &done,
      [&journal](const std::string& id, const RepairOutcome& outcome) {
        journal.append(id, outcome_to_json(outcome));
      });

  std::vector<nlohmann::json> pair_lines;
  for (const auto& pair : result.pairs) {
    pair_lines.push_back(pair_to_json(pair));
  }
  write_jsonl(config.output_dir / "pairs.jsonl", pair_lines);

  std::vector<nlohmann::json> rejection_lines;
  bool tool_errors = false;
  for (const auto& rejection : result.rejections) {
    rejection_lines.push_back(rejection_to_json(rejection));
    tool_errors |= rejection.stage == RejectStage::tool_error;
  }
  write_jsonl(config.output_dir / "rejections.jsonl", rejection_lines);
  write_json_file(config.output_dir / "stats.json",
                  repair_stats_to_json(result.stats, mode));

  std::cout << "synthesize: " << result.pairs.size() << " pair(s), "
            << result.rejections.size() << " rejection(s) across "
            << samples.size() << " sample(s)\n";
  // Ordinary rejections are expected pipeline output; only infrastructure
  // failures mark the run as partial.
  return tool_errors ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------
// dataset

int cmd_dataset(const RunConfig& config, const std::filesystem::path& pairs_path,
                const std::optional<std::filesystem::path>& benchmark_path) {
  std::vector<SecurePair> pairs;
  std::vector<BenchmarkText> prompts;
  TokenScheme scheme = TokenScheme::lexical;
  double threshold = 0.75;
  double val_fraction = 0.2;
  try {
    for (const auto& doc : read_jsonl(pairs_path)) {
      pairs.push_back(pair_from_json(doc));
    }
    if (benchmark_path) {
      for (const auto& doc : read_jsonl(*benchmark_path)) {
        const BenchmarkPrompt prompt = benchmark_prompt_from_json(doc);
        prompts.push_back(BenchmarkText{prompt.id, prompt.text,
                                        prompt.language});
      }
    }
    scheme = parse_token_scheme(
        config.get<std::string>("dataset", "scheme", "lexical"));
    threshold = config.get<double>("dataset", "overlap_threshold", 0.75);
    val_fraction = config.get<double>("dataset", "val_fraction", 0.2);
  } catch (const Error& e) {
    std::cerr << "dataset: setup failed: " << e.what() << "\n";
    return kExitSetup;
  }

  try {
    const FilterResult filtered = overlap_filter(pairs, prompts, threshold);

    std::vector<nlohmann::json> removed_lines;
    for (const auto& removed : filtered.removed) {
      removed_lines.push_back({{"sample_id", removed.pair.sample_id},
                               {"reason", removed.reason},
                               {"prompt_id", removed.prompt_id},
                               {"overlap", removed.overlap}});
    }
    write_jsonl(config.output_dir / "removed_pairs.jsonl", removed_lines);

    std::vector<TrainingRecord> records;
    records.reserve(filtered.kept.size());
    for (const auto& pair : filtered.kept) {
      records.push_back(build_record(pair, scheme));
    }
    assign_splits(records, val_fraction, config.seed);

    DatasetManifest manifest = stats(records);
    manifest.seed = config.seed;
    manifest.scheme = scheme;
    manifest.val_fraction = val_fraction;
    manifest.overlap_threshold = threshold;
    if (config.has("dataset", "lora")) {
      const auto& lora = config.doc["dataset"]["lora"];
      manifest.lora.batch_size = lora.value("batch_size", 16);
      manifest.lora.epochs = lora.value("epochs", 10);
      manifest.lora.learning_rate = lora.value("learning_rate", "5e-4");
      manifest.lora.rank = lora.value("rank", 64);
      manifest.lora.alpha = lora.value("alpha", 16);
    }

    std::sort(records.begin(), records.end(),
              [](const TrainingRecord& a, const TrainingRecord& b) {
                return a.sample_id < b.sample_id;
              });
    write_records_file(config.output_dir / "records.jsonl", records);
    write_json_file(config.output_dir / "manifest.json",
                    manifest_to_json(manifest));

    std::cout << "dataset: " << records.size() << " record(s) ("
              << manifest.train_count << " train, " << manifest.val_count
              << " val), " << filtered.removed.size() << " removed\n";
  } catch (const Error& e) {
    std::cerr << "dataset: " << e.what() << "\n";
    return kExitSetup;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// generate

int cmd_generate(const RunConfig& config,
                 const std::optional<std::filesystem::path>& prompt_file,
                 const std::optional<std::string>& inline_prompt,
                 const std::string& inline_language) {
  std::shared_ptr<Backend> backend;
  std::vector<BenchmarkPrompt> prompts;
  std::string mode;
  GenerationBudget budget;
  SamplingParams sampling;
  int one_step_tokens = 200;
  try {
    backend = backend_from(config);
    mode = config.get<std::string>("generate", "mode", "two-step");
    if (mode != "one-step" && mode != "two-step") {
      throw ConfigError("generate mode must be 'one-step' or 'two-step'");
    }
    budget.step1_max = config.get<int>("generate", "step1_max", 20);
    budget.step2_max = config.get<int>("generate", "step2_max", 180);
    one_step_tokens = config.get<int>("generate", "max_new_tokens",
                                      budget.single_step());
    sampling.temperature = config.get<double>("generate", "temperature", 0.4);
    sampling.top_p = config.get<double>("generate", "top_p", 0.95);
    sampling.n_samples = config.get<int>("generate", "n_samples", 1);
    if (prompt_file) {
      for (const auto& doc : read_jsonl(*prompt_file)) {
        prompts.push_back(benchmark_prompt_from_json(doc));
      }
    } else if (inline_prompt) {
      BenchmarkPrompt prompt;
      prompt.id = "inline-1";
      prompt.language = parse_language(inline_language);
      prompt.text = *inline_prompt;
      prompt.source = "custom";
      prompts.push_back(std::move(prompt));
    } else {
      throw ConfigError("generate needs a prompt file or an inline prompt");
    }
  } catch (const Error& e) {
    std::cerr << "generate: setup failed: " << e.what() << "\n";
    return kExitSetup;
  }

  std::filesystem::create_directories(config.output_dir);
  RunJournal journal(config.output_dir / "generate.journal.jsonl");
  const auto done = RunJournal::replay(journal.path());

  std::vector<nlohmann::json> audit;
  bool errors = false;
  for (const auto& prompt : prompts) {
    if (auto it = done.find(prompt.id); it != done.end()) {
      audit.push_back(it->second);
      errors |= it->second.contains("error");
      continue;
    }
    nlohmann::json record{{"id", prompt.id},
                          {"mode", mode},
                          {"language", to_string(prompt.language)},
                          {"prompt", prompt.text}};
    try {
      nlohmann::json completions = nlohmann::json::array();
      if (mode == "two-step") {
        const TwoStepResult result = two_step_generate(
            prompt.text, prompt.language, *backend, budget, sampling);
        for (const auto& completion : result.completions) {
          completions.push_back(completion.text);
        }
        record["completions"] = completions;
        record["updated_prompt"] = result.updated_prompt;
        record["step1_raw"] = result.step1_raw;
        record["step1_skipped"] = result.step1_skipped;
        record["budget"] = {{"step1_max", budget.step1_max},
                            {"step2_max", budget.step2_max}};
        nlohmann::json added = nlohmann::json::array();
        for (const auto& statement : result.added_imports) {
          added.push_back(statement.text);
        }
        record["added_imports"] = added;
      } else {
        const auto results =
            one_step_generate(prompt.text, *backend, one_step_tokens, sampling);
        for (const auto& completion : results) {
          completions.push_back(completion.text);
        }
        record["completions"] = completions;
        record["updated_prompt"] = prompt.text;
        record["max_new_tokens"] = one_step_tokens;
      }
    } catch (const Error& e) {
      record["error"] = e.what();
      errors = true;
    }
    journal.append(prompt.id, record);
    audit.push_back(std::move(record));
  }
  write_jsonl(config.output_dir / "generate_audit.jsonl", audit);
  std::cout << "generate: " << prompts.size() << " prompt(s), "
            << (errors ? "with errors\n" : "ok\n");
  return errors ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------
// eval-security

int cmd_eval_security(const RunConfig& config,
                      const std::filesystem::path& prompts_path) {
  std::shared_ptr<Backend> backend;
  std::unique_ptr<Analyzer> oracle;
  Catalog catalog = Catalog::builtin();
  std::vector<BenchmarkPrompt> prompts;
  SecurityEvalConfig eval;
  try {
    backend = backend_from(config);
    oracle = oracle_from(config);
    catalog = Catalog::load(catalog_path(config));
    for (const auto& doc : read_jsonl(prompts_path)) {
      prompts.push_back(benchmark_prompt_from_json(doc));
    }
    eval.q = config.get<int>("eval_security", "q", 0);
    if (eval.q == 0) {
      std::set<std::string> sources;
      for (const auto& prompt : prompts) {
        sources.insert(prompt.source);
      }
      if (sources.size() > 1) {
        throw ConfigError("prompt set mixes sources; set q explicitly");
      }
      eval.q = sources.empty() ? 5 : default_q_for_source(*sources.begin());
    }
    eval.max_new_tokens =
        config.get<int>("eval_security", "max_new_tokens", 200);
    eval.temperature = config.get<double>("eval_security", "temperature", 0.4);
    eval.top_p = config.get<double>("eval_security", "top_p", 0.95);
    const std::string mode =
        config.get<std::string>("eval_security", "mode", "one-step");
    if (mode != "one-step" && mode != "two-step") {
      throw ConfigError("eval mode must be 'one-step' or 'two-step'");
    }
    eval.two_step = mode == "two-step";
    eval.budget.step1_max = config.get<int>("eval_security", "step1_max", 20);
    eval.budget.step2_max =
        config.get<int>("eval_security", "step2_max", 180);
    if (config.has("eval_security", "top_x")) {
      eval.top_x = config.doc["eval_security"]["top_x"].get<std::vector<int>>();
    } else {
      eval.top_x = {1, eval.q};
    }
    eval.validate();
  } catch (const Error& e) {
    std::cerr << "eval-security: setup failed: " << e.what() << "\n";
    return kExitSetup;
  }

  std::filesystem::create_directories(config.output_dir);
  RunJournal journal(config.output_dir / "eval_security.journal.jsonl");
  std::map<std::string, PromptEvalResult> done;
  for (const auto& [id, payload] : RunJournal::replay(journal.path())) {
    try {
      done.emplace(id, prompt_result_from_json(payload));
    } catch (const Error&) {
    }
  }

  std::vector<PromptEvalResult> results;
  try {
    results = run_security_eval(
        prompts, *backend, *oracle, eval, effective_jobs(config), &done,
        [&journal](const PromptEvalResult& result) {
          journal.append(result.prompt.id, prompt_result_to_json(result));
        });
  } catch (const Error& e) {
    std::cerr << "eval-security: " << e.what() << "\n";
    return kExitSetup;
  }

  std::vector<nlohmann::json> result_lines;
  {
    std::vector<const PromptEvalResult*> ordered;
    for (const auto& result : results) {
      ordered.push_back(&result);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](const PromptEvalResult* a, const PromptEvalResult* b) {
                return a->prompt.id < b->prompt.id;
              });
    for (const auto* result : ordered) {
      result_lines.push_back(prompt_result_to_json(*result));
    }
  }
  write_jsonl(config.output_dir / "eval_security_results.jsonl", result_lines);

  const SecurityAggregate aggregate =
      aggregate_security(results, catalog.ids(), eval.top_x);
  nlohmann::json report = security_aggregate_to_json(aggregate);
  report["q"] = eval.q;
  report["mode"] = eval.two_step ? "two-step" : "one-step";
  write_json_file(config.output_dir / "eval_security_report.json", report);

  for (int x : eval.top_x) {
    std::cout << "top-" << x << " vulnerable: "
              << top_x_vulnerable(results, x) << "\n";
  }
  if (aggregate.error_samples > 0) {
    std::cout << aggregate.error_samples
              << " sample(s) excluded due to evaluation errors\n";
    return kExitPartial;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval-functional

int cmd_eval_functional(const RunConfig& config,
                        const std::filesystem::path& tasks_path) {
  std::shared_ptr<Backend> backend;
  std::vector<FunctionalTask> tasks;
  FunctionalConfig eval;
  SandboxRunner runner;
  try {
    backend = backend_from(config);
    for (const auto& doc : read_jsonl(tasks_path)) {
      tasks.push_back(functional_task_from_json(doc));
    }
    eval.n = config.get<int>("eval_functional", "n", 10);
    if (config.has("eval_functional", "k")) {
      eval.k_list = config.doc["eval_functional"]["k"].get<std::vector<int>>();
    } else {
      eval.k_list = {1, eval.n};
    }
    if (config.has("eval_functional", "temperatures")) {
      eval.temperatures =
          config.doc["eval_functional"]["temperatures"].get<std::vector<double>>();
    }
    eval.max_new_tokens =
        config.get<int>("eval_functional", "max_new_tokens", 300);
    eval.top_p = config.get<double>("eval_functional", "top_p", 0.95);
    if (config.has("eval_functional", "runner")) {
      runner.command =
          config.doc["eval_functional"]["runner"].get<std::vector<std::string>>();
    }
    runner.timeout = std::chrono::seconds(
        config.get<int>("eval_functional", "timeout_s", 10));
    runner.file_extension =
        config.get<std::string>("eval_functional", "file_extension", ".py");
    eval.validate();
  } catch (const Error& e) {
    std::cerr << "eval-functional: setup failed: " << e.what() << "\n";
    return kExitSetup;
  }

  std::filesystem::create_directories(config.output_dir);
  RunJournal journal(config.output_dir / "eval_functional.journal.jsonl");
  std::map<std::string, FunctionalTaskResult> done;
  for (const auto& [id, payload] : RunJournal::replay(journal.path())) {
    try {
      done.emplace(id, functional_task_result_from_json(payload));
    } catch (const Error&) {
    }
  }

  FunctionalReport report;
  try {
    report = run_functional_eval(
        tasks, *backend, runner, eval, effective_jobs(config), &done,
        [&journal](const FunctionalTaskResult& result) {
          char temp[32];
          std::snprintf(temp, sizeof(temp), "%g", result.temperature);
          journal.append(result.task_id + "|" + temp,
                         functional_task_result_to_json(result));
        });
  } catch (const Error& e) {
    std::cerr << "eval-functional: " << e.what() << "\n";
    return kExitSetup;
  }

  write_json_file(config.output_dir / "eval_functional_report.json",
                  functional_report_to_json(report));
  for (const auto& [k, value] : report.best) {
    std::printf("best pass@%d over temperatures: %.4f\n", k, value);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report

namespace {

void print_repair_stats(const nlohmann::json& doc) {
  std::printf("Repair statistics (mode: %s)\n",
              doc.value("mode", "?").c_str());
  std::printf("%-10s %10s %10s %8s\n", "CWE", "attempted", "repaired",
              "rate");
  for (const auto& row : doc.at("rows")) {
    std::printf("%-10s %10d %10d %7.2f%%\n",
                row.at("cwe").get<std::string>().c_str(),
                row.at("attempted").get<int>(),
                row.at("repaired").get<int>(),
                row.at("rate_percent").get<double>());
  }
  std::printf("%-10s %10d %10d %7.2f%%\n", "Avg/Total",
              doc.at("total_attempted").get<int>(),
              doc.at("total_repaired").get<int>(),
              doc.at("average_rate_percent").get<double>());
}

void print_security_report(const nlohmann::json& doc) {
  std::printf("Security evaluation (q=%d, %s)\n", doc.value("q", 0),
              doc.value("mode", "?").c_str());
  // Collect per-language columns; depths come from the config echo so
  // all-clean rows still print as zeros.
  std::set<std::string> languages;
  std::set<int> depths;
  for (const auto& x : doc.value("top_x", nlohmann::json::array())) {
    depths.insert(x.get<int>());
  }
  for (const auto& cell : doc.at("cells")) {
    languages.insert(cell.at("language").get<std::string>());
    depths.insert(cell.at("top_x").get<int>());
  }
  for (const auto& language : languages) {
    std::printf("\n[%s]\n", language.c_str());
    std::set<std::string> columns;
    for (const auto& cell : doc.at("cells")) {
      if (cell.at("language") == language) {
        columns.insert(cell.at("column").get<std::string>());
      }
    }
    std::printf("%-8s", "top-x");
    for (const auto& column : columns) {
      std::printf(" %10s", column.c_str());
    }
    std::printf(" %10s\n", "Total");
    for (int x : depths) {
      std::printf("top-%-4d", x);
      int total = 0;
      for (const auto& column : columns) {
        int count = 0;
        for (const auto& cell : doc.at("cells")) {
          if (cell.at("language") == language && cell.at("column") == column &&
              cell.at("top_x") == x) {
            count = cell.at("count").get<int>();
          }
        }
        total += count;
        std::printf(" %10d", count);
      }
      std::printf(" %10d\n", total);
    }
  }
  if (doc.value("error_samples", 0) > 0) {
    std::printf("\nexcluded due to evaluation errors: %d sample(s)\n",
                doc["error_samples"].get<int>());
  }
}

void print_functional_report(const nlohmann::json& doc) {
  std::printf("Functional evaluation\n");
  for (const auto& row : doc.at("per_temperature")) {
    std::printf("T=%-5g", row.at("temperature").get<double>());
    for (const auto& [key, value] : row.at("means").items()) {
      std::printf("  %s=%.4f", key.c_str(), value.get<double>());
    }
    std::printf("\n");
  }
  std::printf("best over temperatures:");
  for (const auto& [key, value] : doc.at("best").items()) {
    std::printf("  %s=%.4f", key.c_str(), value.get<double>());
  }
  std::printf("\n");
}

void print_manifest(const nlohmann::json& doc) {
  std::printf("Dataset manifest\n");
  std::printf("%-10s %-8s %8s\n", "CWE", "language", "count");
  for (const auto& row : doc.at("counts")) {
    std::printf("%-10s %-8s %8d\n", row.at("cwe").get<std::string>().c_str(),
                row.at("language").get<std::string>().c_str(),
                row.at("count").get<int>());
  }
  std::printf("total: %d (train %d, val %d)\n", doc.at("total").get<int>(),
              doc.at("train_count").get<int>(), doc.at("val_count").get<int>());
}

} // namespace

int cmd_report(const std::filesystem::path& report_path) {
  nlohmann::json doc;
  try {
    std::ifstream in(report_path);
    if (!in) {
      throw ConfigError("cannot open report file: " + report_path.string());
    }
    in >> doc;
  } catch (const std::exception& e) {
    std::cerr << "report: " << e.what() << "\n";
    return kExitSetup;
  }
  const std::string kind = doc.value("kind", "");
  if (kind == "repair_stats") {
    print_repair_stats(doc);
  } else if (kind == "security_eval_report") {
    print_security_report(doc);
  } else if (kind == "functional_eval_report") {
    print_functional_report(doc);
  } else if (kind == "dataset_manifest") {
    print_manifest(doc);
  } else {
    std::cerr << "report: unrecognized report kind '" << kind << "'\n";
    return kExitSetup;
  }
  return kExitOk;
}

} // namespace codemend
