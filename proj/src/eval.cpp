#include "codemend/eval.hpp"

#include "codemend/error.hpp"
#include "codemend/repair.hpp"
#include "codemend/subprocess.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

namespace codemend {

void SecurityEvalConfig::validate() const {
  if (q < 1) {
    throw ConfigError("q must be >= 1");
  }
  if (max_new_tokens < 1) {
    throw ConfigError("max_new_tokens must be >= 1");
  }
  if (temperature < 0.0) {
    throw ConfigError("temperature must be >= 0");
  }
  if (top_x.empty()) {
    throw ConfigError("at least one top-x depth is required");
  }
  for (int x : top_x) {
    if (x < 1 || x > q) {
      throw ConfigError("top-x depth " + std::to_string(x) +
                        " must be in [1, q=" + std::to_string(q) + "]");
    }
  }
  if (two_step && (budget.step1_max < 1 || budget.step2_max < 1)) {
    throw ConfigError("two-step budgets must be positive");
  }
}

int default_q_for_source(const std::string& source) {
  return source == "pearce" ? 15 : 5;
}

BenchmarkPrompt benchmark_prompt_from_json(const nlohmann::json& doc) {
  BenchmarkPrompt prompt;
  prompt.id = doc.at("id").get<std::string>();
  prompt.cwe = CweId::parse(doc.at("cwe").get<std::string>());
  prompt.language = parse_language(doc.at("language").get<std::string>());
  prompt.text = doc.at("text").get<std::string>();
  if (prompt.text.empty()) {
    throw ParseError("benchmark prompt " + prompt.id + " has empty text");
  }
  prompt.source = doc.value("source", "custom");
  return prompt;
}

nlohmann::json benchmark_prompt_to_json(const BenchmarkPrompt& prompt) {
  return nlohmann::json{{"id", prompt.id},
                        {"cwe", prompt.cwe.str()},
                        {"language", to_string(prompt.language)},
                        {"text", prompt.text},
                        {"source", prompt.source}};
}

// ---------------------------------------------------------------------------
// Security evaluation

namespace {

PromptEvalResult evaluate_prompt(const BenchmarkPrompt& prompt,
                                 Backend& backend, const Analyzer& oracle,
                                 const SecurityEvalConfig& config) {
  PromptEvalResult result;
  result.prompt = prompt;

  SamplingParams sampling;
  sampling.temperature = config.temperature;
  sampling.top_p = config.top_p;
  sampling.n_samples = config.q;

  std::vector<Completion> completions;
  if (config.two_step) {
    TwoStepResult two = two_step_generate(prompt.text, prompt.language,
                                          backend, config.budget, sampling);
    completions = std::move(two.completions);
    result.updated_prompt = std::move(two.updated_prompt);
    result.step1_raw = std::move(two.step1_raw);
    result.step1_skipped = two.step1_skipped;
  } else {
    completions = one_step_generate(prompt.text, backend,
                                    config.max_new_tokens, sampling);
    result.updated_prompt = prompt.text;
  }

  const bool have_logprobs =
      std::all_of(completions.begin(), completions.end(),
                  [](const Completion& c) { return c.token_logprobs.has_value(); });

  for (size_t i = 0; i < completions.size(); ++i) {
    RankedSample sample;
    sample.completion = completions[i].text;
    sample.full_program = result.updated_prompt + completions[i].text;
    sample.generation_index = static_cast<int>(i);
    sample.ranked_by_logprob = have_logprobs;
    sample.rank_score = have_logprobs ? sequence_logprob(completions[i])
                                      : -static_cast<double>(i);
    try {
      sample.verdict =
          oracle.analyze(sample.full_program, prompt.language,
                         prompt.id + "#" + std::to_string(i));
    } catch (const Error& e) {
      sample.eval_error = true;
      sample.error_detail = e.what();
    }
    result.ranked.push_back(std::move(sample));
  }
  std::stable_sort(result.ranked.begin(), result.ranked.end(),
                   [](const RankedSample& a, const RankedSample& b) {
                     return a.rank_score > b.rank_score;
                   });
  return result;
}

} // namespace

std::vector<PromptEvalResult> run_security_eval(
    const std::vector<BenchmarkPrompt>& prompts, Backend& backend,
    const Analyzer& oracle, const SecurityEvalConfig& config, int jobs,
    const std::map<std::string, PromptEvalResult>* done,
    const std::function<void(const PromptEvalResult&)>& on_result) {
  config.validate();

  std::vector<std::optional<PromptEvalResult>> results(prompts.size());
  std::vector<size_t> pending;
  for (size_t i = 0; i < prompts.size(); ++i) {
    if (done != nullptr) {
      if (auto it = done->find(prompts[i].id); it != done->end()) {
        results[i] = it->second;
        continue;
      }
    }
    pending.push_back(i);
  }

  std::mutex result_mutex;
  auto process = [&](size_t index) {
    PromptEvalResult result =
        evaluate_prompt(prompts[index], backend, oracle, config);
    std::lock_guard lock(result_mutex);
    if (on_result) {
      on_result(result);
    }
    results[index] = std::move(result);
  };

  const int worker_count = backend.replay() ? 1 : std::max(1, jobs);
  if (worker_count == 1 || pending.size() <= 1) {
    for (size_t index : pending) {
      process(index);
    }
  } else {
    std::atomic<size_t> cursor{0};
    std::vector<std::thread> workers;
    const int spawn = std::min<size_t>(worker_count, pending.size());
    for (int w = 0; w < spawn; ++w) {
      workers.emplace_back([&] {
        for (;;) {
          const size_t slot = cursor.fetch_add(1);
          if (slot >= pending.size()) {
            return;
          }
          process(pending[slot]);
        }
      });
    }
    for (auto& worker : workers) {
      worker.join();
    }
  }

  std::vector<PromptEvalResult> out;
  out.reserve(prompts.size());
  for (auto& result : results) {
    out.push_back(std::move(*result));
  }
  return out;
}

int top_x_vulnerable(const std::vector<PromptEvalResult>& results, int x) {
  if (x < 1) {
    throw ConfigError("top-x depth must be >= 1");
  }
  int count = 0;
  for (const auto& result : results) {
    if (static_cast<size_t>(x) > result.ranked.size()) {
      throw ConfigError("top-x depth " + std::to_string(x) +
                        " exceeds sample count for prompt " +
                        result.prompt.id);
    }
    int taken = 0;
    for (const auto& sample : result.ranked) {
      if (taken == x) {
        break;
      }
      if (sample.eval_error) {
        continue; // excluded from numerator and denominator
      }
      ++taken;
      if (!sample.verdict.findings.empty()) {
        ++count;
      }
    }
  }
  return count;
}

namespace {

// A vulnerable sample lands in exactly one column: its prompt's target
// weakness when reported, else the smallest reported target weakness,
// else Other.
std::string attribute_column(const std::vector<Finding>& findings,
                             const CweId& prompt_cwe,
                             const std::set<CweId>& targets) {
  bool has_prompt_cwe = false;
  std::optional<CweId> smallest_target;
  for (const auto& finding : findings) {
    if (finding.cwe == prompt_cwe && targets.contains(finding.cwe)) {
      has_prompt_cwe = true;
    }
    if (targets.contains(finding.cwe)) {
      if (!smallest_target || finding.cwe < *smallest_target) {
        smallest_target = finding.cwe;
      }
    }
  }
  if (has_prompt_cwe) {
    return prompt_cwe.str();
  }
  if (smallest_target) {
    return smallest_target->str();
  }
  return "Other";
}

} // namespace

SecurityAggregate aggregate_security(const std::vector<PromptEvalResult>& results,
                                     const std::set<CweId>& targets,
                                     const std::vector<int>& top_x) {
  SecurityAggregate aggregate;
  aggregate.targets = targets;
  aggregate.top_x = top_x;
  for (const auto& result : results) {
    const std::string lang = to_string(result.prompt.language);
    for (const auto& sample : result.ranked) {
      if (sample.eval_error) {
        aggregate.error_samples += 1;
      } else {
        aggregate.evaluated_samples += 1;
      }
    }
    for (int x : top_x) {
      int taken = 0;
      for (const auto& sample : result.ranked) {
        if (taken == x) {
          break;
        }
        if (sample.eval_error) {
          continue;
        }
        ++taken;
        if (sample.verdict.findings.empty()) {
          continue;
        }
        const std::string column =
            attribute_column(sample.verdict.findings, result.prompt.cwe,
                             targets);
        aggregate.counts[{lang, column, x}] += 1;
        aggregate.totals[{lang, x}] += 1;
      }
    }
  }
  return aggregate;
}

nlohmann::json security_aggregate_to_json(const SecurityAggregate& aggregate) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& cwe : aggregate.targets) {
    targets.push_back(cwe.str());
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [key, count] : aggregate.counts) {
    cells.push_back({{"language", std::get<0>(key)},
                     {"column", std::get<1>(key)},
                     {"top_x", std::get<2>(key)},
                     {"count", count}});
  }
  nlohmann::json totals = nlohmann::json::array();
  for (const auto& [key, count] : aggregate.totals) {
    totals.push_back({{"language", key.first},
                      {"top_x", key.second},
                      {"count", count}});
  }
  return nlohmann::json{{"kind", "security_eval_report"},
                        {"targets", targets},
                        {"top_x", aggregate.top_x},
                        {"cells", cells},
                        {"totals", totals},
                        {"evaluated_samples", aggregate.evaluated_samples},
                        {"error_samples", aggregate.error_samples}};
}

// ---------------------------------------------------------------------------
// pass@k

double pass_at_k(int n, int c, int k) {
  if (n < 1 || c < 0 || c > n || k < 1 || k > n) {
    throw ConfigError("pass_at_k: need 0 <= c <= n and 1 <= k <= n (got n=" +
                      std::to_string(n) + ", c=" + std::to_string(c) +
                      ", k=" + std::to_string(k) + ")");
  }
  // 1 - C(n-c, k)/C(n, k) without forming large binomials.
  double failure = 1.0;
  for (int i = 0; i < k; ++i) {
    const int numerator = n - c - i;
    if (numerator <= 0) {
      return 1.0;
    }
    failure *= static_cast<double>(numerator) / static_cast<double>(n - i);
  }
  return 1.0 - failure;
}

// ---------------------------------------------------------------------------
// Functional evaluation

void FunctionalConfig::validate() const {
  if (n < 1) {
    throw ConfigError("n must be >= 1");
  }
  if (k_list.empty()) {
    throw ConfigError("at least one k is required");
  }
  for (int k : k_list) {
    if (k < 1 || k > n) {
      throw ConfigError("k=" + std::to_string(k) + " must be in [1, n=" +
                        std::to_string(n) + "]");
    }
  }
  if (temperatures.empty()) {
    throw ConfigError("at least one temperature is required");
  }
  if (max_new_tokens < 1) {
    throw ConfigError("max_new_tokens must be >= 1");
  }
}

FunctionalTask functional_task_from_json(const nlohmann::json& doc) {
  FunctionalTask task;
  task.id = doc.at("id").get<std::string>();
  task.prompt = doc.at("prompt").get<std::string>();
  task.test_program = doc.at("test_program").get<std::string>();
  task.entry_point = doc.value("entry_point", "");
  return task;
}

nlohmann::json functional_task_to_json(const FunctionalTask& task) {
  return nlohmann::json{{"id", task.id},
                        {"prompt", task.prompt},
                        {"test_program", task.test_program},
                        {"entry_point", task.entry_point}};
}

std::string assemble_test_program(const FunctionalTask& task,
                                  const std::string& completion) {
  std::string program = task.prompt + completion;
  if (program.empty() || program.back() != '\n') {
    program += '\n';
  }
  program += "\n" + task.test_program;
  if (program.back() != '\n') {
    program += '\n';
  }
  if (!task.entry_point.empty()) {
    program += "\ncheck(" + task.entry_point + ")\n";
  }
  return program;
}

namespace {

bool run_candidate(const std::string& program, const SandboxRunner& runner,
                   const std::string& tag) {
  static std::atomic<uint64_t> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   ("codemend-sandbox-" + tag + "-" +
                    std::to_string(counter.fetch_add(1)));
  std::filesystem::create_directories(dir);
  struct Cleanup {
    std::filesystem::path dir;
    ~Cleanup() {
      std::error_code ec;
      std::filesystem::remove_all(dir, ec);
    }
  } cleanup{dir};

  const auto file = dir / ("candidate" + runner.file_extension);
  {
    std::ofstream out(file, std::ios::binary);
    out << program;
  }
  std::vector<std::string> argv;
  for (const auto& arg : runner.command) {
    std::string expanded = arg;
    size_t pos;
    while ((pos = expanded.find("{file}")) != std::string::npos) {
      expanded.replace(pos, 6, file.string());
    }
    argv.push_back(std::move(expanded));
  }
  ProcessOptions options;
  options.timeout = runner.timeout;
  options.cwd = dir;
  options.cpu_limit_s = static_cast<unsigned>(
      std::max<long long>(1, runner.timeout.count() / 1000 + 1));
  const ProcessResult result = run_process(argv, options);
  return !result.timed_out && result.exit_code == 0;
}

std::string temperature_tag(double temperature) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", temperature);
  return buf;
}

} // namespace

FunctionalReport run_functional_eval(
    const std::vector<FunctionalTask>& tasks, Backend& backend,
    const SandboxRunner& runner, const FunctionalConfig& config, int jobs,
    const std::map<std::string, FunctionalTaskResult>* done,
    const std::function<void(const FunctionalTaskResult&)>& on_result) {
  config.validate();
  if (runner.command.empty()) {
    throw ConfigError("sandbox runner has no command");
  }

  struct Unit {
    size_t task_index;
    double temperature;
  };
  std::vector<Unit> units;
  for (double temperature : config.temperatures) {
    for (size_t t = 0; t < tasks.size(); ++t) {
      units.push_back(Unit{t, temperature});
    }
  }

  std::vector<std::optional<FunctionalTaskResult>> results(units.size());
  std::vector<size_t> pending;
  for (size_t i = 0; i < units.size(); ++i) {
    const std::string key = tasks[units[i].task_index].id + "|" +
                            temperature_tag(units[i].temperature);
    if (done != nullptr) {
      if (auto it = done->find(key); it != done->end()) {
        results[i] = it->second;
        continue;
      }
    }
    pending.push_back(i);
  }

  std::mutex result_mutex;
  auto process = [&](size_t index) {
    const Unit& unit = units[index];
    const FunctionalTask& task = tasks[unit.task_index];

    CompletionRequest request;
    request.prompt = task.prompt;
    request.max_new_tokens = config.max_new_tokens;
    request.temperature = unit.temperature;
    request.top_p = config.top_p;
    request.n_samples = config.n;
    const std::vector<Completion> completions = backend.complete(request);

    FunctionalTaskResult result;
    result.task_id = task.id;
    result.temperature = unit.temperature;
    result.n = config.n;
    for (const auto& completion : completions) {
      const std::string program = assemble_test_program(task, completion.text);
      if (run_candidate(program, runner, task.id)) {
        result.passed += 1;
      }
    }
    std::lock_guard lock(result_mutex);
    if (on_result) {
      on_result(result);
    }
    results[index] = std::move(result);
  };

  const int worker_count = backend.replay() ? 1 : std::max(1, jobs);
  if (worker_count == 1 || pending.size() <= 1) {
    for (size_t index : pending) {
      process(index);
    }
  } else {
    std::atomic<size_t> cursor{0};
    std::vector<std::thread> workers;
    const int spawn = std::min<size_t>(worker_count, pending.size());
    for (int w = 0; w < spawn; ++w) {
      workers.emplace_back([&] {
        for (;;) {
          const size_t slot = cursor.fetch_add(1);
          if (slot >= pending.size()) {
            return;
          }
          process(pending[slot]);
        }
      });
    }
    for (auto& worker : workers) {
      worker.join();
    }
  }

  FunctionalReport report;
  for (const auto& result : results) {
    report.per_task.push_back(*result);
  }
  for (double temperature : config.temperatures) {
    std::map<int, double> means;
    for (int k : config.k_list) {
      double sum = 0.0;
      int count = 0;
      for (const auto& result : report.per_task) {
        if (result.temperature == temperature) {
          sum += pass_at_k(result.n, result.passed, k);
          ++count;
        }
      }
      means[k] = count == 0 ? 0.0 : sum / count;
    }
    report.per_temperature[temperature] = std::move(means);
  }
  for (int k : config.k_list) {
    double best = 0.0;
    for (const auto& [temperature, means] : report.per_temperature) {
      best = std::max(best, means.at(k));
    }
    report.best[k] = best;
  }
  return report;
}

nlohmann::json functional_report_to_json(const FunctionalReport& report) {
  nlohmann::json per_task = nlohmann::json::array();
  for (const auto& result : report.per_task) {
    per_task.push_back(functional_task_result_to_json(result));
  }
  nlohmann::json per_temperature = nlohmann::json::array();
  for (const auto& [temperature, means] : report.per_temperature) {
    nlohmann::json row{{"temperature", temperature}};
    nlohmann::json values = nlohmann::json::object();
    for (const auto& [k, mean] : means) {
      values["pass@" + std::to_string(k)] = mean;
    }
    row["means"] = values;
    per_temperature.push_back(row);
  }
  nlohmann::json best = nlohmann::json::object();
  for (const auto& [k, value] : report.best) {
    best["pass@" + std::to_string(k)] = value;
  }
  return nlohmann::json{{"kind", "functional_eval_report"},
                        {"per_task", per_task},
                        {"per_temperature", per_temperature},
                        {"best", best}};
}

// ---------------------------------------------------------------------------
// Journal records

namespace {

nlohmann::json verdict_to_json(const SecurityVerdict& verdict) {
  nlohmann::json findings = nlohmann::json::array();
  for (const auto& finding : verdict.findings) {
    findings.push_back(finding_to_json(finding));
  }
  return nlohmann::json{{"code_id", verdict.code_id}, {"findings", findings}};
}

SecurityVerdict verdict_from_json(const nlohmann::json& doc) {
  SecurityVerdict verdict;
  verdict.code_id = doc.value("code_id", "");
  for (const auto& finding : doc.at("findings")) {
    verdict.findings.push_back(finding_from_json(finding));
  }
  return verdict;
}

} // namespace

nlohmann::json prompt_result_to_json(const PromptEvalResult& result) {
  nlohmann::json ranked = nlohmann::json::array();
  for (const auto& sample : result.ranked) {
    ranked.push_back(nlohmann::json{
        {"completion", sample.completion},
        {"full_program", sample.full_program},
        {"rank_score", sample.rank_score},
        {"generation_index", sample.generation_index},
        {"ranked_by_logprob", sample.ranked_by_logprob},
        {"verdict", verdict_to_json(sample.verdict)},
        {"eval_error", sample.eval_error},
        {"error_detail", sample.error_detail}});
  }
  return nlohmann::json{{"prompt", benchmark_prompt_to_json(result.prompt)},
                        {"ranked", ranked},
                        {"updated_prompt", result.updated_prompt},
                        {"step1_raw", result.step1_raw},
                        {"step1_skipped", result.step1_skipped}};
}

PromptEvalResult prompt_result_from_json(const nlohmann::json& doc) {
  PromptEvalResult result;
  result.prompt = benchmark_prompt_from_json(doc.at("prompt"));
  for (const auto& item : doc.at("ranked")) {
    RankedSample sample;
    sample.completion = item.at("completion").get<std::string>();
    sample.full_program = item.at("full_program").get<std::string>();
    sample.rank_score = item.at("rank_score").get<double>();
    sample.generation_index = item.at("generation_index").get<int>();
    sample.ranked_by_logprob = item.value("ranked_by_logprob", false);
    sample.verdict = verdict_from_json(item.at("verdict"));
    sample.eval_error = item.value("eval_error", false);
    sample.error_detail = item.value("error_detail", "");
    result.ranked.push_back(std::move(sample));
  }
  result.updated_prompt = doc.value("updated_prompt", "");
  result.step1_raw = doc.value("step1_raw", "");
  result.step1_skipped = doc.value("step1_skipped", false);
  return result;
}

nlohmann::json functional_task_result_to_json(const FunctionalTaskResult& r) {
  return nlohmann::json{{"task_id", r.task_id},
                        {"temperature", r.temperature},
                        {"n", r.n},
                        {"passed", r.passed}};
}

FunctionalTaskResult
functional_task_result_from_json(const nlohmann::json& doc) {
  FunctionalTaskResult result;
  result.task_id = doc.at("task_id").get<std::string>();
  result.temperature = doc.at("temperature").get<double>();
  result.n = doc.at("n").get<int>();
  result.passed = doc.at("passed").get<int>();
  return result;
}

} // namespace codemend
