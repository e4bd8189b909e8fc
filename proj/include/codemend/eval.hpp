#pragma once

#include "codemend/cwe.hpp"
#include "codemend/llm.hpp"
#include "codemend/oracle.hpp"
#include "codemend/twostep.hpp"

#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace codemend {

struct BenchmarkPrompt {
  std::string id;
  CweId cwe = CweId::untagged(); // the scenario's targeted weakness
  Language language = Language::python;
  std::string text;
  std::string source; // "codelmsec", "pearce", "custom"
};

BenchmarkPrompt benchmark_prompt_from_json(const nlohmann::json& doc);
nlohmann::json benchmark_prompt_to_json(const BenchmarkPrompt& prompt);

struct SecurityEvalConfig {
  int q = 5; // samples per prompt; defaulted per source when unset
  int max_new_tokens = 200;
  double temperature = 0.4;
  double top_p = 0.95;
  bool two_step = false;
  GenerationBudget budget{};
  std::vector<int> top_x{1, 5};

  void validate() const;
};

// Samples per prompt used in the literature: 5 for the codelmsec prompt
// set, 15 for the smaller pearce set.
int default_q_for_source(const std::string& source);

struct RankedSample {
  std::string completion;
  std::string full_program; // prompt (updated for two-step) + completion
  double rank_score = 0.0;  // sequence logprob, or fallback ordinal
  int generation_index = 0;
  bool ranked_by_logprob = false;
  SecurityVerdict verdict;
  bool eval_error = false; // oracle failed; excluded from counts
  std::string error_detail;
};

struct PromptEvalResult {
  BenchmarkPrompt prompt;
  std::vector<RankedSample> ranked; // descending rank_score
  std::string updated_prompt;
  std::string step1_raw;
  bool step1_skipped = false;
};

// Generates q samples per prompt (one- or two-step), runs the oracle over
// each full program, and ranks samples by sequence log-probability when
// the backend reports one (generation order otherwise).
std::vector<PromptEvalResult> run_security_eval(
    const std::vector<BenchmarkPrompt>& prompts, Backend& backend,
    const Analyzer& oracle, const SecurityEvalConfig& config, int jobs = 1,
    const std::map<std::string, PromptEvalResult>* done = nullptr,
    const std::function<void(const PromptEvalResult&)>& on_result = nullptr);

// Number of vulnerable samples among the x highest-ranked of each prompt,
// summed over prompts. Errors when x exceeds a prompt's sample count.
int top_x_vulnerable(const std::vector<PromptEvalResult>& results, int x);

// Aggregate table: per language, per weakness column (prompt-target first,
// then smallest reported target weakness; everything off-target counts as
// "Other"), for each requested top-x depth. Each vulnerable sample counts
// in exactly one column, so row sums equal the vulnerable totals.
struct SecurityAggregate {
  std::set<CweId> targets;
  std::vector<int> top_x;
  // (language, column, x) -> count; column is a weakness id or "Other".
  std::map<std::tuple<std::string, std::string, int>, int> counts;
  std::map<std::pair<std::string, int>, int> totals; // (language, x)
  int evaluated_samples = 0;
  int error_samples = 0;
};

SecurityAggregate aggregate_security(const std::vector<PromptEvalResult>& results,
                                     const std::set<CweId>& targets,
                                     const std::vector<int>& top_x);

nlohmann::json security_aggregate_to_json(const SecurityAggregate& aggregate);

// Unbiased estimator 1 - C(n-c, k)/C(n, k), computed in product form.
double pass_at_k(int n, int c, int k);

struct FunctionalTask {
  std::string id;
  std::string prompt;
  std::string test_program;
  std::string entry_point;
};

FunctionalTask functional_task_from_json(const nlohmann::json& doc);
nlohmann::json functional_task_to_json(const FunctionalTask& task);

// Executes candidate + tests in a fresh process; success is exit code 0
// within the time limit. The command template takes a {file} placeholder.
struct SandboxRunner {
  std::vector<std::string> command{"python3", "{file}"};
  std::chrono::milliseconds timeout{std::chrono::seconds(10)};
  std::string file_extension = ".py";
};

struct FunctionalConfig {
  int n = 10;
  std::vector<int> k_list{1, 10};
  std::vector<double> temperatures{0.2, 0.4, 0.6, 0.8};
  int max_new_tokens = 300;
  double top_p = 0.95;

  void validate() const;
};

struct FunctionalTaskResult {
  std::string task_id;
  double temperature = 0.0;
  int n = 0;
  int passed = 0;
};

struct FunctionalReport {
  std::vector<FunctionalTaskResult> per_task;
  // temperature -> (k -> mean pass@k over tasks)
  std::map<double, std::map<int, double>> per_temperature;
  std::map<int, double> best; // max over temperatures per k
};

FunctionalReport run_functional_eval(
    const std::vector<FunctionalTask>& tasks, Backend& backend,
    const SandboxRunner& runner, const FunctionalConfig& config, int jobs = 1,
    const std::map<std::string, FunctionalTaskResult>* done = nullptr,
    const std::function<void(const FunctionalTaskResult&)>& on_result =
        nullptr);

nlohmann::json functional_report_to_json(const FunctionalReport& report);

// Assembles the program a sandbox run executes: prompt + completion, the
// unit tests, and a check(entry_point) trailer when an entry point is set.
std::string assemble_test_program(const FunctionalTask& task,
                                  const std::string& completion);

nlohmann::json prompt_result_to_json(const PromptEvalResult& result);
PromptEvalResult prompt_result_from_json(const nlohmann::json& doc);
nlohmann::json functional_task_result_to_json(const FunctionalTaskResult& r);
FunctionalTaskResult functional_task_result_from_json(const nlohmann::json& doc);

} // namespace codemend
