#pragma once

#include "codemend/cwe.hpp"
#include "codemend/llm.hpp"
#include "codemend/oracle.hpp"

#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace codemend {

// A validated-vulnerable input sample. Findings must be non-empty: only
// samples whose vulnerabilities were confirmed by the oracle enter the
// repair loop.
struct VulnerableSample {
  std::string id;
  std::string code;
  Language language = Language::python;
  std::vector<Finding> findings;
  std::string origin;
};

// The three security-report arms: analyzer report + hints, analyzer report
// alone, or no report at all.
enum class ReportMode { full, codeql_only, no_report };

std::string to_string(ReportMode mode);
ReportMode parse_report_mode(std::string_view tag);

// A vulnerable sample together with its oracle-validated fix.
struct SecurePair {
  std::string sample_id;
  std::string vulnerable_code;
  std::string secure_code;
  Language language = Language::python;
  std::vector<CweId> cwes;          // from the original findings, deduplicated
  std::string model_raw_output;     // archived full model response
};

enum class RejectStage { extraction, empty, still_vulnerable, tool_error };

std::string to_string(RejectStage stage);

struct Rejection {
  std::string sample_id;
  RejectStage stage = RejectStage::tool_error;
  std::vector<Finding> residual_findings; // still_vulnerable only
  std::string detail;
};

// Attempted/repaired tallies per (weakness, report mode). Percentages are
// truncated to two decimals, and the per-mode average is the truncated
// mean of the truncated per-weakness rates.
class RepairStats {
public:
  // A sample with several weaknesses counts once under each of them and
  // once in the mode's overall tally.
  void record_sample(const std::vector<CweId>& cwes, ReportMode mode,
                     bool repaired);

  int attempted(const CweId& cwe, ReportMode mode) const;
  int repaired(const CweId& cwe, ReportMode mode) const;
  int total_attempted(ReportMode mode) const;
  int total_repaired(ReportMode mode) const;

  // repaired/attempted in percent, truncated to 2 decimals.
  double repair_rate(const CweId& cwe, ReportMode mode) const;
  // Truncated mean of the per-weakness truncated rates for a mode.
  double average_repair_rate(ReportMode mode) const;

  std::vector<CweId> cwes(ReportMode mode) const;

  static double truncate2(double percent);

private:
  struct Bucket {
    int attempted = 0;
    int repaired = 0;
  };
  std::map<std::pair<std::string, ReportMode>, Bucket> buckets_;
  std::map<ReportMode, Bucket> totals_;
};

// Renders the security-report section injected into the repair prompt:
// one numbered block per finding (ascending line order), each followed in
// `full` mode by its weakness's mitigation hint (emitted once per
// weakness). `codeql_only` renders the blocks without hints; `no_report`
// renders nothing.
std::string build_security_report(const std::vector<Finding>& findings,
                                  const Catalog& catalog, Language language,
                                  ReportMode mode);

// Instantiates the repair prompt template for the sample. Byte-stable for
// equal inputs.
std::string build_prompt(const VulnerableSample& sample,
                         const std::string& report, ReportMode mode);

// Pulls the fixed code out of a model response: the first fenced block
// whose info string names the language, else the first untagged fence.
// Throws ExtractionError when no candidate fence exists and EmptyFixError
// when the block is blank.
std::string extract_code(const std::string& model_output, Language language);

struct RepairParams {
  int max_new_tokens = 1000;
  double temperature = 0.1;
  double top_p = 0.95;
  int n_samples = 1;
  int retry_budget = 0; // extra attempts after a still-vulnerable fix
};

using RepairOutcome = std::variant<SecurePair, Rejection>;

// One pass of the repair loop: report + prompt -> one completion ->
// extract -> re-validate. Backend/oracle failures become tool_error
// rejections so batch runs continue.
RepairOutcome repair_one(const VulnerableSample& sample, ReportMode mode,
                         Backend& backend, const Analyzer& oracle,
                         const Catalog& catalog, const RepairParams& params);

struct BatchResult {
  std::vector<SecurePair> pairs;        // sorted by sample id
  std::vector<Rejection> rejections;    // sorted by sample id
  RepairStats stats;
};

// Applies repair_one to every sample not already in `done`, invoking
// `on_outcome` as each sample finishes (journaling hook). Samples already
// journaled are replayed from `done` instead of being reprocessed.
BatchResult run_batch(
    const std::vector<VulnerableSample>& samples, ReportMode mode,
    Backend& backend, const Analyzer& oracle, const Catalog& catalog,
    const RepairParams& params, int jobs = 1,
    const std::map<std::string, RepairOutcome>* done = nullptr,
    const std::function<void(const std::string& id, const RepairOutcome&)>&
        on_outcome = nullptr);

// Corpus record (de)serialization: one JSON object per line with fields
// id, code, language, findings[], origin.
VulnerableSample sample_from_json(const nlohmann::json& doc);
nlohmann::json sample_to_json(const VulnerableSample& sample);
nlohmann::json pair_to_json(const SecurePair& pair);
SecurePair pair_from_json(const nlohmann::json& doc);
nlohmann::json rejection_to_json(const Rejection& rejection);
Rejection rejection_from_json(const nlohmann::json& doc);
nlohmann::json finding_to_json(const Finding& finding);
Finding finding_from_json(const nlohmann::json& doc);
nlohmann::json outcome_to_json(const RepairOutcome& outcome);
RepairOutcome outcome_from_json(const nlohmann::json& doc);

} // namespace codemend
