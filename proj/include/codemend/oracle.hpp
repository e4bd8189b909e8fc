#pragma once

#include "codemend/cwe.hpp"
#include "codemend/language.hpp"

#include <nlohmann/json_fwd.hpp>

#include <chrono>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace codemend {

// One vulnerability reported by the analyzer.
struct Finding {
  CweId cwe = CweId::untagged();
  int line = 1; // 1-based; results without location info map to line 1
  std::string description;
  std::string rule_id;

  bool operator==(const Finding&) const = default;
};

// All findings for one code sample, deterministically ordered.
struct SecurityVerdict {
  std::string code_id;
  std::vector<Finding> findings; // sorted by (line, cwe, rule_id)
};

struct CweHistogram {
  std::map<CweId, int> counts;
  int other = 0;

  int total() const;
};

// True iff the analyzer reported nothing at all.
bool is_secure(const SecurityVerdict& verdict);

// Counts findings per target weakness; everything else (including the
// CWE-000 sentinel) lands in `other`.
CweHistogram classify(const std::vector<Finding>& findings,
                      const std::set<CweId>& targets);

// Extracts findings from a static-analysis interchange document:
// runs[].results[] with ruleId, message.text, the first location's start
// line, and rule tags of the form "external/cwe/cwe-NNN". A result with
// several weakness tags yields one finding per tag; a result without any
// maps to CWE-000.
std::vector<Finding> parse_report(const nlohmann::json& report);
std::vector<Finding> parse_report_text(const std::string& raw);

void sort_findings(std::vector<Finding>& findings);

// Static-analysis adapter. Implementations must be safe to call from
// multiple workers concurrently.
class Analyzer {
public:
  virtual ~Analyzer() = default;
  virtual SecurityVerdict analyze(const std::string& code, Language language,
                                  const std::string& code_id) const = 0;
};

// Deterministic rule-driven analyzer for tests and offline runs. Each rule
// flags every line its pattern matches.
struct MockRule {
  CweId cwe = CweId::untagged();
  std::string pattern;
  bool is_regex = false;
  std::string description;
  std::string rule_id;
};

class MockAnalyzer : public Analyzer {
public:
  explicit MockAnalyzer(std::vector<MockRule> rules);
  static MockAnalyzer from_json(const nlohmann::json& rules);

  SecurityVerdict analyze(const std::string& code, Language language,
                          const std::string& code_id) const override;

private:
  std::vector<MockRule> rules_;
};

// Runs an external analyzer process per sample. The command template is an
// argv whose elements may contain the placeholders {src_dir} (directory
// holding the sample source file) and {report} (path the tool must write
// its result document to). Each call uses a fresh working directory, so
// concurrent calls do not interfere.
class SubprocessAnalyzer : public Analyzer {
public:
  struct Config {
    std::vector<std::string> command;
    std::chrono::milliseconds timeout{std::chrono::seconds(300)};
    std::string source_name; // defaults to sample{.py,.cpp} per language
  };

  explicit SubprocessAnalyzer(Config config);

  SecurityVerdict analyze(const std::string& code, Language language,
                          const std::string& code_id) const override;

private:
  Config config_;
};

// Builds an analyzer from config: {"type": "mock", "rules": [...]} or
// {"type": "subprocess", "command": [...], "timeout_s": N}. Rule lists may
// also live in a separate file via "rules_path".
std::unique_ptr<Analyzer> make_analyzer(const nlohmann::json& config);

} // namespace codemend
