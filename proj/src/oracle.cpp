#include "codemend/oracle.hpp"

#include "codemend/error.hpp"
#include "codemend/subprocess.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

namespace codemend {

int CweHistogram::total() const {
  int sum = other;
  for (const auto& [id, count] : counts) {
    sum += count;
  }
  return sum;
}

bool is_secure(const SecurityVerdict& verdict) {
  return verdict.findings.empty();
}

CweHistogram classify(const std::vector<Finding>& findings,
                      const std::set<CweId>& targets) {
  CweHistogram histogram;
  for (const auto& finding : findings) {
    if (targets.contains(finding.cwe)) {
      histogram.counts[finding.cwe] += 1;
    } else {
      histogram.other += 1;
    }
  }
  return histogram;
}

void sort_findings(std::vector<Finding>& findings) {
  std::sort(findings.begin(), findings.end(),
            [](const Finding& a, const Finding& b) {
              return std::tie(a.line, a.cwe, a.rule_id) <
                     std::tie(b.line, b.cwe, b.rule_id);
            });
}

namespace {

// Rule tags look like "external/cwe/cwe-079".
std::vector<CweId> cwe_tags(const nlohmann::json& rule) {
  std::vector<CweId> out;
  if (!rule.contains("properties") || !rule["properties"].contains("tags")) {
    return out;
  }
  for (const auto& tag : rule["properties"]["tags"]) {
    if (!tag.is_string()) {
      continue;
    }
    const std::string text = tag.get<std::string>();
    const auto pos = text.rfind("cwe/");
    if (pos == std::string::npos) {
      continue;
    }
    try {
      out.push_back(CweId::parse(text.substr(pos + 4)));
    } catch (const ParseError&) {
      // Non-numeric tail ("cwe/top25"): not a weakness id.
    }
  }
  return out;
}

int first_location_line(const nlohmann::json& result) {
  if (!result.contains("locations") || result["locations"].empty()) {
    return 1;
  }
  const auto& loc = result["locations"][0];
  if (loc.contains("physicalLocation") &&
      loc["physicalLocation"].contains("region") &&
      loc["physicalLocation"]["region"].contains("startLine")) {
    const int line = loc["physicalLocation"]["region"]["startLine"].get<int>();
    return line >= 1 ? line : 1;
  }
  return 1;
}

} // namespace

std::vector<Finding> parse_report(const nlohmann::json& report) {
  if (!report.is_object() || !report.contains("runs") ||
      !report["runs"].is_array()) {
    throw ParseError("report document lacks a 'runs' array");
  }
  std::vector<Finding> findings;
  for (const auto& run : report["runs"]) {
    // Index the run's rules so results can be resolved by id or index.
    std::map<std::string, const nlohmann::json*> rules_by_id;
    const nlohmann::json* rules = nullptr;
    if (run.contains("tool") && run["tool"].contains("driver") &&
        run["tool"]["driver"].contains("rules")) {
      rules = &run["tool"]["driver"]["rules"];
      for (const auto& rule : *rules) {
        if (rule.contains("id") && rule["id"].is_string()) {
          rules_by_id[rule["id"].get<std::string>()] = &rule;
        }
      }
    }
    if (!run.contains("results")) {
      continue;
    }
    if (!run["results"].is_array()) {
      throw ParseError("run 'results' is not an array");
    }
    for (const auto& result : run["results"]) {
      if (!result.is_object()) {
        throw ParseError("result is not an object");
      }
      std::string rule_id;
      if (result.contains("ruleId") && result["ruleId"].is_string()) {
        rule_id = result["ruleId"].get<std::string>();
      }
      const nlohmann::json* rule = nullptr;
      if (auto it = rules_by_id.find(rule_id); it != rules_by_id.end()) {
        rule = it->second;
      } else if (rules != nullptr && result.contains("ruleIndex")) {
        const auto index = result["ruleIndex"].get<size_t>();
        if (index < rules->size()) {
          rule = &(*rules)[index];
        }
      }

      std::string description;
      if (result.contains("message") && result["message"].contains("text")) {
        description = result["message"]["text"].get<std::string>();
      }
      if (description.empty()) {
        description = rule_id.empty() ? "(no message)" : rule_id;
      }
      const int line = first_location_line(result);

      std::vector<CweId> cwes;
      if (rule != nullptr) {
        cwes = cwe_tags(*rule);
      }
      if (cwes.empty()) {
        cwes.push_back(CweId::untagged());
      }
      for (const auto& cwe : cwes) {
        findings.push_back(Finding{cwe, line, description, rule_id});
      }
    }
  }
  sort_findings(findings);
  return findings;
}

std::vector<Finding> parse_report_text(const std::string& raw) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid report document: ") + e.what());
  }
  return parse_report(doc);
}

MockAnalyzer::MockAnalyzer(std::vector<MockRule> rules)
    : rules_(std::move(rules)) {}

MockAnalyzer MockAnalyzer::from_json(const nlohmann::json& rules) {
  if (!rules.is_array()) {
    throw ParseError("mock rule set must be an array");
  }
  std::vector<MockRule> out;
  for (const auto& item : rules) {
    MockRule rule;
    rule.cwe = CweId::parse(item.at("cwe").get<std::string>());
    rule.pattern = item.at("pattern").get<std::string>();
    rule.is_regex = item.value("is_regex", false);
    rule.description = item.value("description", "pattern '" + rule.pattern +
                                                     "' matched");
    rule.rule_id = item.value("rule_id", "mock/" + rule.cwe.str());
    out.push_back(std::move(rule));
  }
  return MockAnalyzer(std::move(out));
}

SecurityVerdict MockAnalyzer::analyze(const std::string& code,
                                      Language /*language*/,
                                      const std::string& code_id) const {
  if (code.empty()) {
    throw ConfigError("analyze: empty code sample");
  }
  SecurityVerdict verdict;
  verdict.code_id = code_id;
  std::vector<std::string> lines;
  {
    std::istringstream stream(code);
    std::string line;
    while (std::getline(stream, line)) {
      lines.push_back(line);
    }
  }
  for (const auto& rule : rules_) {
    std::optional<std::regex> re;
    if (rule.is_regex) {
      try {
        re.emplace(rule.pattern);
      } catch (const std::regex_error& e) {
        throw ConfigError("mock rule '" + rule.rule_id +
                          "': bad regex: " + e.what());
      }
    }
    for (size_t i = 0; i < lines.size(); ++i) {
      const bool hit = re ? std::regex_search(lines[i], *re)
                          : lines[i].find(rule.pattern) != std::string::npos;
      if (hit) {
        verdict.findings.push_back(Finding{rule.cwe, static_cast<int>(i) + 1,
                                           rule.description, rule.rule_id});
      }
    }
  }
  sort_findings(verdict.findings);
  return verdict;
}

SubprocessAnalyzer::SubprocessAnalyzer(Config config)
    : config_(std::move(config)) {
  if (config_.command.empty()) {
    throw ConfigError("subprocess analyzer: empty command template");
  }
}

namespace {

std::string substitute(std::string arg, const std::string& key,
                       const std::string& value) {
  size_t pos = 0;
  while ((pos = arg.find(key, pos)) != std::string::npos) {
    arg.replace(pos, key.size(), value);
    pos += value.size();
  }
  return arg;
}

std::filesystem::path fresh_scratch_dir() {
  static std::atomic<uint64_t> counter{0};
  std::random_device rd;
  const auto tag = std::to_string(rd()) + "-" +
                   std::to_string(counter.fetch_add(1));
  auto dir = std::filesystem::temp_directory_path() /
             ("codemend-oracle-" + tag);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace

SecurityVerdict SubprocessAnalyzer::analyze(const std::string& code,
                                            Language language,
                                            const std::string& code_id) const {
  if (code.empty()) {
    throw ConfigError("analyze: empty code sample");
  }
  const auto scratch = fresh_scratch_dir();
  struct Cleanup {
    std::filesystem::path dir;
    ~Cleanup() {
      std::error_code ec;
      std::filesystem::remove_all(dir, ec);
    }
  } cleanup{scratch};

  const auto src_dir = scratch / "src";
  std::filesystem::create_directories(src_dir);
  const std::string source_name = config_.source_name.empty()
                                      ? "sample" + source_extension(language)
                                      : config_.source_name;
  {
    std::ofstream out(src_dir / source_name, std::ios::binary);
    out << code;
  }
  const auto report_path = scratch / "report.sarif";

  std::vector<std::string> argv;
  argv.reserve(config_.command.size());
  for (const auto& arg : config_.command) {
    argv.push_back(substitute(substitute(arg, "{src_dir}", src_dir.string()),
                              "{report}", report_path.string()));
  }

  ProcessOptions options;
  options.timeout = config_.timeout;
  const ProcessResult proc = run_process(argv, options);
  if (proc.timed_out) {
    throw TimeoutError("analyzer timed out after " +
                       std::to_string(config_.timeout.count()) + " ms");
  }
  if (!std::filesystem::exists(report_path)) {
    throw ToolError("analyzer produced no report (exit " +
                    std::to_string(proc.exit_code) + "): " + proc.err);
  }

  std::ifstream in(report_path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();

  SecurityVerdict verdict;
  verdict.code_id = code_id;
  verdict.findings = parse_report_text(buffer.str());
  return verdict;
}

std::unique_ptr<Analyzer> make_analyzer(const nlohmann::json& config) {
  const std::string type = config.value("type", "");
  if (type == "mock") {
    nlohmann::json rules;
    if (config.contains("rules_path")) {
      std::ifstream in(config["rules_path"].get<std::string>());
      if (!in) {
        throw ConfigError("cannot open mock rule file: " +
                          config["rules_path"].get<std::string>());
      }
      in >> rules;
    } else if (config.contains("rules")) {
      rules = config["rules"];
    } else {
      throw ConfigError("mock analyzer needs 'rules' or 'rules_path'");
    }
    return std::make_unique<MockAnalyzer>(MockAnalyzer::from_json(rules));
  }
  if (type == "subprocess") {
    SubprocessAnalyzer::Config sub;
    for (const auto& arg : config.at("command")) {
      sub.command.push_back(arg.get<std::string>());
    }
    if (config.contains("timeout_s")) {
      sub.timeout = std::chrono::seconds(config["timeout_s"].get<int>());
    }
    sub.source_name = config.value("source_name", "");
    return std::make_unique<SubprocessAnalyzer>(std::move(sub));
  }
  throw ConfigError("oracle config: unknown type '" + type + "'");
}

} // namespace codemend
