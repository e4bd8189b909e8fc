#include "codemend/repair.hpp"

#include "codemend/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <thread>

namespace codemend {

std::string to_string(ReportMode mode) {
  switch (mode) {
  case ReportMode::full:
    return "full";
  case ReportMode::codeql_only:
    return "codeql_only";
  case ReportMode::no_report:
    return "no_report";
  }
  return "full";
}

ReportMode parse_report_mode(std::string_view tag) {
  if (tag == "full") {
    return ReportMode::full;
  }
  if (tag == "codeql_only" || tag == "codeql-only") {
    return ReportMode::codeql_only;
  }
  if (tag == "no_report" || tag == "no-report") {
    return ReportMode::no_report;
  }
  throw ParseError("unknown report mode: '" + std::string(tag) + "'");
}

std::string to_string(RejectStage stage) {
  switch (stage) {
  case RejectStage::extraction:
    return "extraction";
  case RejectStage::empty:
    return "empty";
  case RejectStage::still_vulnerable:
    return "still_vulnerable";
  case RejectStage::tool_error:
    return "tool_error";
  }
  return "tool_error";
}

namespace {

RejectStage parse_reject_stage(std::string_view tag) {
  if (tag == "extraction") {
    return RejectStage::extraction;
  }
  if (tag == "empty") {
    return RejectStage::empty;
  }
  if (tag == "still_vulnerable") {
    return RejectStage::still_vulnerable;
  }
  if (tag == "tool_error") {
    return RejectStage::tool_error;
  }
  throw ParseError("unknown rejection stage: '" + std::string(tag) + "'");
}

std::vector<CweId> distinct_cwes(const std::vector<Finding>& findings) {
  std::set<CweId> seen;
  for (const auto& finding : findings) {
    seen.insert(finding.cwe);
  }
  return {seen.begin(), seen.end()};
}

} // namespace

// ---------------------------------------------------------------------------
// Repair statistics

double RepairStats::truncate2(double percent) {
  return std::floor(percent * 100.0 + 1e-9) / 100.0;
}

void RepairStats::record_sample(const std::vector<CweId>& cwes,
                                ReportMode mode, bool repaired) {
  std::set<CweId> unique(cwes.begin(), cwes.end());
  for (const auto& cwe : unique) {
    Bucket& bucket = buckets_[{cwe.str(), mode}];
    bucket.attempted += 1;
    bucket.repaired += repaired ? 1 : 0;
  }
  Bucket& total = totals_[mode];
  total.attempted += 1;
  total.repaired += repaired ? 1 : 0;
}

int RepairStats::attempted(const CweId& cwe, ReportMode mode) const {
  auto it = buckets_.find({cwe.str(), mode});
  return it == buckets_.end() ? 0 : it->second.attempted;
}

int RepairStats::repaired(const CweId& cwe, ReportMode mode) const {
  auto it = buckets_.find({cwe.str(), mode});
  return it == buckets_.end() ? 0 : it->second.repaired;
}

int RepairStats::total_attempted(ReportMode mode) const {
  auto it = totals_.find(mode);
  return it == totals_.end() ? 0 : it->second.attempted;
}

int RepairStats::total_repaired(ReportMode mode) const {
  auto it = totals_.find(mode);
  return it == totals_.end() ? 0 : it->second.repaired;
}

double RepairStats::repair_rate(const CweId& cwe, ReportMode mode) const {
  const int n = attempted(cwe, mode);
  if (n == 0) {
    return 0.0;
  }
  return truncate2(100.0 * repaired(cwe, mode) / n);
}

double RepairStats::average_repair_rate(ReportMode mode) const {
  const auto ids = cwes(mode);
  if (ids.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (const auto& cwe : ids) {
    sum += repair_rate(cwe, mode);
  }
  return truncate2(sum / static_cast<double>(ids.size()));
}

std::vector<CweId> RepairStats::cwes(ReportMode mode) const {
  std::vector<CweId> out;
  for (const auto& [key, bucket] : buckets_) {
    if (key.second == mode) {
      out.push_back(CweId::parse(key.first));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report and prompt rendering

std::string build_security_report(const std::vector<Finding>& findings,
                                  const Catalog& catalog, Language language,
                                  ReportMode mode) {
  if (mode == ReportMode::no_report) {
    return "";
  }
  if (findings.empty()) {
    throw ConfigError("security report requested for a sample without "
                      "findings");
  }
  std::vector<Finding> ordered = findings;
  sort_findings(ordered);

  std::string report;
  std::set<std::string> hints_emitted;
  int counter = 0;
  for (const auto& finding : ordered) {
    ++counter;
    if (counter > 1) {
      report += "\n\n";
    }
    report += std::to_string(counter) + "- The code has a CWE vulnerability "
              "at line " + std::to_string(finding.line) +
              ". The vulnerability is of " + finding.cwe.str() + " type (" +
              finding.description + ").";
    if (mode == ReportMode::full &&
        !hints_emitted.contains(finding.cwe.str())) {
      const auto resolved = catalog.lookup(finding.cwe, language);
      report += "\n\n" + resolved.hint;
      hints_emitted.insert(finding.cwe.str());
    }
  }
  return report;
}

namespace {

std::string correction_checklist(const std::string& lang_name) {
  return "- Correct all vulnerabilities in a single solution.\n"
         "- Avoid any syntax errors and ensure the code is valid in " +
         lang_name + ".\n"
         "- Do not provide multiple solutions or additional commentary "
         "after the corrected code.\n"
         "- Present the repaired code in a Markdown code block for " +
         lang_name + ".\n"
         "- Do not write any explanation after the corrected code.\n"
         "- If new libraries are required, include them after the current "
         "included libraries.";
}

std::string fenced(const std::string& lang_name, const std::string& code) {
  std::string block = "```" + lang_name + "\n" + code;
  if (block.back() != '\n') {
    block += '\n';
  }
  block += "```";
  return block;
}

constexpr const char* kExpectedOutputs =
    "Expected Outputs:\n"
    "- A clear and concise description of how to address the "
    "vulnerabilities. This is a MUST.\n"
    "- The corrected version of the code.\n";

} // namespace

std::string build_prompt(const VulnerableSample& sample,
                         const std::string& report, ReportMode mode) {
  const std::string lang = display_name(sample.language);
  std::string prompt;
  if (mode == ReportMode::no_report) {
    prompt += "You are a " + lang + " developer.\n\n";
    prompt += "Instructions:\n";
    prompt += "1. Analysis: If there is a vulnerability in the code, provide "
              "a detailed explanation of the vulnerabilities present. "
              "Describe the steps necessary to fix these issues.\n";
    prompt += "2. Correction: If there is a vulnerability in the code, "
              "repair the code. Ensure the following:\n";
    prompt += correction_checklist(lang);
    prompt += "\n\nCode:\n";
    prompt += fenced(lang, sample.code);
    prompt += "\n\n";
    prompt += kExpectedOutputs;
    return prompt;
  }
  prompt += "You are a security engineer and " + lang +
            " developer. The following code has " +
            std::to_string(sample.findings.size()) + " vulnerability(ies):\n\n";
  prompt += report;
  prompt += "\n\nInstructions:\n";
  prompt += "1. Analysis: First, provide a detailed explanation of the "
            "vulnerabilities present. Describe the steps necessary to fix "
            "these issues.\n";
  prompt += "2. Correction: After your explanation, directly repair the "
            "code. Ensure the following:\n";
  prompt += correction_checklist(lang);
  prompt += "\n\nVulnerable code:\n";
  prompt += fenced(lang, sample.code);
  prompt += "\n\n";
  prompt += kExpectedOutputs;
  return prompt;
}

// ---------------------------------------------------------------------------
// Code extraction

namespace {

std::string ltrim(const std::string& s) {
  size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) {
    ++i;
  }
  return s.substr(i);
}

std::string rtrim(const std::string& s) {
  size_t end = s.size();
  while (end > 0 && std::isspace(static_cast<unsigned char>(s[end - 1]))) {
    --end;
  }
  return s.substr(0, end);
}

struct FencedBlock {
  std::string info;
  std::string content;
};

std::vector<FencedBlock> fenced_blocks(const std::string& text) {
  std::vector<FencedBlock> blocks;
  std::vector<std::string> lines;
  {
    std::string current;
    for (char c : text) {
      if (c == '\n') {
        lines.push_back(current);
        current.clear();
      } else {
        current += c;
      }
    }
    lines.push_back(current);
  }
  bool in_block = false;
  FencedBlock block;
  std::vector<std::string> body;
  for (const auto& raw : lines) {
    const std::string line = ltrim(raw);
    if (line.rfind("```", 0) == 0) {
      if (!in_block) {
        in_block = true;
        block.info = rtrim(line.substr(3));
        body.clear();
      } else {
        std::string content;
        for (size_t i = 0; i < body.size(); ++i) {
          if (i > 0) {
            content += '\n';
          }
          content += body[i];
        }
        block.content = std::move(content);
        blocks.push_back(block);
        in_block = false;
      }
      continue;
    }
    if (in_block) {
      body.push_back(raw);
    }
  }
  if (in_block) {
    // Truncated generation: accept the open block up to end of text.
    std::string content;
    for (size_t i = 0; i < body.size(); ++i) {
      if (i > 0) {
        content += '\n';
      }
      content += body[i];
    }
    block.content = std::move(content);
    blocks.push_back(block);
  }
  return blocks;
}

} // namespace

std::string extract_code(const std::string& model_output, Language language) {
  const auto blocks = fenced_blocks(model_output);
  const FencedBlock* chosen = nullptr;
  for (const auto& block : blocks) {
    if (!block.info.empty() && fence_tag_matches(language, block.info)) {
      chosen = &block;
      break;
    }
  }
  if (chosen == nullptr) {
    for (const auto& block : blocks) {
      if (block.info.empty()) {
        chosen = &block;
        break;
      }
    }
  }
  if (chosen == nullptr) {
    throw ExtractionError("model output contains no usable fenced code block");
  }
  const std::string& code = chosen->content;
  if (rtrim(code).empty()) {
    throw EmptyFixError("extracted code block is empty");
  }
  return code;
}

// ---------------------------------------------------------------------------
// Repair loop

RepairOutcome repair_one(const VulnerableSample& sample, ReportMode mode,
                         Backend& backend, const Analyzer& oracle,
                         const Catalog& catalog, const RepairParams& params) {
  if (sample.findings.empty()) {
    return Rejection{sample.id, RejectStage::tool_error, {},
                     "sample has no validated findings"};
  }
  std::string report;
  try {
    report = build_security_report(sample.findings, catalog, sample.language,
                                   mode);
  } catch (const Error& e) {
    return Rejection{sample.id, RejectStage::tool_error, {},
                     std::string("report: ") + e.what()};
  }
  const std::string prompt = build_prompt(sample, report, mode);

  Rejection last{sample.id, RejectStage::tool_error, {}, ""};
  const int attempts = 1 + std::max(0, params.retry_budget);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    CompletionRequest request;
    request.prompt = prompt;
    request.max_new_tokens = params.max_new_tokens;
    request.temperature = params.temperature;
    request.top_p = params.top_p;
    request.n_samples = 1;

    std::string raw;
    try {
      raw = backend.complete(request).front().text;
    } catch (const Error& e) {
      return Rejection{sample.id, RejectStage::tool_error, {},
                       std::string("backend: ") + e.what()};
    }

    std::string fixed;
    try {
      fixed = extract_code(raw, sample.language);
    } catch (const EmptyFixError& e) {
      return Rejection{sample.id, RejectStage::empty, {}, e.what()};
    } catch (const ExtractionError& e) {
      return Rejection{sample.id, RejectStage::extraction, {}, e.what()};
    }

    SecurityVerdict verdict;
    try {
      verdict = oracle.analyze(fixed, sample.language, sample.id);
    } catch (const Error& e) {
      return Rejection{sample.id, RejectStage::tool_error, {},
                       std::string("oracle: ") + e.what()};
    }
    if (is_secure(verdict)) {
      return SecurePair{sample.id, sample.code,      fixed,
                        sample.language, distinct_cwes(sample.findings), raw};
    }
    last = Rejection{sample.id, RejectStage::still_vulnerable,
                     verdict.findings, "fix still reports findings"};
  }
  return last;
}

BatchResult run_batch(
    const std::vector<VulnerableSample>& samples, ReportMode mode,
    Backend& backend, const Analyzer& oracle, const Catalog& catalog,
    const RepairParams& params, int jobs,
    const std::map<std::string, RepairOutcome>* done,
    const std::function<void(const std::string& id, const RepairOutcome&)>&
        on_outcome) {
  std::vector<std::optional<RepairOutcome>> outcomes(samples.size());

  // Replay journaled outcomes first so crashed runs resume without
  // touching the backend again.
  std::vector<size_t> pending;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (done != nullptr) {
      if (auto it = done->find(samples[i].id); it != done->end()) {
        outcomes[i] = it->second;
        continue;
      }
    }
    pending.push_back(i);
  }

  std::mutex outcome_mutex;
  auto process = [&](size_t index) {
    RepairOutcome outcome =
        repair_one(samples[index], mode, backend, oracle, catalog, params);
    std::lock_guard lock(outcome_mutex);
    if (on_outcome) {
      on_outcome(samples[index].id, outcome);
    }
    outcomes[index] = std::move(outcome);
  };

  // Replay backends hand out responses in call order; parallel scheduling
  // would make the assignment nondeterministic.
  const int worker_count =
      backend.replay() ? 1 : std::max(1, jobs);
  if (worker_count == 1 || pending.size() <= 1) {
    for (size_t index : pending) {
      process(index);
    }
  } else {
    std::atomic<size_t> cursor{0};
    std::vector<std::thread> workers;
    const int spawn = std::min<size_t>(worker_count, pending.size());
    workers.reserve(spawn);
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

  BatchResult result;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!outcomes[i]) {
      continue; // unreachable; every sample is processed or replayed
    }
    const bool repaired = std::holds_alternative<SecurePair>(*outcomes[i]);
    result.stats.record_sample(distinct_cwes(samples[i].findings), mode,
                               repaired);
    if (repaired) {
      result.pairs.push_back(std::get<SecurePair>(*outcomes[i]));
    } else {
      result.rejections.push_back(std::get<Rejection>(*outcomes[i]));
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end(),
            [](const SecurePair& a, const SecurePair& b) {
              return a.sample_id < b.sample_id;
            });
  std::sort(result.rejections.begin(), result.rejections.end(),
            [](const Rejection& a, const Rejection& b) {
              return a.sample_id < b.sample_id;
            });
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json finding_to_json(const Finding& finding) {
  return nlohmann::json{{"cwe", finding.cwe.str()},
                        {"line", finding.line},
                        {"description", finding.description},
                        {"rule_id", finding.rule_id}};
}

Finding finding_from_json(const nlohmann::json& doc) {
  Finding finding;
  finding.cwe = CweId::parse(doc.at("cwe").get<std::string>());
  finding.line = doc.at("line").get<int>();
  if (finding.line < 1) {
    throw ParseError("finding line must be >= 1");
  }
  finding.description = doc.at("description").get<std::string>();
  if (finding.description.empty()) {
    throw ParseError("finding description must be non-empty");
  }
  finding.rule_id = doc.value("rule_id", "");
  return finding;
}

VulnerableSample sample_from_json(const nlohmann::json& doc) {
  VulnerableSample sample;
  sample.id = doc.at("id").get<std::string>();
  sample.code = doc.at("code").get<std::string>();
  sample.language = parse_language(doc.at("language").get<std::string>());
  for (const auto& finding : doc.at("findings")) {
    sample.findings.push_back(finding_from_json(finding));
  }
  if (sample.findings.empty()) {
    // Only validated-vulnerable samples may enter the repair loop.
    throw ParseError("sample " + sample.id + " carries no findings");
  }
  sample.origin = doc.value("origin", "");
  return sample;
}

nlohmann::json sample_to_json(const VulnerableSample& sample) {
  nlohmann::json findings = nlohmann::json::array();
  for (const auto& finding : sample.findings) {
    findings.push_back(finding_to_json(finding));
  }
  return nlohmann::json{{"id", sample.id},
                        {"code", sample.code},
                        {"language", to_string(sample.language)},
                        {"findings", findings},
                        {"origin", sample.origin}};
}

nlohmann::json pair_to_json(const SecurePair& pair) {
  nlohmann::json cwes = nlohmann::json::array();
  for (const auto& cwe : pair.cwes) {
    cwes.push_back(cwe.str());
  }
  return nlohmann::json{{"sample_id", pair.sample_id},
                        {"vulnerable_code", pair.vulnerable_code},
                        {"secure_code", pair.secure_code},
                        {"language", to_string(pair.language)},
                        {"cwes", cwes},
                        {"model_raw_output", pair.model_raw_output}};
}

SecurePair pair_from_json(const nlohmann::json& doc) {
  SecurePair pair;
  pair.sample_id = doc.at("sample_id").get<std::string>();
  pair.vulnerable_code = doc.at("vulnerable_code").get<std::string>();
  pair.secure_code = doc.at("secure_code").get<std::string>();
  if (pair.secure_code.empty()) {
    throw ParseError("secure pair " + pair.sample_id + " has empty fix");
  }
  pair.language = parse_language(doc.at("language").get<std::string>());
  for (const auto& cwe : doc.at("cwes")) {
    pair.cwes.push_back(CweId::parse(cwe.get<std::string>()));
  }
  pair.model_raw_output = doc.value("model_raw_output", "");
  return pair;
}

nlohmann::json rejection_to_json(const Rejection& rejection) {
  nlohmann::json findings = nlohmann::json::array();
  for (const auto& finding : rejection.residual_findings) {
    findings.push_back(finding_to_json(finding));
  }
  return nlohmann::json{{"sample_id", rejection.sample_id},
                        {"stage", to_string(rejection.stage)},
                        {"residual_findings", findings},
                        {"detail", rejection.detail}};
}

Rejection rejection_from_json(const nlohmann::json& doc) {
  Rejection rejection;
  rejection.sample_id = doc.at("sample_id").get<std::string>();
  rejection.stage = parse_reject_stage(doc.at("stage").get<std::string>());
  for (const auto& finding : doc.value("residual_findings",
                                       nlohmann::json::array())) {
    rejection.residual_findings.push_back(finding_from_json(finding));
  }
  rejection.detail = doc.value("detail", "");
  return rejection;
}

nlohmann::json outcome_to_json(const RepairOutcome& outcome) {
  if (std::holds_alternative<SecurePair>(outcome)) {
    return nlohmann::json{{"kind", "pair"},
                          {"data", pair_to_json(std::get<SecurePair>(outcome))}};
  }
  return nlohmann::json{
      {"kind", "rejection"},
      {"data", rejection_to_json(std::get<Rejection>(outcome))}};
}

RepairOutcome outcome_from_json(const nlohmann::json& doc) {
  const std::string kind = doc.at("kind").get<std::string>();
  if (kind == "pair") {
    return pair_from_json(doc.at("data"));
  }
  if (kind == "rejection") {
    return rejection_from_json(doc.at("data"));
  }
  throw ParseError("unknown outcome kind: '" + kind + "'");
}

} // namespace codemend
