#include "codemend/dataset.hpp"

#include "codemend/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <unordered_map>

namespace codemend {

std::string to_string(TokenScheme scheme) {
  switch (scheme) {
  case TokenScheme::lexical:
    return "lexical";
  case TokenScheme::whitespace:
    return "whitespace";
  case TokenScheme::external:
    return "external";
  }
  return "lexical";
}

TokenScheme parse_token_scheme(std::string_view tag) {
  if (tag == "lexical") {
    return TokenScheme::lexical;
  }
  if (tag == "whitespace") {
    return TokenScheme::whitespace;
  }
  if (tag == "external") {
    return TokenScheme::external;
  }
  throw ParseError("unknown tokenizer scheme: '" + std::string(tag) + "'");
}

std::string TokenSequence::detokenize() const {
  std::string out;
  for (const auto& token : tokens) {
    out += token;
  }
  return out;
}

namespace {

ExternalTokenizer g_external_tokenizer;
std::mutex g_external_mutex;

bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}
bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) != 0 || c == '_';
}
bool is_ident(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Consumes a quoted literal starting at `i` (code[i] is the quote).
// Unterminated literals end at end-of-line (end of text for triples).
size_t scan_string(const std::string& code, size_t i, bool allow_triple) {
  const char quote = code[i];
  if (allow_triple && i + 2 < code.size() && code[i + 1] == quote &&
      code[i + 2] == quote) {
    size_t j = i + 3;
    while (j < code.size()) {
      if (code[j] == '\\' && j + 1 < code.size()) {
        j += 2;
        continue;
      }
      if (code[j] == quote && j + 2 < code.size() && code[j + 1] == quote &&
          code[j + 2] == quote) {
        return j + 3;
      }
      ++j;
    }
    return code.size();
  }
  size_t j = i + 1;
  while (j < code.size()) {
    if (code[j] == '\\' && j + 1 < code.size()) {
      j += 2;
      continue;
    }
    if (code[j] == quote) {
      return j + 1;
    }
    if (code[j] == '\n') {
      return j; // unterminated; newline stays outside the token
    }
    ++j;
  }
  return code.size();
}

size_t scan_number(const std::string& code, size_t i) {
  size_t j = i;
  while (j < code.size()) {
    const char c = code[j];
    if (is_ident(c) || c == '.') {
      ++j;
      continue;
    }
    if ((c == '+' || c == '-') && j > i &&
        (code[j - 1] == 'e' || code[j - 1] == 'E') && j + 1 < code.size() &&
        is_digit(code[j + 1])) {
      ++j;
      continue;
    }
    break;
  }
  return j;
}

std::vector<std::string> lex(const std::string& code, Language language) {
  std::vector<std::string> tokens;
  size_t i = 0;
  const size_t n = code.size();
  while (i < n) {
    const char c = code[i];
    if (is_space(c)) {
      size_t j = i;
      while (j < n && is_space(code[j])) {
        ++j;
      }
      tokens.push_back(code.substr(i, j - i));
      i = j;
      continue;
    }
    if (language == Language::python && c == '#') {
      size_t j = i;
      while (j < n && code[j] != '\n') {
        ++j;
      }
      tokens.push_back(code.substr(i, j - i));
      i = j;
      continue;
    }
    if (language == Language::c_cpp && c == '/' && i + 1 < n) {
      if (code[i + 1] == '/') {
        size_t j = i;
        while (j < n && code[j] != '\n') {
          ++j;
        }
        tokens.push_back(code.substr(i, j - i));
        i = j;
        continue;
      }
      if (code[i + 1] == '*') {
        size_t j = code.find("*/", i + 2);
        j = j == std::string::npos ? n : j + 2;
        tokens.push_back(code.substr(i, j - i));
        i = j;
        continue;
      }
    }
    if (c == '"' || c == '\'') {
      const size_t j = scan_string(code, i, language == Language::python);
      tokens.push_back(code.substr(i, j - i));
      i = j;
      continue;
    }
    if (is_ident_start(c)) {
      size_t j = i;
      while (j < n && is_ident(code[j])) {
        ++j;
      }
      tokens.push_back(code.substr(i, j - i));
      i = j;
      continue;
    }
    if (is_digit(c)) {
      const size_t j = scan_number(code, i);
      tokens.push_back(code.substr(i, j - i));
      i = j;
      continue;
    }
    tokens.push_back(std::string(1, c));
    ++i;
  }
  return tokens;
}

std::vector<std::string> split_whitespace_runs(const std::string& code) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < code.size()) {
    const bool ws = is_space(code[i]);
    size_t j = i;
    while (j < code.size() && is_space(code[j]) == ws) {
      ++j;
    }
    tokens.push_back(code.substr(i, j - i));
    i = j;
  }
  return tokens;
}

} // namespace

void set_external_tokenizer(ExternalTokenizer tokenizer) {
  std::lock_guard lock(g_external_mutex);
  g_external_tokenizer = std::move(tokenizer);
}

TokenSequence tokenize(const std::string& code, TokenScheme scheme,
                       Language language) {
  TokenSequence sequence;
  sequence.scheme = scheme;
  switch (scheme) {
  case TokenScheme::lexical:
    sequence.tokens = lex(code, language);
    break;
  case TokenScheme::whitespace:
    sequence.tokens = split_whitespace_runs(code);
    break;
  case TokenScheme::external: {
    ExternalTokenizer tokenizer;
    {
      std::lock_guard lock(g_external_mutex);
      tokenizer = g_external_tokenizer;
    }
    if (!tokenizer) {
      throw ConfigError("external tokenizer scheme requested but none is "
                        "registered");
    }
    sequence.tokens = tokenizer(code, language);
    break;
  }
  }
  if (sequence.detokenize() != code) {
    throw ParseError("tokenizer is not lossless for this input");
  }
  return sequence;
}

bool is_whitespace_token(const std::string& token) {
  return !token.empty() &&
         std::all_of(token.begin(), token.end(), [](char c) { return is_space(c); });
}

bool is_comment_token(const std::string& token, Language language) {
  if (token.empty()) {
    return false;
  }
  if (language == Language::python) {
    return token.front() == '#';
  }
  return token.size() >= 2 && token[0] == '/' &&
         (token[1] == '/' || token[1] == '*');
}

// ---------------------------------------------------------------------------
// Matching blocks (longest contiguous matching subsequence, recursing on
// the flanks; ties resolve to the earliest start in `a`, then in `b`).

std::vector<MatchBlock> matching_blocks(std::span<const std::string> a,
                                        std::span<const std::string> b) {
  std::unordered_map<std::string_view, std::vector<size_t>> b2j;
  for (size_t j = 0; j < b.size(); ++j) {
    b2j[b[j]].push_back(j);
  }

  auto find_longest = [&](size_t alo, size_t ahi, size_t blo,
                          size_t bhi) -> MatchBlock {
    MatchBlock best{alo, blo, 0};
    std::unordered_map<size_t, size_t> j2len;
    for (size_t i = alo; i < ahi; ++i) {
      std::unordered_map<size_t, size_t> new_j2len;
      if (auto it = b2j.find(std::string_view(a[i])); it != b2j.end()) {
        for (size_t j : it->second) {
          if (j < blo) {
            continue;
          }
          if (j >= bhi) {
            break;
          }
          size_t k = 1;
          if (j > 0) {
            if (auto prev = j2len.find(j - 1); prev != j2len.end()) {
              k = prev->second + 1;
            }
          }
          new_j2len[j] = k;
          if (k > best.size) {
            best = MatchBlock{i - k + 1, j - k + 1, k};
          }
        }
      }
      j2len = std::move(new_j2len);
    }
    return best;
  };

  std::vector<MatchBlock> blocks;
  std::vector<std::array<size_t, 4>> queue{{0, a.size(), 0, b.size()}};
  while (!queue.empty()) {
    const auto [alo, ahi, blo, bhi] = queue.back();
    queue.pop_back();
    const MatchBlock match = find_longest(alo, ahi, blo, bhi);
    if (match.size == 0) {
      continue;
    }
    blocks.push_back(match);
    if (alo < match.a_start && blo < match.b_start) {
      queue.push_back({alo, match.a_start, blo, match.b_start});
    }
    if (match.a_start + match.size < ahi && match.b_start + match.size < bhi) {
      queue.push_back({match.a_start + match.size, ahi,
                       match.b_start + match.size, bhi});
    }
  }
  std::sort(blocks.begin(), blocks.end(),
            [](const MatchBlock& x, const MatchBlock& y) {
              return x.a_start < y.a_start;
            });
  return blocks;
}

std::vector<uint8_t> diff_mask(const TokenSequence& vulnerable,
                               const TokenSequence& secure) {
  if (vulnerable.scheme != secure.scheme) {
    throw ConfigError("diff_mask: token scheme mismatch");
  }
  std::vector<uint8_t> mask(secure.tokens.size(), 1);
  for (const MatchBlock& block :
       matching_blocks(vulnerable.tokens, secure.tokens)) {
    for (size_t j = block.b_start; j < block.b_start + block.size; ++j) {
      mask[j] = 0;
    }
  }
  return mask;
}

double masked_nll(std::span<const double> token_logprobs,
                  std::span<const uint8_t> mask) {
  if (token_logprobs.size() != mask.size()) {
    throw ConfigError("masked_nll: logprobs and mask lengths differ (" +
                      std::to_string(token_logprobs.size()) + " vs " +
                      std::to_string(mask.size()) + ")");
  }
  double loss = 0.0;
  for (size_t t = 0; t < mask.size(); ++t) {
    if (mask[t] != 0) {
      loss -= token_logprobs[t];
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training records

std::string to_string(SplitLabel label) {
  switch (label) {
  case SplitLabel::train:
    return "train";
  case SplitLabel::val:
    return "val";
  case SplitLabel::unassigned:
    return "unassigned";
  }
  return "unassigned";
}

SplitLabel parse_split_label(std::string_view tag) {
  if (tag == "train") {
    return SplitLabel::train;
  }
  if (tag == "val") {
    return SplitLabel::val;
  }
  if (tag == "unassigned") {
    return SplitLabel::unassigned;
  }
  throw ParseError("unknown split label: '" + std::string(tag) + "'");
}

TrainingRecord build_record(const SecurePair& pair, TokenScheme scheme) {
  TrainingRecord record;
  record.sample_id = pair.sample_id;
  record.secure_code = pair.secure_code;
  record.vulnerable_code = pair.vulnerable_code;
  record.language = pair.language;
  record.cwes = pair.cwes;
  record.secure_tokens = tokenize(pair.secure_code, scheme, pair.language);
  const TokenSequence vulnerable_tokens =
      tokenize(pair.vulnerable_code, scheme, pair.language);
  record.mask = diff_mask(vulnerable_tokens, record.secure_tokens);
  return record;
}

// ---------------------------------------------------------------------------
// Decontamination

namespace {

std::vector<std::string> significant_tokens(const std::string& code,
                                            Language language) {
  std::vector<std::string> out;
  for (auto& token : tokenize(code, TokenScheme::lexical, language).tokens) {
    if (!is_whitespace_token(token) && !is_comment_token(token, language)) {
      out.push_back(std::move(token));
    }
  }
  return out;
}

bool is_c_keyword(const std::string& word) {
  static const std::set<std::string> keywords{
      "if",     "while", "for",    "switch", "return", "sizeof",
      "do",     "else",  "catch",  "case",   "goto",   "new",
      "delete", "throw", "assert", "defined"};
  return keywords.contains(word);
}

} // namespace

std::vector<std::string> defined_function_names(const std::string& code,
                                                Language language) {
  const auto tokens = significant_tokens(code, language);
  std::vector<std::string> names;
  if (language == Language::python) {
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
      if (tokens[i] == "def" && is_ident_start(tokens[i + 1][0])) {
        names.push_back(tokens[i + 1]);
      }
    }
    return names;
  }
  // C/C++: identifier '(' ... ')' '{' at statement level.
  for (size_t i = 0; i + 1 < tokens.size(); ++i) {
    if (!is_ident_start(tokens[i][0]) || tokens[i + 1] != "(" ||
        is_c_keyword(tokens[i])) {
      continue;
    }
    if (i > 0 && (tokens[i - 1] == "." || tokens[i - 1] == ">" ||
                  tokens[i - 1] == ":" || tokens[i - 1] == "#")) {
      continue; // member access, scope qualifier, or preprocessor directive
    }
    int depth = 0;
    size_t j = i + 1;
    for (; j < tokens.size(); ++j) {
      if (tokens[j] == "(") {
        ++depth;
      } else if (tokens[j] == ")") {
        --depth;
        if (depth == 0) {
          break;
        }
      }
    }
    if (j + 1 < tokens.size() && depth == 0 && tokens[j + 1] == "{") {
      names.push_back(tokens[i]);
    }
  }
  return names;
}

double token_overlap_fraction(const std::vector<std::string>& prompt_tokens,
                              const std::vector<std::string>& code_tokens) {
  if (prompt_tokens.empty()) {
    return 0.0;
  }
  std::map<std::string, int> available;
  for (const auto& token : code_tokens) {
    available[token] += 1;
  }
  int matched = 0;
  for (const auto& token : prompt_tokens) {
    auto it = available.find(token);
    if (it != available.end() && it->second > 0) {
      it->second -= 1;
      ++matched;
    }
  }
  return static_cast<double>(matched) / static_cast<double>(prompt_tokens.size());
}

FilterResult overlap_filter(const std::vector<SecurePair>& pairs,
                            const std::vector<BenchmarkText>& prompts,
                            double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ConfigError("overlap threshold must be in (0, 1]");
  }

  struct PromptInfo {
    const BenchmarkText* prompt;
    std::vector<std::string> tokens;
    std::set<std::string> function_names;
  };
  std::vector<PromptInfo> infos;
  infos.reserve(prompts.size());
  for (const auto& prompt : prompts) {
    PromptInfo info{&prompt,
                    significant_tokens(prompt.text, prompt.language),
                    {}};
    for (auto& name : defined_function_names(prompt.text, prompt.language)) {
      info.function_names.insert(std::move(name));
    }
    infos.push_back(std::move(info));
  }

  FilterResult result;
  for (const auto& pair : pairs) {
    const auto vulnerable_tokens =
        significant_tokens(pair.vulnerable_code, pair.language);
    const auto secure_tokens =
        significant_tokens(pair.secure_code, pair.language);
    std::set<std::string> pair_functions;
    for (auto& name : defined_function_names(pair.vulnerable_code, pair.language)) {
      pair_functions.insert(std::move(name));
    }
    for (auto& name : defined_function_names(pair.secure_code, pair.language)) {
      pair_functions.insert(std::move(name));
    }

    std::optional<RemovedPair> removal;
    for (const auto& info : infos) {
      const double overlap =
          std::max(token_overlap_fraction(info.tokens, vulnerable_tokens),
                   token_overlap_fraction(info.tokens, secure_tokens));
      // A prompt fully contained in the code is contamination at any
      // threshold.
      if (overlap > threshold || overlap == 1.0) {
        removal = RemovedPair{pair, "token_overlap", info.prompt->id, overlap};
        break;
      }
      for (const auto& name : info.function_names) {
        if (pair_functions.contains(name)) {
          removal = RemovedPair{pair, "function_name", info.prompt->id, overlap};
          break;
        }
      }
      if (removal) {
        break;
      }
    }
    if (removal) {
      result.removed.push_back(std::move(*removal));
    } else {
      result.kept.push_back(pair);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Split assignment

void assign_splits(std::vector<TrainingRecord>& records, double val_fraction,
                   uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must be in (0, 1)");
  }
  const size_t n = records.size();
  const auto total_val = static_cast<size_t>(
      std::floor(static_cast<double>(n) * val_fraction + 1e-9));

  // Stratify by each record's first listed weakness.
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < n; ++i) {
    const std::string key =
        records[i].cwes.empty() ? "(none)" : records[i].cwes.front().str();
    groups[key].push_back(i);
  }

  std::mt19937_64 rng(seed);
  struct GroupPlan {
    std::string key;
    std::vector<size_t> indices;
    size_t quota;
    double remainder;
  };
  std::vector<GroupPlan> plans;
  size_t assigned = 0;
  for (auto& [key, indices] : groups) {
    std::shuffle(indices.begin(), indices.end(), rng);
    const double exact =
        static_cast<double>(indices.size()) * val_fraction;
    const auto quota = static_cast<size_t>(std::floor(exact + 1e-9));
    assigned += quota;
    plans.push_back(GroupPlan{key, std::move(indices), quota,
                              exact - static_cast<double>(quota)});
  }
  // Distribute the shortfall by largest fractional remainder; ties go to
  // the lexicographically smaller weakness for determinism.
  std::vector<size_t> order(plans.size());
  for (size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    if (plans[x].remainder != plans[y].remainder) {
      return plans[x].remainder > plans[y].remainder;
    }
    return plans[x].key < plans[y].key;
  });
  size_t shortfall = total_val > assigned ? total_val - assigned : 0;
  for (size_t i = 0; i < order.size() && shortfall > 0; ++i) {
    GroupPlan& plan = plans[order[i]];
    if (plan.quota < plan.indices.size()) {
      plan.quota += 1;
      --shortfall;
    }
  }

  for (auto& record : records) {
    record.split = SplitLabel::train;
  }
  for (const auto& plan : plans) {
    for (size_t i = 0; i < plan.quota; ++i) {
      records[plan.indices[i]].split = SplitLabel::val;
    }
  }
}

// ---------------------------------------------------------------------------
// Statistics and persistence

DatasetManifest stats(const std::vector<TrainingRecord>& records) {
  DatasetManifest manifest;
  for (const auto& record : records) {
    manifest.total += 1;
    manifest.totals_per_language[to_string(record.language)] += 1;
    for (const auto& cwe : record.cwes) {
      manifest.counts[{cwe.str(), to_string(record.language)}] += 1;
    }
    if (record.split == SplitLabel::train) {
      manifest.train_count += 1;
    } else if (record.split == SplitLabel::val) {
      manifest.val_count += 1;
    }
  }
  return manifest;
}

nlohmann::json manifest_to_json(const DatasetManifest& manifest) {
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& [key, count] : manifest.counts) {
    counts.push_back(
        {{"cwe", key.first}, {"language", key.second}, {"count", count}});
  }
  return nlohmann::json{
      {"kind", "dataset_manifest"},
      {"counts", counts},
      {"total", manifest.total},
      {"totals_per_language", manifest.totals_per_language},
      {"train_count", manifest.train_count},
      {"val_count", manifest.val_count},
      {"seed", manifest.seed},
      {"tokenizer_scheme", to_string(manifest.scheme)},
      {"val_fraction", manifest.val_fraction},
      {"overlap_threshold", manifest.overlap_threshold},
      {"finetuning_hyperparameters",
       {{"batch_size", manifest.lora.batch_size},
        {"epochs", manifest.lora.epochs},
        {"learning_rate", manifest.lora.learning_rate},
        {"rank", manifest.lora.rank},
        {"lora_alpha", manifest.lora.alpha}}}};
}

const char* kRecordsSchemaName = "codemend.training_records";
const int kRecordsSchemaVersion = 1;

nlohmann::json record_to_json(const TrainingRecord& record) {
  nlohmann::json cwes = nlohmann::json::array();
  for (const auto& cwe : record.cwes) {
    cwes.push_back(cwe.str());
  }
  return nlohmann::json{{"sample_id", record.sample_id},
                        {"language", to_string(record.language)},
                        {"cwes", cwes},
                        {"vulnerable_code", record.vulnerable_code},
                        {"secure_code", record.secure_code},
                        {"tokenizer_scheme", to_string(record.secure_tokens.scheme)},
                        {"mask", record.mask},
                        {"split", to_string(record.split)}};
}

TrainingRecord record_from_json(const nlohmann::json& doc) {
  TrainingRecord record;
  record.sample_id = doc.at("sample_id").get<std::string>();
  record.language = parse_language(doc.at("language").get<std::string>());
  for (const auto& cwe : doc.at("cwes")) {
    record.cwes.push_back(CweId::parse(cwe.get<std::string>()));
  }
  record.vulnerable_code = doc.at("vulnerable_code").get<std::string>();
  record.secure_code = doc.at("secure_code").get<std::string>();
  const TokenScheme scheme =
      parse_token_scheme(doc.at("tokenizer_scheme").get<std::string>());
  record.secure_tokens = tokenize(record.secure_code, scheme, record.language);
  record.mask = doc.at("mask").get<std::vector<uint8_t>>();
  if (record.mask.size() != record.secure_tokens.size()) {
    throw ParseError("record " + record.sample_id +
                     ": mask length does not match secure token count");
  }
  record.split = parse_split_label(doc.at("split").get<std::string>());
  return record;
}

void write_records_file(const std::filesystem::path& path,
                        const std::vector<TrainingRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write records file: " + path.string());
  }
  out << nlohmann::json{{"schema", kRecordsSchemaName},
                        {"version", kRecordsSchemaVersion}}
             .dump()
      << "\n";
  for (const auto& record : records) {
    out << record_to_json(record).dump() << "\n";
  }
}

std::vector<TrainingRecord>
read_records_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open records file: " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("records file is empty: " + path.string());
  }
  const auto header = nlohmann::json::parse(line);
  if (header.value("schema", "") != kRecordsSchemaName) {
    throw ParseError("records file has wrong schema header");
  }
  if (header.value("version", 0) != kRecordsSchemaVersion) {
    throw ParseError("records file has unsupported version " +
                     std::to_string(header.value("version", 0)));
  }
  std::vector<TrainingRecord> records;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return records;
}

} // namespace codemend
