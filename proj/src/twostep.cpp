#include "codemend/twostep.hpp"

#include "codemend/error.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <set>
#include <sstream>

namespace codemend {

namespace {

std::string strip(const std::string& s) {
  size_t begin = 0;
  size_t end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) {
    ++begin;
  }
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) {
    --end;
  }
  return s.substr(begin, end - begin);
}

bool is_blank(const std::string& line) { return strip(line).empty(); }

bool is_comment_line(const std::string& line, Language language) {
  const std::string t = strip(line);
  if (t.empty()) {
    return false;
  }
  if (language == Language::python) {
    return t.front() == '#';
  }
  return t.rfind("//", 0) == 0 || t.rfind("/*", 0) == 0 || t.rfind("*", 0) == 0;
}

// Splits an identifier list "a, b as c, d" into trimmed pieces; returns
// nothing if any piece is not a valid `name [as alias]` form.
std::optional<std::vector<std::string>> parse_name_list(const std::string& s) {
  std::vector<std::string> out;
  std::string piece;
  std::istringstream stream(s);
  while (std::getline(stream, piece, ',')) {
    const std::string name = strip(piece);
    if (name.empty()) {
      return std::nullopt;
    }
    std::istringstream words(name);
    std::string first, middle, alias, extra;
    words >> first >> middle >> alias;
    if (words >> extra) {
      return std::nullopt;
    }
    auto valid_ident = [](const std::string& w) {
      if (w.empty() || !(std::isalpha(static_cast<unsigned char>(w[0])) || w[0] == '_')) {
        return false;
      }
      return std::all_of(w.begin(), w.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
      });
    };
    if (!valid_ident(first)) {
      return std::nullopt;
    }
    if (!middle.empty() && (middle != "as" || !valid_ident(alias))) {
      return std::nullopt;
    }
    if (middle == "as") {
      out.push_back(first + " as " + alias);
    } else {
      out.push_back(first);
    }
  }
  if (out.empty()) {
    return std::nullopt;
  }
  return out;
}

struct ParsedImportLine {
  enum class Kind { plain, from, include } kind;
  std::string module;             // from-imports and includes
  std::vector<std::string> names; // imported units
};

std::optional<ParsedImportLine> parse_import_line(const std::string& raw,
                                                  Language language) {
  const std::string line = strip(raw);
  if (line.empty()) {
    return std::nullopt;
  }
  if (language == Language::c_cpp) {
    if (line.rfind("#", 0) != 0) {
      return std::nullopt;
    }
    std::string rest = strip(line.substr(1));
    if (rest.rfind("include", 0) != 0) {
      return std::nullopt;
    }
    rest = strip(rest.substr(7));
    if (rest.size() < 3) {
      return std::nullopt;
    }
    char open = rest.front();
    char close = open == '<' ? '>' : open == '"' ? '"' : '\0';
    if (close == '\0') {
      return std::nullopt;
    }
    const auto end = rest.find(close, 1);
    if (end == std::string::npos || end < 2) {
      return std::nullopt;
    }
    ParsedImportLine parsed;
    parsed.kind = ParsedImportLine::Kind::include;
    parsed.module = rest.substr(0, end + 1); // keep the delimiters
    return parsed;
  }
  if (line.rfind("import ", 0) == 0) {
    const auto names = parse_name_list(line.substr(7));
    if (!names) {
      return std::nullopt;
    }
    ParsedImportLine parsed;
    parsed.kind = ParsedImportLine::Kind::plain;
    parsed.names = *names;
    return parsed;
  }
  if (line.rfind("from ", 0) == 0) {
    const auto import_pos = line.find(" import ");
    if (import_pos == std::string::npos) {
      return std::nullopt;
    }
    const std::string module = strip(line.substr(5, import_pos - 5));
    if (module.empty() ||
        module.find_first_of(" \t(),") != std::string::npos) {
      return std::nullopt;
    }
    const std::string rhs = strip(line.substr(import_pos + 8));
    if (rhs == "*") {
      ParsedImportLine parsed;
      parsed.kind = ParsedImportLine::Kind::from;
      parsed.module = module;
      parsed.names = {"*"};
      return parsed;
    }
    const auto names = parse_name_list(rhs);
    if (!names) {
      return std::nullopt;
    }
    ParsedImportLine parsed;
    parsed.kind = ParsedImportLine::Kind::from;
    parsed.module = module;
    parsed.names = *names;
    return parsed;
  }
  return std::nullopt;
}

std::vector<ImportStatement> units_of(const ParsedImportLine& parsed,
                                      Language language) {
  std::vector<ImportStatement> units;
  switch (parsed.kind) {
  case ParsedImportLine::Kind::include: {
    ImportStatement unit;
    unit.language = language;
    unit.text = "#include " + parsed.module;
    // Identity ignores the <...> vs "..." delimiter style.
    unit.key = "include:" + parsed.module.substr(1, parsed.module.size() - 2);
    units.push_back(std::move(unit));
    break;
  }
  case ParsedImportLine::Kind::plain:
    for (const auto& name : parsed.names) {
      ImportStatement unit;
      unit.language = language;
      unit.text = "import " + name;
      unit.key = "import:" + name;
      units.push_back(std::move(unit));
    }
    break;
  case ParsedImportLine::Kind::from:
    for (const auto& name : parsed.names) {
      ImportStatement unit;
      unit.language = language;
      unit.text = "from " + parsed.module + " import " + name;
      unit.key = "from:" + parsed.module + ":" + name;
      units.push_back(std::move(unit));
    }
    break;
  }
  return units;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string current;
  for (char c : text) {
    current += c;
    if (c == '\n') {
      lines.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) {
    lines.push_back(std::move(current));
  }
  return lines;
}

std::string chomp(const std::string& line) {
  if (!line.empty() && line.back() == '\n') {
    return line.substr(0, line.size() - 1);
  }
  return line;
}

} // namespace

ContextSplit split_context(const std::string& prompt, Language language) {
  const auto lines = split_lines(prompt);
  // The leading region may interleave blanks and comments with imports;
  // the boundary sits right after the last import line in that region.
  size_t last_import_end = 0; // line count included in the prefix
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string bare = chomp(lines[i]);
    if (is_blank(bare) || is_comment_line(bare, language)) {
      continue;
    }
    if (parse_import_line(bare, language)) {
      last_import_end = i + 1;
    } else {
      break;
    }
  }
  ContextSplit split;
  split.boundary_line = static_cast<int>(last_import_end);
  for (size_t i = 0; i < lines.size(); ++i) {
    (i < last_import_end ? split.imports_prefix : split.body) += lines[i];
  }
  return split;
}

std::vector<ImportStatement> parse_imports(const std::string& text,
                                           Language language) {
  std::vector<ImportStatement> out;
  for (const auto& line : split_lines(text)) {
    if (const auto parsed = parse_import_line(chomp(line), language)) {
      for (auto& unit : units_of(*parsed, language)) {
        out.push_back(std::move(unit));
      }
    }
  }
  return out;
}

std::vector<ImportStatement>
extract_new_imports(const std::string& step1_output, Language language,
                    const std::vector<ImportStatement>& existing,
                    const std::string& last_import_line) {
  std::set<std::string> seen;
  for (const auto& statement : existing) {
    seen.insert(statement.key);
  }

  std::vector<ImportStatement> out;
  auto add_units = [&](const ParsedImportLine& parsed) {
    for (auto& unit : units_of(parsed, language)) {
      if (seen.insert(unit.key).second) {
        out.push_back(std::move(unit));
      }
    }
  };

  auto lines = split_lines(step1_output);
  size_t start = 0;
  if (!lines.empty() && !last_import_line.empty()) {
    // A continuation like ", escape" extends the last import line into a
    // longer statement; harvest the delta names from the combined line.
    const std::string first = chomp(lines[0]);
    if (!parse_import_line(first, language)) {
      if (const auto combined =
              parse_import_line(chomp(last_import_line) + first, language)) {
        add_units(*combined);
        start = 1;
      }
    }
  }
  for (size_t i = start; i < lines.size(); ++i) {
    if (const auto parsed = parse_import_line(chomp(lines[i]), language)) {
      add_units(*parsed);
    }
  }
  return out;
}

std::string merge_imports(const ContextSplit& split,
                          const std::vector<ImportStatement>& new_imports) {
  if (new_imports.empty()) {
    return split.imports_prefix + split.body;
  }
  std::string out = split.imports_prefix;
  if (!out.empty() && out.back() != '\n') {
    out += '\n';
  }
  for (const auto& statement : new_imports) {
    out += statement.text;
    out += '\n';
  }
  out += split.body;
  return out;
}

TwoStepResult two_step_generate(const std::string& prompt, Language language,
                                Backend& backend,
                                const GenerationBudget& budget,
                                const SamplingParams& sampling) {
  if (budget.step1_max < 1 || budget.step2_max < 1) {
    throw ConfigError("generation budgets must be positive");
  }
  TwoStepResult result;
  const ContextSplit split = split_context(prompt, language);

  if (split.imports_prefix.empty()) {
    // Nothing to condition step 1 on; degrade to one-step with the full
    // budget.
    result.step1_skipped = true;
    result.updated_prompt = prompt;
    CompletionRequest request;
    request.prompt = prompt;
    request.max_new_tokens = budget.single_step();
    request.temperature = sampling.temperature;
    request.top_p = sampling.top_p;
    request.n_samples = sampling.n_samples;
    request.stop = sampling.stop;
    result.completions = backend.complete(request);
    return result;
  }

  CompletionRequest step1;
  step1.prompt = split.imports_prefix;
  step1.max_new_tokens = budget.step1_max;
  step1.temperature = sampling.temperature;
  step1.top_p = sampling.top_p;
  step1.n_samples = 1;
  std::vector<Completion> step1_out;
  try {
    step1_out = backend.complete(step1);
  } catch (const Error& e) {
    throw TransportError(std::string("two-step step 1 failed: ") + e.what());
  }
  result.step1_raw = step1_out.front().text;

  const auto existing = parse_imports(split.imports_prefix, language);
  std::string last_line;
  {
    const auto lines = split_lines(split.imports_prefix);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
      const std::string bare = chomp(*it);
      if (!is_blank(bare) && !is_comment_line(bare, language)) {
        last_line = bare;
        break;
      }
    }
  }
  result.added_imports =
      extract_new_imports(result.step1_raw, language, existing, last_line);
  result.updated_prompt = merge_imports(split, result.added_imports);

  CompletionRequest step2;
  step2.prompt = result.updated_prompt;
  step2.max_new_tokens = budget.step2_max;
  step2.temperature = sampling.temperature;
  step2.top_p = sampling.top_p;
  step2.n_samples = sampling.n_samples;
  step2.stop = sampling.stop;
  try {
    result.completions = backend.complete(step2);
  } catch (const Error& e) {
    throw TransportError(std::string("two-step step 2 failed: ") + e.what());
  }
  return result;
}

std::vector<Completion> one_step_generate(const std::string& prompt,
                                          Backend& backend,
                                          int max_new_tokens,
                                          const SamplingParams& sampling) {
  CompletionRequest request;
  request.prompt = prompt;
  request.max_new_tokens = max_new_tokens;
  request.temperature = sampling.temperature;
  request.top_p = sampling.top_p;
  request.n_samples = sampling.n_samples;
  request.stop = sampling.stop;
  return backend.complete(request);
}

} // namespace codemend
