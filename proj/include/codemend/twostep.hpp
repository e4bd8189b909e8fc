#pragma once

#include "codemend/language.hpp"
#include "codemend/llm.hpp"

#include <string>
#include <vector>

namespace codemend {

// Partition of a prompt into its leading import region and the rest.
// imports_prefix + body reconstructs the prompt byte for byte; every
// non-blank, non-comment line in imports_prefix is an import/include.
struct ContextSplit {
  std::string imports_prefix;
  std::string body;
  int boundary_line = 0; // number of lines in imports_prefix
};

ContextSplit split_context(const std::string& prompt, Language language);

// One import/include, normalized to a single canonical statement (one
// module or one imported name per statement).
struct ImportStatement {
  std::string text; // normalized statement line
  Language language = Language::python;
  std::string key;  // canonical identity used for deduplication

  bool operator==(const ImportStatement&) const = default;
};

// All imports found in `text`, split into per-name/per-module units.
std::vector<ImportStatement> parse_imports(const std::string& text,
                                           Language language);

// Filters step-1 output down to genuinely new imports: keeps lines that
// parse as import forms, normalizes them, and drops duplicates of
// `existing`. When `last_import_line` is given and the first generated
// fragment syntactically extends it (", escape" appended to an existing
// from-import), the delta names are emitted as new statements.
std::vector<ImportStatement>
extract_new_imports(const std::string& step1_output, Language language,
                    const std::vector<ImportStatement>& existing,
                    const std::string& last_import_line = "");

// Appends each new import as its own line directly after imports_prefix,
// leaving body bytes untouched. No new imports: returns the prompt
// unchanged.
std::string merge_imports(const ContextSplit& split,
                          const std::vector<ImportStatement>& new_imports);

// Token budgets for the two generation steps; their sum is the one-step
// budget the pair replaces.
struct GenerationBudget {
  int step1_max = 20;
  int step2_max = 180;

  int single_step() const { return step1_max + step2_max; }
};

struct SamplingParams {
  double temperature = 0.4;
  double top_p = 0.95;
  int n_samples = 1;
  std::vector<std::string> stop;
};

struct TwoStepResult {
  std::vector<Completion> completions;
  std::string updated_prompt;
  std::string step1_raw;
  bool step1_skipped = false;
  std::vector<ImportStatement> added_imports;
};

// Step 1: condition the backend on the import prefix alone (budget
// step1_max) and harvest new imports from the continuation. Step 2:
// complete against the import-augmented prompt (budget step2_max). A
// prompt without imports skips step 1 and spends the whole single-step
// budget in step 2.
TwoStepResult two_step_generate(const std::string& prompt, Language language,
                                Backend& backend,
                                const GenerationBudget& budget,
                                const SamplingParams& sampling);

// Baseline single-call completion.
std::vector<Completion> one_step_generate(const std::string& prompt,
                                          Backend& backend,
                                          int max_new_tokens,
                                          const SamplingParams& sampling);

} // namespace codemend
