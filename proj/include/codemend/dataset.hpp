#pragma once

#include "codemend/repair.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace codemend {

enum class TokenScheme { lexical, whitespace, external };

std::string to_string(TokenScheme scheme);
TokenScheme parse_token_scheme(std::string_view tag);

// Lossless token stream: concatenating the tokens reproduces the source
// text byte for byte.
struct TokenSequence {
  std::vector<std::string> tokens;
  TokenScheme scheme = TokenScheme::lexical;

  std::string detokenize() const;
  size_t size() const { return tokens.size(); }
};

// Hook for plugging in a model tokenizer; unset by default.
using ExternalTokenizer =
    std::function<std::vector<std::string>(const std::string&, Language)>;
void set_external_tokenizer(ExternalTokenizer tokenizer);

// Splits source text into identifiers/numbers, string literals, comments,
// individual punctuation characters, and whitespace runs (lexical scheme)
// or alternating whitespace/non-whitespace runs (whitespace scheme).
// Comment syntax follows `language`.
TokenSequence tokenize(const std::string& code, TokenScheme scheme,
                       Language language);

// Token classes used by the overlap filter to drop whitespace/comments.
bool is_whitespace_token(const std::string& token);
bool is_comment_token(const std::string& token, Language language);

// Contiguous matching run between two sequences: a[a_start..+size) ==
// b[b_start..+size).
struct MatchBlock {
  size_t a_start = 0;
  size_t b_start = 0;
  size_t size = 0;

  bool operator==(const MatchBlock&) const = default;
};

// Longest-contiguous-matching-subsequence decomposition: repeatedly take
// the longest common block (ties: earliest start in `a`, then in `b`) and
// recurse on both flanks. No junk heuristics.
std::vector<MatchBlock> matching_blocks(std::span<const std::string> a,
                                        std::span<const std::string> b);

// Binary mask over the secure sequence: 0 inside matching blocks, 1 for
// inserted or replaced tokens. Deletions touch no secure position.
std::vector<uint8_t> diff_mask(const TokenSequence& vulnerable,
                               const TokenSequence& secure);

// Masked negative log-likelihood: -sum(mask[t] * logprobs[t]).
double masked_nll(std::span<const double> token_logprobs,
                  std::span<const uint8_t> mask);

enum class SplitLabel { train, val, unassigned };

std::string to_string(SplitLabel label);
SplitLabel parse_split_label(std::string_view tag);

struct TrainingRecord {
  std::string sample_id;
  std::string secure_code;
  std::string vulnerable_code;
  Language language = Language::python;
  std::vector<CweId> cwes;
  TokenSequence secure_tokens;
  std::vector<uint8_t> mask;
  SplitLabel split = SplitLabel::unassigned;
};

// Builds the record for one pair: tokenize both sides, diff, mask.
TrainingRecord build_record(const SecurePair& pair, TokenScheme scheme);

// Function names defined in the code (Python `def name`, C/C++
// `name(...) {` definitions).
std::vector<std::string> defined_function_names(const std::string& code,
                                                Language language);

struct BenchmarkText {
  std::string id;
  std::string text;
  Language language = Language::python;
};

struct RemovedPair {
  SecurePair pair;
  std::string reason;    // "token_overlap" or "function_name"
  std::string prompt_id; // first benchmark prompt that triggered removal
  double overlap = 0.0;
};

struct FilterResult {
  std::vector<SecurePair> kept;
  std::vector<RemovedPair> removed;
};

// Drops pairs that leak evaluation prompts: more than `threshold` of a
// prompt's (non-whitespace, non-comment) token multiset occurs in either
// code of the pair, or the prompt and the pair define a function with the
// same name.
FilterResult overlap_filter(const std::vector<SecurePair>& pairs,
                            const std::vector<BenchmarkText>& prompts,
                            double threshold = 0.75);

// Computed fraction of `prompt_tokens` (multiset) present in
// `code_tokens`; exposed for tests.
double token_overlap_fraction(const std::vector<std::string>& prompt_tokens,
                              const std::vector<std::string>& code_tokens);

// Deterministic seeded split: floor(n * val_fraction) validation records
// overall, stratified so each weakness's validation share stays within one
// record of the global fraction. Stratification keys on a record's first
// listed weakness.
void assign_splits(std::vector<TrainingRecord>& records, double val_fraction,
                   uint64_t seed);

struct LoraMetadata {
  int batch_size = 16;
  int epochs = 10;
  std::string learning_rate = "5e-4";
  int rank = 64;
  int alpha = 16;
};

struct DatasetManifest {
  // Key: (weakness id, language tag). A record with k weaknesses counts in
  // k buckets; totals count each record once.
  std::map<std::pair<std::string, std::string>, int> counts;
  int total = 0;
  std::map<std::string, int> totals_per_language;
  int train_count = 0;
  int val_count = 0;
  uint64_t seed = 0;
  TokenScheme scheme = TokenScheme::lexical;
  double val_fraction = 0.2;
  double overlap_threshold = 0.75;
  // Inert fine-tuning metadata carried for downstream trainers; never
  // interpreted here.
  LoraMetadata lora;
};

DatasetManifest stats(const std::vector<TrainingRecord>& records);

nlohmann::json manifest_to_json(const DatasetManifest& manifest);

// Records file: a header line {"schema": "...", "version": N} followed by
// one record per line.
extern const char* kRecordsSchemaName;
extern const int kRecordsSchemaVersion;

nlohmann::json record_to_json(const TrainingRecord& record);
TrainingRecord record_from_json(const nlohmann::json& doc);

void write_records_file(const std::filesystem::path& path,
                        const std::vector<TrainingRecord>& records);
std::vector<TrainingRecord> read_records_file(const std::filesystem::path& path);

} // namespace codemend
