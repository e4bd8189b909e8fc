#include "codemend/dataset.hpp"

#include "codemend/error.hpp"
#include "reference_impls.hpp"

#include <nlohmann/json.hpp>

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

using namespace codemend;

namespace {

std::vector<std::string> toks(const std::string& code, Language lang) {
  return tokenize(code, TokenScheme::lexical, lang).tokens;
}

TokenSequence seq(std::vector<std::string> tokens) {
  TokenSequence s;
  s.tokens = std::move(tokens);
  s.scheme = TokenScheme::lexical;
  return s;
}

// Random code-ish text made of the lexer's own token classes, so the
// round-trip property sees realistic boundaries.
std::string random_snippet(std::mt19937_64& rng, Language lang) {
  static const std::vector<std::string> idents{"x", "value", "_tmp", "f2"};
  static const std::vector<std::string> numbers{"0", "42", "3.14", "1e-3",
                                                "0x1f"};
  static const std::vector<std::string> punct{"+", "(", ")", ":", ",", "=",
                                              "[", "]", "{", "}", ";"};
  static const std::vector<std::string> ws{" ", "  ", "\n", "\t", "\n\n"};
  std::string out;
  const size_t pieces = rng() % 30;
  for (size_t i = 0; i < pieces; ++i) {
    switch (rng() % 6) {
    case 0:
      out += idents[rng() % idents.size()];
      break;
    case 1:
      out += numbers[rng() % numbers.size()];
      break;
    case 2:
      out += punct[rng() % punct.size()];
      break;
    case 3:
      out += ws[rng() % ws.size()];
      break;
    case 4:
      out += rng() % 2 ? "'quoted \\' text'" : "\"double \\\" quoted\"";
      break;
    default:
      if (lang == Language::python) {
        out += rng() % 2 ? "# trailing comment" : "'''doc # body'''";
      } else {
        out += rng() % 2 ? "// line comment" : "/* block ; comment */";
      }
      out += "\n";
      break;
    }
  }
  return out;
}

} // namespace

TEST_CASE("lexical tokenization of a simple statement") {
  CHECK(toks("x = 1", Language::python) ==
        std::vector<std::string>{"x", " ", "=", " ", "1"});
}

TEST_CASE("empty input tokenizes to nothing") {
  CHECK(tokenize("", TokenScheme::lexical, Language::python).size() == 0);
  CHECK(tokenize("", TokenScheme::whitespace, Language::python).size() == 0);
}

TEST_CASE("comments follow the language") {
  // '#' opens a comment in Python only.
  const auto py = toks("x = 1  # note\n", Language::python);
  CHECK(std::count_if(py.begin(), py.end(), [](const std::string& t) {
          return is_comment_token(t, Language::python);
        }) == 1);

  // In C '//' is a comment; in Python it is the floor-division operator
  // and must stay two punctuation tokens.
  const auto c = toks("a // b\n", Language::c_cpp);
  CHECK(std::count_if(c.begin(), c.end(), [](const std::string& t) {
          return is_comment_token(t, Language::c_cpp);
        }) == 1);
  const auto pydiv = toks("a // b\n", Language::python);
  CHECK(std::count(pydiv.begin(), pydiv.end(), "/") == 2);

  // '#include' must not be swallowed as a C comment.
  const auto inc = toks("#include <stdio.h>\n", Language::c_cpp);
  CHECK(inc[0] == "#");
  CHECK(inc[1] == "include");
}

TEST_CASE("string literals are single tokens") {
  const auto py = toks("s = 'a # not comment'\n", Language::python);
  CHECK(std::find(py.begin(), py.end(), "'a # not comment'") != py.end());

  const auto triple = toks("s = '''multi\n# line'''\n", Language::python);
  CHECK(std::find(triple.begin(), triple.end(), "'''multi\n# line'''") !=
        triple.end());

  const auto c = toks("char* s = \"a\\\"b\";\n", Language::c_cpp);
  CHECK(std::find(c.begin(), c.end(), "\"a\\\"b\"") != c.end());
}

TEST_CASE("tokenization round-trips over random snippets") {
  std::mt19937_64 rng(2024);
  for (int round = 0; round < 1000; ++round) {
    const Language lang = round % 2 ? Language::python : Language::c_cpp;
    const std::string snippet = random_snippet(rng, lang);
    CAPTURE(snippet);
    CHECK(tokenize(snippet, TokenScheme::lexical, lang).detokenize() ==
          snippet);
    CHECK(tokenize(snippet, TokenScheme::whitespace, lang).detokenize() ==
          snippet);
  }
}

TEST_CASE("external scheme requires a registered tokenizer") {
  set_external_tokenizer(nullptr);
  CHECK_THROWS_AS(tokenize("x", TokenScheme::external, Language::python),
                  ConfigError);
  set_external_tokenizer(
      [](const std::string& code, Language) -> std::vector<std::string> {
        std::vector<std::string> out;
        for (char c : code) {
          out.emplace_back(1, c);
        }
        return out;
      });
  CHECK(tokenize("ab", TokenScheme::external, Language::python).size() == 2);
  set_external_tokenizer(nullptr);
}

TEST_CASE("matching blocks agree with the exhaustive reference") {
  std::mt19937_64 rng(99);
  for (int round = 0; round < 500; ++round) {
    const auto a = refimpl::random_tokens(rng, 8);
    const auto b = refimpl::random_tokens(rng, 8);
    CAPTURE(a);
    CAPTURE(b);
    CHECK(matching_blocks(a, b) == refimpl::exhaustive_blocks(a, b));
  }
}

TEST_CASE("identical sequences produce an all-zero mask") {
  const auto s = seq({"a", "b", "c"});
  const auto mask = diff_mask(s, s);
  CHECK(mask == std::vector<uint8_t>{0, 0, 0});
}

TEST_CASE("replacement marks only the replaced position") {
  const auto mask = diff_mask(seq({"a", "b", "c"}), seq({"a", "X", "c"}));
  CHECK(mask == std::vector<uint8_t>{0, 1, 0});
}

TEST_CASE("insertion marks only the inserted position") {
  const auto mask = diff_mask(seq({"a", "c"}), seq({"a", "b", "c"}));
  CHECK(mask == std::vector<uint8_t>{0, 1, 0});
}

TEST_CASE("deletions leave the secure side untouched") {
  const auto mask = diff_mask(seq({"a", "b", "c"}), seq({"a", "c"}));
  CHECK(mask == std::vector<uint8_t>{0, 0});
}

TEST_CASE("mask agrees with the exhaustive alignment on random pairs") {
  std::mt19937_64 rng(31337);
  for (int round = 0; round < 1000; ++round) {
    const auto a = refimpl::random_tokens(rng, 8);
    const auto b = refimpl::random_tokens(rng, 8);
    TokenSequence va = seq(a);
    TokenSequence vb = seq(b);
    CAPTURE(a);
    CAPTURE(b);
    CHECK(diff_mask(va, vb) == refimpl::exhaustive_mask(a, b));
  }
}

TEST_CASE("scheme mismatch is rejected") {
  TokenSequence a = seq({"x"});
  TokenSequence b = seq({"x"});
  b.scheme = TokenScheme::whitespace;
  CHECK_THROWS_AS(diff_mask(a, b), ConfigError);
}

TEST_CASE("masked loss basics") {
  const std::vector<double> lp{-1.0, -2.0, -3.0};
  CHECK(masked_nll(lp, std::vector<uint8_t>{1, 1, 1}) ==
        doctest::Approx(6.0));
  CHECK(masked_nll(lp, std::vector<uint8_t>{0, 0, 0}) == 0.0);
  CHECK_THROWS_AS(masked_nll(lp, std::vector<uint8_t>{1, 1}), ConfigError);
}

TEST_CASE("masked loss equals the elementwise product-sum reference") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> logprob(-10.0, 0.0);
  for (int round = 0; round < 300; ++round) {
    const size_t n = rng() % 24;
    std::vector<double> lp(n);
    std::vector<uint8_t> mask(n);
    for (size_t i = 0; i < n; ++i) {
      lp[i] = logprob(rng);
      mask[i] = rng() % 2;
    }
    long double reference = 0.0L;
    for (size_t i = n; i-- > 0;) {
      reference += static_cast<long double>(mask[i]) * -lp[i];
    }
    CHECK(masked_nll(lp, mask) ==
          doctest::Approx(static_cast<double>(reference)).epsilon(1e-12));
  }
}

TEST_CASE("adding one mask bit moves the loss by that token's logprob") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> logprob(-10.0, 0.0);
  for (int round = 0; round < 300; ++round) {
    const size_t n = 1 + rng() % 16;
    std::vector<double> lp(n);
    std::vector<uint8_t> mask(n);
    for (size_t i = 0; i < n; ++i) {
      lp[i] = logprob(rng);
      mask[i] = rng() % 2;
    }
    const size_t flip = rng() % n;
    mask[flip] = 0;
    const double without = masked_nll(lp, mask);
    mask[flip] = 1;
    const double with = masked_nll(lp, mask);
    CHECK(with - without == doctest::Approx(-lp[flip]).epsilon(1e-9));
    CHECK(with >= without); // logprobs are non-positive
  }
}

TEST_CASE("record building ties mask length to the secure token count") {
  SecurePair pair;
  pair.sample_id = "s1";
  pair.language = Language::python;
  pair.vulnerable_code = "x = eval(raw)\n";
  pair.secure_code = "x = ast.literal_eval(raw)\n";
  pair.cwes = {CweId::parse("CWE-094")};
  const TrainingRecord record = build_record(pair, TokenScheme::lexical);
  CHECK(record.mask.size() == record.secure_tokens.size());
  // Unchanged prefix "x = " and suffix "(raw)\n" stay unmasked.
  CHECK(record.mask.front() == 0);
  CHECK(record.mask.back() == 0);
  CHECK(std::accumulate(record.mask.begin(), record.mask.end(), 0) > 0);
}

TEST_CASE("mask is all-zero exactly when token sequences are equal") {
  SecurePair pair;
  pair.sample_id = "s2";
  pair.language = Language::python;
  pair.vulnerable_code = "a = 1\n";
  pair.secure_code = "a = 1\n";
  const TrainingRecord record = build_record(pair, TokenScheme::lexical);
  CHECK(std::accumulate(record.mask.begin(), record.mask.end(), 0) == 0);
}

TEST_CASE("function definitions are recognized per language") {
  const auto py = defined_function_names(
      "def handler(x):\n    return x\n\nasync def poll():\n    pass\n",
      Language::python);
  CHECK(py == std::vector<std::string>{"handler", "poll"});

  const auto c = defined_function_names(
      "int main(void) {\n"
      "    helper(1);\n"
      "    if (x) { y(); }\n"
      "    return 0;\n"
      "}\n"
      "static int helper(int v) {\n"
      "    return v;\n"
      "}\n"
      "int declared_only(int);\n",
      Language::c_cpp);
  CHECK(c == std::vector<std::string>{"main", "helper"});
}

namespace {

SecurePair make_pair_fixture(const std::string& id, const std::string& code) {
  SecurePair pair;
  pair.sample_id = id;
  pair.language = Language::python;
  pair.vulnerable_code = code;
  pair.secure_code = code;
  pair.cwes = {CweId::parse("CWE-079")};
  return pair;
}

} // namespace

TEST_CASE("decontamination at 0.80 removes and 0.50 keeps") {
  // Ten significant prompt tokens; eight occur in the hot pair's code.
  BenchmarkText prompt{"b1",
                       "alpha beta gamma delta epsilon zeta eta theta iota "
                       "kappa",
                       Language::python};
  const SecurePair hot = make_pair_fixture(
      "hot", "alpha beta gamma delta epsilon zeta eta theta\n");
  const SecurePair cool =
      make_pair_fixture("cool", "alpha beta gamma delta eps2\n");

  const auto result = overlap_filter({hot, cool}, {prompt}, 0.75);
  REQUIRE(result.removed.size() == 1);
  CHECK(result.removed[0].pair.sample_id == "hot");
  CHECK(result.removed[0].reason == "token_overlap");
  CHECK(result.removed[0].overlap == doctest::Approx(0.8));
  REQUIRE(result.kept.size() == 1);
  CHECK(result.kept[0].sample_id == "cool");
}

TEST_CASE("shared defined function names are contamination") {
  BenchmarkText prompt{"b2", "def transfer_funds(account):\n    pass\n",
                       Language::python};
  const SecurePair colliding =
      make_pair_fixture("fn", "def transfer_funds(x):\n    return x\n");
  const auto result = overlap_filter({colliding}, {prompt}, 0.75);
  REQUIRE(result.removed.size() == 1);
  CHECK(result.removed[0].reason == "function_name");
}

TEST_CASE("an empty benchmark set keeps everything") {
  const auto result =
      overlap_filter({make_pair_fixture("p", "x = 1\n")}, {}, 0.75);
  CHECK(result.kept.size() == 1);
  CHECK(result.removed.empty());
}

TEST_CASE("threshold 1.0 removes only full containment or name collisions") {
  BenchmarkText contained{"b3", "alpha beta", Language::python};
  const SecurePair superset = make_pair_fixture("sup", "alpha beta gamma\n");
  const SecurePair partial = make_pair_fixture("part", "alpha delta\n");
  const auto result = overlap_filter({superset, partial}, {contained}, 1.0);
  REQUIRE(result.removed.size() == 1);
  CHECK(result.removed[0].pair.sample_id == "sup");
  CHECK(result.kept[0].sample_id == "part");
}

TEST_CASE("overlap counts the prompt multiset against the code multiset") {
  // The prompt uses 'a' three times; the code only supplies two.
  const auto fraction =
      token_overlap_fraction({"a", "a", "a", "b"}, {"a", "a", "b", "c"});
  CHECK(fraction == doctest::Approx(0.75));
}

namespace {

std::vector<TrainingRecord> synthetic_records(int n) {
  static const std::vector<std::string> cwes{"CWE-022", "CWE-079", "CWE-094",
                                             "CWE-787"};
  std::vector<TrainingRecord> records;
  for (int i = 0; i < n; ++i) {
    TrainingRecord record;
    char id[16];
    std::snprintf(id, sizeof(id), "s%04d", i);
    record.sample_id = id;
    record.language = i % 4 == 3 ? Language::c_cpp : Language::python;
    record.cwes = {CweId::parse(cwes[i % cwes.size()])};
    record.secure_code = "x = 1\n";
    record.vulnerable_code = "x = 1\n";
    record.secure_tokens =
        tokenize(record.secure_code, TokenScheme::lexical, record.language);
    record.mask.assign(record.secure_tokens.size(), 0);
    records.push_back(std::move(record));
  }
  return records;
}

int count_val(const std::vector<TrainingRecord>& records) {
  return static_cast<int>(
      std::count_if(records.begin(), records.end(), [](const auto& r) {
        return r.split == SplitLabel::val;
      }));
}

} // namespace

TEST_CASE("split sizes follow the floor rule") {
  auto records = synthetic_records(10);
  assign_splits(records, 0.2, 7);
  CHECK(count_val(records) == 2);
  for (const auto& record : records) {
    CHECK(record.split != SplitLabel::unassigned);
  }

  auto big = synthetic_records(1776);
  assign_splits(big, 0.2, 7);
  CHECK(count_val(big) == 355); // floor(1776 * 0.2)
}

TEST_CASE("same seed reproduces the assignment, different seed moves it") {
  auto a = synthetic_records(100);
  auto b = synthetic_records(100);
  assign_splits(a, 0.2, 42);
  assign_splits(b, 0.2, 42);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].split == b[i].split);
  }
  auto c = synthetic_records(100);
  assign_splits(c, 0.2, 43);
  bool any_difference = false;
  for (size_t i = 0; i < a.size(); ++i) {
    any_difference |= a[i].split != c[i].split;
  }
  CHECK(any_difference);
}

TEST_CASE("split is stratified within one record per weakness") {
  std::mt19937_64 rng(17);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto records = synthetic_records(201 + static_cast<int>(rng() % 100));
    const double fraction = 0.2;
    assign_splits(records, fraction, seed);
    std::map<std::string, std::pair<int, int>> per_cwe; // (val, total)
    for (const auto& record : records) {
      auto& [val, total] = per_cwe[record.cwes.front().str()];
      total += 1;
      val += record.split == SplitLabel::val ? 1 : 0;
    }
    for (const auto& [cwe, counts] : per_cwe) {
      const double exact = counts.second * fraction;
      CAPTURE(cwe);
      CHECK(std::abs(counts.first - exact) <= 1.0);
    }
  }
}

TEST_CASE("invalid fractions are rejected") {
  auto records = synthetic_records(4);
  CHECK_THROWS_AS(assign_splits(records, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(assign_splits(records, 1.0, 1), ConfigError);
}

TEST_CASE("manifest counts weaknesses per language and records once") {
  std::vector<TrainingRecord> records;
  auto add = [&](const std::string& id, const std::string& cwe,
                 Language lang) {
    TrainingRecord record;
    record.sample_id = id;
    record.language = lang;
    record.cwes = {CweId::parse(cwe)};
    records.push_back(std::move(record));
  };
  add("a", "CWE-022", Language::python);
  add("b", "CWE-022", Language::python);
  add("c", "CWE-787", Language::c_cpp);
  const DatasetManifest manifest = stats(records);
  CHECK(manifest.total == 3);
  CHECK(manifest.counts.at({"CWE-022", "python"}) == 2);
  CHECK(manifest.counts.at({"CWE-787", "c_cpp"}) == 1);
  CHECK(manifest.totals_per_language.at("python") == 2);
}

TEST_CASE("empty record set yields a zero manifest") {
  const DatasetManifest manifest = stats({});
  CHECK(manifest.total == 0);
  CHECK(manifest.counts.empty());
}

TEST_CASE("bucket sums are consistent on random record sets") {
  std::mt19937_64 rng(23);
  static const std::vector<std::string> pool{"CWE-020", "CWE-079", "CWE-094"};
  for (int round = 0; round < 30; ++round) {
    std::vector<TrainingRecord> records;
    int expected_buckets = 0;
    const int n = static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) {
      TrainingRecord record;
      record.sample_id = "r" + std::to_string(i);
      record.language = rng() % 2 ? Language::python : Language::c_cpp;
      const int k = 1 + static_cast<int>(rng() % 2);
      for (int j = 0; j < k; ++j) {
        record.cwes.push_back(CweId::parse(pool[(i + j) % pool.size()]));
      }
      expected_buckets += k;
      records.push_back(std::move(record));
    }
    const DatasetManifest manifest = stats(records);
    CHECK(manifest.total == n);
    int bucket_sum = 0;
    for (const auto& [key, count] : manifest.counts) {
      bucket_sum += count;
    }
    CHECK(bucket_sum == expected_buckets);
    int language_sum = 0;
    for (const auto& [lang, count] : manifest.totals_per_language) {
      language_sum += count;
    }
    CHECK(language_sum == n);
  }
}

TEST_CASE("records file round-trips field for field") {
  SecurePair pair;
  pair.sample_id = "rt1";
  pair.language = Language::python;
  pair.vulnerable_code = "import pickle\nx = pickle.loads(raw)\n";
  pair.secure_code = "import json\nx = json.loads(raw)\n";
  pair.cwes = {CweId::parse("CWE-502")};
  std::vector<TrainingRecord> records{
      build_record(pair, TokenScheme::lexical)};
  records[0].split = SplitLabel::train;

  const auto path =
      std::filesystem::temp_directory_path() / "codemend-records-test.jsonl";
  write_records_file(path, records);
  const auto reloaded = read_records_file(path);
  std::filesystem::remove(path);

  REQUIRE(reloaded.size() == 1);
  CHECK(reloaded[0].sample_id == records[0].sample_id);
  CHECK(reloaded[0].secure_code == records[0].secure_code);
  CHECK(reloaded[0].vulnerable_code == records[0].vulnerable_code);
  CHECK(reloaded[0].language == records[0].language);
  CHECK(reloaded[0].cwes == records[0].cwes);
  CHECK(reloaded[0].mask == records[0].mask);
  CHECK(reloaded[0].secure_tokens.tokens == records[0].secure_tokens.tokens);
  CHECK(reloaded[0].split == records[0].split);
}

TEST_CASE("records file rejects a wrong header") {
  const auto path =
      std::filesystem::temp_directory_path() / "codemend-badheader.jsonl";
  {
    std::ofstream out(path);
    out << R"({"schema": "something_else", "version": 1})" << "\n";
  }
  CHECK_THROWS_AS(read_records_file(path), ParseError);
  std::filesystem::remove(path);
}
