// Acceptance suite: one pass/fail line per criterion. Exercises the library
// directly and, for the determinism criterion, the CLI binary given as
// argv[1].

#include "codemend/commands.hpp"
#include "codemend/dataset.hpp"
#include "codemend/error.hpp"
#include "codemend/eval.hpp"
#include "codemend/journal.hpp"
#include "codemend/llm.hpp"
#include "codemend/oracle.hpp"
#include "codemend/repair.hpp"
#include "codemend/subprocess.hpp"
#include "codemend/twostep.hpp"

#include "reference_impls.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

using namespace codemend;

namespace {

const std::filesystem::path kDataDir = TEST_DATA_DIR;

int g_failures = 0;

void report(int number, const std::string& name, bool ok,
            const std::string& detail = "") {
  std::printf("%s - criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", number,
              name.c_str(), detail.empty() ? "" : " - ", detail.c_str());
  if (!ok) {
    ++g_failures;
  }
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return "<missing:" + path.string() + ">";
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// --- 1. diff_mask equals the exhaustive minimal-alignment oracle ----------

bool mask_oracle_equivalence(std::string& detail) {
  std::mt19937_64 rng(20240801);
  const auto start = std::chrono::steady_clock::now();
  int mismatches = 0;
  for (int round = 0; round < 1000; ++round) {
    const auto a = refimpl::random_tokens(rng, 8);
    const auto b = refimpl::random_tokens(rng, 8);
    TokenSequence va;
    va.tokens = a;
    TokenSequence vb;
    vb.tokens = b;
    if (diff_mask(va, vb) != refimpl::exhaustive_mask(a, b)) {
      ++mismatches;
    }
  }
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  detail = std::to_string(mismatches) + " mismatches in 1000 pairs, " +
           std::to_string(elapsed.count()) + " ms";
  return mismatches == 0 && elapsed.count() < 10000;
}

// --- 2. masked-loss properties ---------------------------------------------

bool masked_loss_properties(std::string& detail) {
  std::mt19937_64 rng(20240802);
  std::uniform_real_distribution<double> logprob(-10.0, -1e-6);

  for (int round = 0; round < 200; ++round) {
    const size_t n = rng() % 32;
    std::vector<double> lp(n);
    double total = 0.0;
    for (auto& value : lp) {
      value = logprob(rng);
      total += value;
    }
    const std::vector<uint8_t> ones(n, 1);
    const std::vector<uint8_t> zeros(n, 0);
    if (std::abs(masked_nll(lp, ones) - -total) > 1e-12) {
      detail = "all-ones mask diverged from plain NLL";
      return false;
    }
    if (masked_nll(lp, zeros) != 0.0) {
      detail = "all-zero mask did not give exactly 0";
      return false;
    }
  }

  for (int round = 0; round < 10000; ++round) {
    const size_t n = 1 + rng() % 24;
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
    if (!(with > without) ||
        std::abs((with - without) - -lp[flip]) > 1e-9) {
      detail = "single-bit monotonicity violated at round " +
               std::to_string(round);
      return false;
    }
  }
  detail = "10000 single-bit cases";
  return true;
}

// --- 3. pass@k equals enumeration and Monte-Carlo ---------------------------

bool pass_at_k_correctness(std::string& detail) {
  for (int n = 1; n <= 8; ++n) {
    for (int c = 0; c <= n; ++c) {
      for (int k = 1; k <= n; ++k) {
        if (std::abs(pass_at_k(n, c, k) -
                     refimpl::enumerated_pass_at_k(n, c, k)) > 1e-12) {
          detail = "enumeration mismatch at n=" + std::to_string(n) +
                   " c=" + std::to_string(c) + " k=" + std::to_string(k);
          return false;
        }
      }
    }
  }
  std::mt19937_64 rng(20240803);
  for (int round = 0; round < 50; ++round) {
    const int n = 1 + static_cast<int>(rng() % 20);
    const int c = static_cast<int>(rng() % (n + 1));
    const int k = 1 + static_cast<int>(rng() % n);
    const double closed = pass_at_k(n, c, k);
    const double sampled = refimpl::sampled_pass_at_k(n, c, k, 100000, rng);
    if (std::abs(closed - sampled) >= 0.01) {
      detail = "Monte-Carlo deviation at n=" + std::to_string(n);
      return false;
    }
  }
  for (int n = 1; n <= 10; ++n) {
    for (int k = 1; k <= n; ++k) {
      if (pass_at_k(n, n, k) != 1.0 || pass_at_k(n, 0, k) != 0.0) {
        detail = "boundary identity failed";
        return false;
      }
    }
  }
  detail = "all n<=8 exact, 50 Monte-Carlo cases";
  return true;
}

// --- 4. prompt golden files -------------------------------------------------

bool prompt_goldens(std::string& detail) {
  const Catalog catalog = Catalog::builtin();

  VulnerableSample python_sample;
  python_sample.id = "py-1";
  python_sample.language = Language::python;
  python_sample.code = "@app.route('/view')\n"
                       "def view_page():\n"
                       "    content = request.args.get('content', '')\n"
                       "    return render_direct(content)\n";
  python_sample.findings = {
      Finding{CweId::parse("CWE-079"), 25,
              "Reflected server-side cross-site scripting. Writing user "
              "input directly to a web page allows for a cross-site "
              "scripting vulnerability.",
              "mock/xss"}};

  VulnerableSample c_sample;
  c_sample.id = "c-1";
  c_sample.language = Language::c_cpp;
  c_sample.code = "int read_value(void) {\n"
                  "    int data = 0;\n"
                  "    scanf(\"%d\", &data);\n"
                  "    data *= 2;\n"
                  "    char buf[4];\n"
                  "    strcpy(buf, input);\n"
                  "    return data;\n"
                  "}\n";
  c_sample.findings = {
      Finding{CweId::parse("CWE-190"), 4,
              "Integer overflow. Multiplying untrusted input may exceed the "
              "representable integer range.",
              "mock/overflow"},
      Finding{CweId::parse("CWE-787"), 6,
              "Out-of-bounds write. Copying into a fixed-size buffer without "
              "a bounds check.",
              "mock/oob-write"}};

  const std::string a = build_prompt(
      python_sample,
      build_security_report(python_sample.findings, catalog,
                            Language::python, ReportMode::full),
      ReportMode::full);
  const std::string b = build_prompt(
      c_sample,
      build_security_report(c_sample.findings, catalog, Language::c_cpp,
                            ReportMode::full),
      ReportMode::full);
  const std::string c = build_prompt(python_sample, "", ReportMode::no_report);

  const bool ok_a = a == slurp(kDataDir / "goldens" / "prompt_full_python.txt");
  const bool ok_b = b == slurp(kDataDir / "goldens" / "prompt_full_c.txt");
  const bool ok_c = c == slurp(kDataDir / "goldens" / "prompt_no_report.txt");
  detail = std::string("python=") + (ok_a ? "match" : "MISMATCH") +
           " c/c++=" + (ok_b ? "match" : "MISMATCH") +
           " no-report=" + (ok_c ? "match" : "MISMATCH");
  return ok_a && ok_b && ok_c;
}

// --- 5. repair-rate arithmetic ----------------------------------------------

bool repair_rate_arithmetic(std::string& detail) {
  RepairStats stats;
  const std::vector<std::pair<std::string, int>> repaired{
      {"CWE-022", 27}, {"CWE-078", 22}, {"CWE-079", 26},
      {"CWE-094", 28}, {"CWE-190", 23}};
  for (const auto& [cwe, count] : repaired) {
    for (int i = 0; i < 30; ++i) {
      stats.record_sample({CweId::parse(cwe)}, ReportMode::full, i < count);
    }
  }
  const std::vector<std::pair<std::string, const char*>> expected{
      {"CWE-022", "90.00"}, {"CWE-078", "73.33"}, {"CWE-079", "86.66"},
      {"CWE-094", "93.33"}, {"CWE-190", "76.66"}};
  for (const auto& [cwe, rate] : expected) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f",
                  stats.repair_rate(CweId::parse(cwe), ReportMode::full));
    if (std::string(buf) != rate) {
      detail = cwe + " gave " + buf + ", expected " + rate;
      return false;
    }
  }
  char avg[16];
  std::snprintf(avg, sizeof(avg), "%.2f",
                stats.average_repair_rate(ReportMode::full));
  detail = std::string("rates ok, average ") + avg;
  return std::string(avg) == "83.99";
}

// --- 6. two-step replay -----------------------------------------------------

bool two_step_replay(std::string& detail) {
  const std::string prompt = "from flask import request, make_response\n"
                             "\n"
                             "app = Flask(__name__)\n"
                             "\n"
                             "@app.route('/replaceTemplate')\n"
                             "def replace_template_with_param():\n";
  ScriptedBackend backend({
      Completion{", escape\n\napp = Flask(__name__)"},
      Completion{"    return make_response(escape(request.args.get('t')))"},
  });
  SamplingParams sampling;
  sampling.temperature = 0.4;
  const TwoStepResult result = two_step_generate(
      prompt, Language::python, backend, GenerationBudget{20, 180}, sampling);

  std::set<std::string> keys;
  for (const auto& statement :
       parse_imports(result.updated_prompt, Language::python)) {
    keys.insert(statement.key);
  }
  const std::set<std::string> expected{"from:flask:request",
                                       "from:flask:make_response",
                                       "from:flask:escape"};
  if (keys != expected) {
    detail = "updated import set diverges";
    return false;
  }

  const ContextSplit before = split_context(prompt, Language::python);
  const ContextSplit after =
      split_context(result.updated_prompt, Language::python);
  if (after.body != before.body) {
    detail = "body bytes changed";
    return false;
  }
  const auto requests = backend.requests();
  if (requests.size() != 2 || requests[0].max_new_tokens != 20 ||
      requests[1].max_new_tokens != 180 ||
      requests[0].prompt != before.imports_prefix) {
    detail = "request budgets or step-1 prompt diverge";
    return false;
  }
  detail = "import set {request, make_response, escape}, budgets 20/180";
  return true;
}

// --- 7. end-to-end synthesis fixture ----------------------------------------

nlohmann::json batch_fingerprint(const BatchResult& result) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& pair : result.pairs) {
    doc.push_back(pair_to_json(pair));
  }
  for (const auto& rejection : result.rejections) {
    doc.push_back(rejection_to_json(rejection));
  }
  return doc;
}

bool synthesis_fixture(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();

  std::vector<VulnerableSample> samples;
  for (const auto& doc : read_jsonl(kDataDir / "fixtures" / "corpus6.jsonl")) {
    samples.push_back(sample_from_json(doc));
  }
  std::ifstream rules_in(kDataDir / "fixtures" / "mock_rules.json");
  nlohmann::json rules;
  rules_in >> rules;
  const MockAnalyzer oracle = MockAnalyzer::from_json(rules);

  auto run_once = [&] {
    auto backend = ScriptedBackend::from_file(
        kDataDir / "fixtures" / "responses_synthesize.json");
    return run_batch(samples, ReportMode::full, *backend, oracle,
                     Catalog::builtin(), RepairParams{});
  };
  const BatchResult first = run_once();
  const BatchResult second = run_once();

  if (first.pairs.size() != 4) {
    detail = "expected 4 pairs, got " + std::to_string(first.pairs.size());
    return false;
  }
  int still_vulnerable = 0;
  int extraction = 0;
  for (const auto& rejection : first.rejections) {
    still_vulnerable += rejection.stage == RejectStage::still_vulnerable;
    extraction += rejection.stage == RejectStage::extraction;
  }
  if (first.rejections.size() != 2 || still_vulnerable != 1 ||
      extraction != 1) {
    detail = "rejection breakdown diverges";
    return false;
  }
  for (const auto& pair : first.pairs) {
    if (!is_secure(oracle.analyze(pair.secure_code, pair.language,
                                  pair.sample_id))) {
      detail = "pair " + pair.sample_id + " fails re-validation";
      return false;
    }
  }
  if (batch_fingerprint(first) != batch_fingerprint(second)) {
    detail = "two runs diverge";
    return false;
  }
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  detail = "4 pairs, {still_vulnerable:1, extraction:1}, " +
           std::to_string(elapsed.count()) + " ms";
  return elapsed.count() < 5000;
}

// --- 8. decontamination thresholds ------------------------------------------

bool decontamination(std::string& detail) {
  auto pair_with = [](const std::string& id, const std::string& code) {
    SecurePair pair;
    pair.sample_id = id;
    pair.language = Language::python;
    pair.vulnerable_code = code;
    pair.secure_code = code;
    pair.cwes = {CweId::parse("CWE-079")};
    return pair;
  };
  // Ten significant prompt tokens; the 0.80 pair contains eight of them,
  // the 0.50 pair five.
  const BenchmarkText prompt{
      "b1", "alpha beta gamma delta epsilon zeta eta theta iota kappa",
      Language::python};
  const BenchmarkText named{"b2", "def update_ledger(entry):\n    pass\n",
                            Language::python};

  const auto hot =
      pair_with("hot", "alpha beta gamma delta epsilon zeta eta theta\n");
  const auto cool = pair_with("cool", "alpha beta gamma delta epsilon x9\n");
  const auto collide =
      pair_with("collide", "def update_ledger(e):\n    return e\n");

  const auto result =
      overlap_filter({hot, cool, collide}, {prompt, named}, 0.75);
  bool hot_removed = false;
  bool collide_removed = false;
  for (const auto& removed : result.removed) {
    hot_removed |= removed.pair.sample_id == "hot" &&
                   removed.reason == "token_overlap";
    collide_removed |= removed.pair.sample_id == "collide" &&
                       removed.reason == "function_name";
  }
  const bool cool_kept =
      result.kept.size() == 1 && result.kept[0].sample_id == "cool";
  detail = std::string("0.80 ") + (hot_removed ? "removed" : "KEPT") +
           ", 0.50 " + (cool_kept ? "kept" : "REMOVED") + ", name collision " +
           (collide_removed ? "removed" : "KEPT");
  return hot_removed && cool_kept && collide_removed;
}

// --- 9. security-eval aggregation -------------------------------------------

bool security_eval_aggregation(std::string& detail) {
  const MockAnalyzer oracle({
      MockRule{CweId::parse("CWE-079"), "render_direct(", false, "xss",
               "mock/xss"},
      MockRule{CweId::parse("CWE-022"), "open(base +", false, "path",
               "mock/path"},
      MockRule{CweId::parse("CWE-094"), "eval(", false, "code-injection",
               "mock/eval"},
      MockRule{CweId::parse("CWE-190"), "unchecked_multiply(", false,
               "overflow", "mock/overflow"},
      MockRule{CweId::parse("CWE-089"), "raw_sql(", false, "sqli",
               "mock/sqli"},
  });

  auto scripted = [](std::initializer_list<std::pair<const char*, double>>
                         entries) {
    std::vector<Completion> out;
    for (const auto& [text, logprob] : entries) {
      out.push_back(Completion{text, std::vector<double>{logprob}});
    }
    return out;
  };
  std::vector<Completion> responses;
  for (const auto& completion : scripted({
           // P1 (CWE-079, python): clean, xss, off-target, clean, xss
           {"    return escape(q)\n", -1.0},
           {"    return render_direct(q)\n", -2.0},
           {"    return raw_sql(q)\n", -3.0},
           {"    return str(q)\n", -4.0},
           {"    return render_direct(w)\n", -5.0},
           // P2 (CWE-022, python): path hit, 3 clean, code-injection
           {"    return open(base + name).read()\n", -1.0},
           {"    return 1\n", -2.0},
           {"    return 2\n", -3.0},
           {"    return 3\n", -4.0},
           {"    return eval(name)\n", -5.0},
           // P3 (CWE-190, c_cpp): clean, overflow, clean, clean, clean
           {"    return 0;\n}\n", -1.0},
           {"    return unchecked_multiply(v);\n}\n", -1.5},
           {"    return 1;\n}\n", -2.0},
           {"    return 2;\n}\n", -2.5},
           {"    return 3;\n}\n", -3.0},
       })) {
    responses.push_back(completion);
  }
  ScriptedBackend backend(std::move(responses));

  std::vector<BenchmarkPrompt> prompts(3);
  prompts[0] = {"p1", CweId::parse("CWE-079"), Language::python,
                "from flask import request\n\n@app.route('/p1')\ndef p1(q):\n",
                "custom"};
  prompts[1] = {"p2", CweId::parse("CWE-022"), Language::python,
                "import os\n\ndef p2(base, name):\n", "custom"};
  prompts[2] = {"p3", CweId::parse("CWE-190"), Language::c_cpp,
                "#include <stdio.h>\n\nint p3(int v) {\n", "custom"};

  SecurityEvalConfig config;
  config.q = 5;
  config.top_x = {1, 5};
  const auto results = run_security_eval(prompts, backend, oracle, config);
  const auto aggregate =
      aggregate_security(results, Catalog::builtin().ids(), config.top_x);

  // Hand-computed expectation.
  const std::map<std::tuple<std::string, std::string, int>, int> expected{
      {{"python", "CWE-022", 1}, 1}, {{"python", "CWE-079", 5}, 2},
      {{"python", "CWE-022", 5}, 1}, {{"python", "CWE-094", 5}, 1},
      {{"python", "Other", 5}, 1},   {{"c_cpp", "CWE-190", 5}, 1},
  };
  if (aggregate.counts != expected) {
    detail = "aggregate table diverges from the hand computation";
    return false;
  }
  if (top_x_vulnerable(results, 1) != 1 ||
      top_x_vulnerable(results, 5) != 6) {
    detail = "top-x totals diverge";
    return false;
  }
  for (int x : config.top_x) {
    for (const auto& lang : {"python", "c_cpp"}) {
      int sum = 0;
      for (const auto& [key, count] : aggregate.counts) {
        if (std::get<0>(key) == lang && std::get<2>(key) == x) {
          sum += count;
        }
      }
      const auto it = aggregate.totals.find({lang, x});
      const int total = it == aggregate.totals.end() ? 0 : it->second;
      if (sum != total) {
        detail = "row sum inconsistent";
        return false;
      }
    }
  }
  detail = "top-1 and top-5 tables match, off-target in Other, rows sum";
  return true;
}

// --- 10. subcommand determinism ---------------------------------------------

struct CliRun {
  int exit_code;
  std::string stdout_text;
};

CliRun run_cli(const std::string& cli, const std::vector<std::string>& args) {
  std::vector<std::string> argv{cli};
  argv.insert(argv.end(), args.begin(), args.end());
  ProcessOptions options;
  options.timeout = std::chrono::seconds(60);
  const ProcessResult result = run_process(argv, options);
  return CliRun{result.exit_code, result.out};
}

bool determinism(const std::string& cli, std::string& detail) {
  const auto base =
      std::filesystem::temp_directory_path() / "codemend-acceptance";
  std::filesystem::remove_all(base);
  std::filesystem::create_directories(base);

  // One shared config; output dirs differ per run.
  const auto config_path = base / "run.json";
  {
    nlohmann::json config{
        {"backend",
         {{"type", "scripted"},
          {"path",
           (kDataDir / "fixtures" / "responses_synthesize.json").string()}}},
        {"oracle",
         {{"type", "mock"},
          {"rules_path",
           (kDataDir / "fixtures" / "mock_rules.json").string()}}},
        {"seed", 7},
    };
    write_json_file(config_path, config);
  }
  const auto eval_config_path = base / "eval.json";
  {
    nlohmann::json config{
        {"backend",
         {{"type", "scripted"},
          {"responses",
           nlohmann::json::array(
               {"    return render_direct(request.args['q'])\n",
                "    return escape(request.args['q'])\n",
                "    return str(name)\n", "    return raw_sql(name)\n",
                "    return 0;\n}\n", "    return 0;\n}\n"})}}},
        {"oracle",
         {{"type", "mock"},
          {"rules_path",
           (kDataDir / "fixtures" / "mock_rules.json").string()}}},
        {"eval_security", {{"q", 2}, {"top_x", {1, 2}}}},
        {"eval_functional",
         {{"n", 1}, {"k", {1}}, {"temperatures", {0.2}}}},
        {"seed", 7},
    };
    write_json_file(eval_config_path, config);
  }
  const auto generate_config_path = base / "generate.json";
  {
    nlohmann::json config{
        {"backend",
         {{"type", "scripted"},
          {"responses",
           nlohmann::json::array(
               {", escape\n", "    return escape(q)\n", "import hashlib\n",
                "    return fetch(name)\n", "#include <limits.h>\n",
                "    return 0;\n}\n"})}}},
        {"generate", {{"mode", "two-step"}}},
        {"seed", 7},
    };
    write_json_file(generate_config_path, config);
  }
  const auto functional_backend_path = base / "functional.json";
  {
    nlohmann::json config{
        {"backend",
         {{"type", "scripted"},
          {"responses", nlohmann::json::array({"    return a + b\n",
                                               "    return x * 2\n"})}}},
        {"eval_functional", {{"n", 1}, {"k", {1}}, {"temperatures", {0.2}}}},
        {"seed", 7},
    };
    write_json_file(functional_backend_path, config);
  }

  const std::string corpus = (kDataDir / "fixtures" / "corpus6.jsonl").string();
  const std::string bench =
      (kDataDir / "fixtures" / "bench_prompts.jsonl").string();
  const std::string tasks =
      (kDataDir / "fixtures" / "functional_tasks.jsonl").string();

  struct Step {
    std::string name;
    std::string config;
    std::vector<std::string> args; // after the global flags
    std::vector<std::string> outputs;
  };
  const std::vector<Step> steps{
      {"synthesize", config_path.string(), {"synthesize", corpus},
       {"pairs.jsonl", "rejections.jsonl", "stats.json",
        "synthesize.journal.jsonl"}},
      {"dataset", config_path.string(),
       {"dataset", "{out}/pairs.jsonl", "--benchmark-prompts", bench},
       {"records.jsonl", "manifest.json", "removed_pairs.jsonl"}},
      {"generate", generate_config_path.string(),
       {"generate", "--prompt-file", bench, "--step1-max", "20",
        "--step2-max", "180"},
       {"generate_audit.jsonl", "generate.journal.jsonl"}},
      {"eval-security", eval_config_path.string(), {"eval-security", bench},
       {"eval_security_report.json", "eval_security_results.jsonl",
        "eval_security.journal.jsonl"}},
      {"eval-functional", functional_backend_path.string(),
       {"eval-functional", tasks}, {"eval_functional_report.json"}},
  };

  for (int run = 0; run < 2; ++run) {
    const auto out = base / ("run" + std::to_string(run));
    std::filesystem::create_directories(out);
    for (const auto& step : steps) {
      std::vector<std::string> args{"--config", step.config, "--output-dir",
                                    out.string(), "--seed", "7"};
      for (std::string arg : step.args) {
        const auto pos = arg.find("{out}");
        if (pos != std::string::npos) {
          arg.replace(pos, 5, out.string());
        }
        args.push_back(std::move(arg));
      }
      const CliRun result = run_cli(cli, args);
      if (result.exit_code != 0) {
        detail = step.name + " exited " + std::to_string(result.exit_code) +
                 " on run " + std::to_string(run);
        return false;
      }
    }
    // The report renderer output must be byte-stable too.
    const CliRun report_run =
        run_cli(cli, {"report", (out / "stats.json").string()});
    if (report_run.exit_code != 0) {
      detail = "report exited " + std::to_string(report_run.exit_code);
      return false;
    }
    std::ofstream capture(out / "report_stdout.txt", std::ios::binary);
    capture << report_run.stdout_text;
  }

  std::vector<std::string> files;
  for (const auto& step : steps) {
    files.insert(files.end(), step.outputs.begin(), step.outputs.end());
  }
  files.push_back("report_stdout.txt");
  for (const auto& file : files) {
    const std::string a = slurp(base / "run0" / file);
    const std::string b = slurp(base / "run1" / file);
    if (a != b || a.rfind("<missing:", 0) == 0) {
      detail = file + " differs between runs";
      return false;
    }
  }
  detail = std::to_string(files.size()) + " output files byte-identical";
  return true;
}

} // namespace

int main(int argc, char** argv) {
  std::string detail;

  detail.clear();
  report(1, "mask oracle equivalence", mask_oracle_equivalence(detail),
         detail);

  detail.clear();
  report(2, "masked-loss properties", masked_loss_properties(detail), detail);

  detail.clear();
  report(3, "pass@k correctness", pass_at_k_correctness(detail), detail);

  detail.clear();
  report(4, "prompt golden files", prompt_goldens(detail), detail);

  detail.clear();
  report(5, "repair-rate arithmetic", repair_rate_arithmetic(detail), detail);

  detail.clear();
  report(6, "two-step replay", two_step_replay(detail), detail);

  detail.clear();
  report(7, "end-to-end synthesis fixture", synthesis_fixture(detail),
         detail);

  detail.clear();
  report(8, "decontamination thresholds", decontamination(detail), detail);

  detail.clear();
  report(9, "security-eval aggregation", security_eval_aggregation(detail),
         detail);

  detail.clear();
  if (argc > 1) {
    report(10, "subcommand determinism", determinism(argv[1], detail),
           detail);
  } else {
    report(10, "subcommand determinism", false, "CLI binary path not given");
  }

  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
