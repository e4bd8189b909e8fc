#include "codemend/llm.hpp"

#include "codemend/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <doctest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <thread>

using namespace codemend;

TEST_CASE("request parameter validation") {
  CompletionRequest request;
  request.prompt = "p";
  CHECK_NOTHROW(request.validate());

  auto expect_bad = [](auto mutate) {
    CompletionRequest bad;
    bad.prompt = "p";
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  };
  expect_bad([](auto& r) { r.max_new_tokens = 0; });
  expect_bad([](auto& r) { r.n_samples = 0; });
  expect_bad([](auto& r) { r.temperature = -0.1; });
  expect_bad([](auto& r) { r.top_p = 0.0; });
  expect_bad([](auto& r) { r.top_p = 1.5; });
}

TEST_CASE("sequence logprob sums the per-token values") {
  Completion completion;
  completion.token_logprobs = std::vector<double>{-1.0, -2.0};
  CHECK(sequence_logprob(completion) == doctest::Approx(-3.0));

  completion.token_logprobs = std::vector<double>{};
  CHECK(sequence_logprob(completion) == 0.0); // log of the empty product

  completion.token_logprobs.reset();
  CHECK_THROWS_AS(sequence_logprob(completion), UnavailableError);
}

TEST_CASE("sequence logprob equals log of the probability product") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> logprob(-2.0, 0.0);
  for (int round = 0; round < 200; ++round) {
    const size_t n = rng() % 12;
    std::vector<double> lps(n);
    double product = 1.0;
    for (auto& lp : lps) {
      lp = logprob(rng);
      product *= std::exp(lp);
    }
    Completion completion;
    completion.token_logprobs = lps;
    const double expected = n == 0 ? 0.0 : std::log(product);
    CHECK(sequence_logprob(completion) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("sequence logprob is additive under concatenation") {
  Completion a, b, joined;
  a.token_logprobs = std::vector<double>{-0.5, -1.5};
  b.token_logprobs = std::vector<double>{-2.25};
  joined.token_logprobs = std::vector<double>{-0.5, -1.5, -2.25};
  CHECK(sequence_logprob(joined) ==
        doctest::Approx(sequence_logprob(a) + sequence_logprob(b)));
}

TEST_CASE("scripted backend replays responses in order") {
  ScriptedBackend backend({Completion{"A", {}, FinishReason::stop},
                           Completion{"B", {}, FinishReason::stop}});
  CompletionRequest request;
  request.prompt = "p";
  request.n_samples = 1;
  CHECK(backend.complete(request)[0].text == "A");
  CHECK(backend.complete(request)[0].text == "B");
  CHECK_THROWS_AS(backend.complete(request), ScriptExhaustedError);
}

TEST_CASE("scripted backend serves n samples per call and records requests") {
  ScriptedBackend backend({Completion{"A"}, Completion{"B"}, Completion{"C"}});
  CompletionRequest request;
  request.prompt = "p";
  request.n_samples = 2;
  request.max_new_tokens = 77;
  const auto out = backend.complete(request);
  REQUIRE(out.size() == 2);
  CHECK(out[0].text == "A");
  CHECK(out[1].text == "B");
  CHECK(backend.remaining() == 1);
  REQUIRE(backend.requests().size() == 1);
  CHECK(backend.requests()[0].max_new_tokens == 77);
}

TEST_CASE("scripted backend loads from a document") {
  const nlohmann::json doc = nlohmann::json::array(
      {"plain text",
       {{"text", "with logprobs"},
        {"token_logprobs", {-0.25, -0.75}},
        {"finish_reason", "length"}}});
  auto backend = ScriptedBackend::from_json(doc);
  CompletionRequest request;
  request.prompt = "p";
  auto first = backend->complete(request);
  CHECK(first[0].text == "plain text");
  CHECK_FALSE(first[0].token_logprobs.has_value());
  auto second = backend->complete(request);
  CHECK(second[0].finish_reason == FinishReason::length);
  REQUIRE(second[0].token_logprobs.has_value());
  CHECK(sequence_logprob(second[0]) == doctest::Approx(-1.0));
}

TEST_CASE("backend factory rejects unknown types") {
  CHECK_THROWS_AS(make_backend(nlohmann::json{{"type", "ouija"}}),
                  ConfigError);
  CHECK_THROWS_AS(make_backend(nlohmann::json{{"type", "scripted"}}),
                  ConfigError);
}

TEST_CASE("in-flight limit and text path are validated at construction") {
  nlohmann::json config{{"type", "http"},
                        {"base_url", "http://127.0.0.1:1"},
                        {"max_inflight", 0}};
  CHECK_THROWS_AS(make_backend(config), ConfigError);
  config["max_inflight"] = 4;
  config["text_path"] = "choices.text"; // no per-sample array marker
  CHECK_THROWS_AS(make_backend(config), ConfigError);
}

namespace {

struct TestServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~TestServer() {
    server.stop();
    if (thread.joinable()) {
      thread.join();
    }
  }
};

nlohmann::json http_config(int port) {
  return nlohmann::json{
      {"type", "http"},
      {"base_url", "http://127.0.0.1:" + std::to_string(port)},
      {"path", "/v1/completions"},
      {"text_path", "choices[].text"},
      {"logprobs_path", "choices[].logprobs.token_logprobs"},
      {"finish_reason_path", "choices[].finish_reason"},
      {"max_retries", 3},
      {"backoff_ms", 10},
  };
}

} // namespace

TEST_CASE("http backend posts mapped parameters and parses samples") {
  TestServer ts;
  nlohmann::json seen_body;
  ts.server.Post("/v1/completions", [&](const httplib::Request& req,
                                        httplib::Response& res) {
    seen_body = nlohmann::json::parse(req.body);
    const int n = seen_body.value("n", 1);
    nlohmann::json choices = nlohmann::json::array();
    for (int i = 0; i < n; ++i) {
      choices.push_back({{"text", "sample-" + std::to_string(i)},
                         {"finish_reason", i == 0 ? "stop" : "length"},
                         {"logprobs", {{"token_logprobs", {-0.5, -0.25}}}}});
    }
    res.set_content(nlohmann::json{{"choices", choices}}.dump(),
                    "application/json");
  });
  ts.start();

  auto backend = make_backend(http_config(ts.port));
  CompletionRequest request;
  request.prompt = "def add(a, b):";
  request.max_new_tokens = 200;
  request.temperature = 0.4;
  request.top_p = 0.9;
  request.n_samples = 3;
  request.stop = {"\n\n"};
  const auto out = backend->complete(request);

  REQUIRE(out.size() == 3);
  CHECK(out[0].text == "sample-0");
  CHECK(out[0].finish_reason == FinishReason::stop);
  CHECK(out[1].finish_reason == FinishReason::length);
  REQUIRE(out[2].token_logprobs.has_value());
  CHECK(sequence_logprob(out[2]) == doctest::Approx(-0.75));

  CHECK(seen_body["prompt"] == "def add(a, b):");
  CHECK(seen_body["max_tokens"] == 200);
  CHECK(seen_body["temperature"] == doctest::Approx(0.4));
  CHECK(seen_body["top_p"] == doctest::Approx(0.9));
  CHECK(seen_body["n"] == 3);
  CHECK(seen_body["stop"][0] == "\n\n");
}

TEST_CASE("http backend retries transient failures with backoff") {
  TestServer ts;
  std::atomic<int> calls{0};
  ts.server.Post("/v1/completions", [&](const httplib::Request&,
                                        httplib::Response& res) {
    const int call = calls.fetch_add(1);
    if (call < 2) {
      res.status = 500;
      res.set_content("try later", "text/plain");
      return;
    }
    res.set_content(
        nlohmann::json{{"choices", {{{"text", "recovered"}}}}}.dump(),
        "application/json");
  });
  ts.start();

  auto backend = make_backend(http_config(ts.port));
  CompletionRequest request;
  request.prompt = "p";
  const auto out = backend->complete(request);
  CHECK(out[0].text == "recovered");
  CHECK(calls.load() == 3);
}

TEST_CASE("http backend gives up after exhausting retries") {
  TestServer ts;
  ts.server.Post("/v1/completions",
                 [](const httplib::Request&, httplib::Response& res) {
                   res.status = 503;
                 });
  ts.start();

  auto config = http_config(ts.port);
  config["max_retries"] = 1;
  auto backend = make_backend(config);
  CompletionRequest request;
  request.prompt = "p";
  CHECK_THROWS_AS(backend->complete(request), TransportError);
}

TEST_CASE("http backend treats parameter rejection as a config error") {
  TestServer ts;
  std::atomic<int> calls{0};
  ts.server.Post("/v1/completions",
                 [&](const httplib::Request&, httplib::Response& res) {
                   calls.fetch_add(1);
                   res.status = 400;
                   res.set_content("unknown field", "text/plain");
                 });
  ts.start();

  auto backend = make_backend(http_config(ts.port));
  CompletionRequest request;
  request.prompt = "p";
  CHECK_THROWS_AS(backend->complete(request), ConfigError);
  CHECK(calls.load() == 1); // no retry on a 4xx
}

TEST_CASE("http backend errors when the backend under-delivers samples") {
  TestServer ts;
  ts.server.Post("/v1/completions",
                 [](const httplib::Request&, httplib::Response& res) {
                   res.set_content(
                       nlohmann::json{{"choices", {{{"text", "only one"}}}}}
                           .dump(),
                       "application/json");
                 });
  ts.start();

  auto config = http_config(ts.port);
  config["max_retries"] = 0;
  auto backend = make_backend(config);
  CompletionRequest request;
  request.prompt = "p";
  request.n_samples = 2;
  CHECK_THROWS_AS(backend->complete(request), TransportError);
}

TEST_CASE("bearer token is taken from the configured environment variable") {
  TestServer ts;
  std::string seen_auth;
  ts.server.Post("/v1/completions", [&](const httplib::Request& req,
                                        httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    res.set_content(nlohmann::json{{"choices", {{{"text", "ok"}}}}}.dump(),
                    "application/json");
  });
  ts.start();

  ::setenv("CODEMEND_TEST_TOKEN", "sekrit", 1);
  auto config = http_config(ts.port);
  config["auth_env"] = "CODEMEND_TEST_TOKEN";
  auto backend = make_backend(config);
  CompletionRequest request;
  request.prompt = "p";
  backend->complete(request);
  CHECK(seen_auth == "Bearer sekrit");
  ::unsetenv("CODEMEND_TEST_TOKEN");
}
