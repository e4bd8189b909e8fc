#pragma once

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace codemend {

struct CompletionRequest {
  std::string prompt;
  int max_new_tokens = 200;
  double temperature = 0.0;
  double top_p = 0.95; // nucleus parameter
  int n_samples = 1;
  std::vector<std::string> stop;

  void validate() const; // throws ConfigError on bad parameter values
};

enum class FinishReason { length, stop, end_of_sequence };

struct Completion {
  std::string text;
  std::optional<std::vector<double>> token_logprobs;
  FinishReason finish_reason = FinishReason::end_of_sequence;
};

// Sum of per-token log-probabilities, i.e. the log of the sequence
// probability under left-to-right factorization. Empty generations score
// 0 (log of the empty product). Throws UnavailableError when the backend
// returned no logprobs.
double sequence_logprob(const Completion& completion);

// Completion-model backend. Implementations must be callable from several
// workers at once.
class Backend {
public:
  virtual ~Backend() = default;
  // Returns exactly request.n_samples completions or throws.
  virtual std::vector<Completion> complete(const CompletionRequest& request) = 0;
  virtual std::string name() const = 0;
  // Replay backends hand out a fixed response sequence; callers serialize
  // work on them to keep runs reproducible.
  virtual bool replay() const { return false; }
};

// Deterministic backend that replays a fixed response list in order.
// Records every request it serves for audit and tests.
class ScriptedBackend : public Backend {
public:
  explicit ScriptedBackend(std::vector<Completion> responses);
  static std::shared_ptr<ScriptedBackend>
  from_file(const std::filesystem::path& path);
  static std::shared_ptr<ScriptedBackend>
  from_json(const nlohmann::json& doc);

  std::vector<Completion> complete(const CompletionRequest& request) override;
  std::string name() const override { return "scripted"; }
  bool replay() const override { return true; }

  std::vector<CompletionRequest> requests() const;
  size_t remaining() const;

private:
  mutable std::mutex mutex_;
  std::vector<Completion> responses_;
  size_t next_ = 0;
  std::vector<CompletionRequest> requests_;
};

struct HttpBackendConfig {
  std::string base_url;           // e.g. "http://127.0.0.1:8080"
  std::string path = "/v1/completions";
  std::string auth_env;           // env var holding the bearer token
  std::string prompt_field = "prompt";
  // Request body field names; empty string omits the parameter.
  std::string max_tokens_field = "max_tokens";
  std::string temperature_field = "temperature";
  std::string top_p_field = "top_p";
  std::string n_field = "n";
  std::string stop_field = "stop";
  // Response paths, dot-separated with one "[]" marking the per-sample
  // array: "choices[].text", "choices[].logprobs.token_logprobs".
  std::string text_path = "choices[].text";
  std::string logprobs_path;      // empty: backend has no logprobs
  std::string finish_reason_path; // empty: report end_of_sequence
  nlohmann::json* extra_body = nullptr; // merged verbatim (model name etc.)
  int max_retries = 3;
  int backoff_ms = 500;
  int max_inflight = 4;
  int timeout_s = 120;
};

class HttpBackend : public Backend {
public:
  static std::shared_ptr<HttpBackend> create(const nlohmann::json& config);
  ~HttpBackend() override;

  std::vector<Completion> complete(const CompletionRequest& request) override;
  std::string name() const override;

private:
  struct Impl;
  explicit HttpBackend(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

// Builds a backend from config: {"type": "scripted", "path": ...} or
// {"type": "scripted", "responses": [...]} or {"type": "http", ...}.
std::shared_ptr<Backend> make_backend(const nlohmann::json& config);

} // namespace codemend
