#include "codemend/llm.hpp"

#include "codemend/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <semaphore>
#include <thread>

namespace codemend {

void CompletionRequest::validate() const {
  if (max_new_tokens < 1) {
    throw ConfigError("max_new_tokens must be >= 1");
  }
  if (n_samples < 1) {
    throw ConfigError("n_samples must be >= 1");
  }
  if (temperature < 0.0) {
    throw ConfigError("temperature must be >= 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw ConfigError("top_p must be in (0, 1]");
  }
}

double sequence_logprob(const Completion& completion) {
  if (!completion.token_logprobs) {
    throw UnavailableError("completion carries no token logprobs");
  }
  double sum = 0.0;
  for (double lp : *completion.token_logprobs) {
    sum += lp;
  }
  return sum;
}

ScriptedBackend::ScriptedBackend(std::vector<Completion> responses)
    : responses_(std::move(responses)) {}

namespace {

Completion completion_from_json(const nlohmann::json& item) {
  Completion completion;
  if (item.is_string()) {
    completion.text = item.get<std::string>();
    return completion;
  }
  completion.text = item.at("text").get<std::string>();
  if (item.contains("token_logprobs") && !item["token_logprobs"].is_null()) {
    completion.token_logprobs = item["token_logprobs"].get<std::vector<double>>();
  }
  const std::string reason = item.value("finish_reason", "end_of_sequence");
  if (reason == "length") {
    completion.finish_reason = FinishReason::length;
  } else if (reason == "stop") {
    completion.finish_reason = FinishReason::stop;
  }
  return completion;
}

} // namespace

std::shared_ptr<ScriptedBackend>
ScriptedBackend::from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) {
    throw ParseError("scripted backend document must be an array");
  }
  std::vector<Completion> responses;
  for (const auto& item : doc) {
    responses.push_back(completion_from_json(item));
  }
  return std::make_shared<ScriptedBackend>(std::move(responses));
}

std::shared_ptr<ScriptedBackend>
ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open scripted response file: " + path.string());
  }
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("scripted response file " + path.string() + ": " +
                     e.what());
  }
  return from_json(doc);
}

std::vector<Completion>
ScriptedBackend::complete(const CompletionRequest& request) {
  request.validate();
  std::lock_guard lock(mutex_);
  requests_.push_back(request);
  if (next_ + static_cast<size_t>(request.n_samples) > responses_.size()) {
    throw ScriptExhaustedError(
        "scripted backend exhausted: " + std::to_string(request.n_samples) +
        " sample(s) requested, " + std::to_string(responses_.size() - next_) +
        " left");
  }
  std::vector<Completion> out(responses_.begin() + next_,
                              responses_.begin() + next_ + request.n_samples);
  next_ += static_cast<size_t>(request.n_samples);
  return out;
}

std::vector<CompletionRequest> ScriptedBackend::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

size_t ScriptedBackend::remaining() const {
  std::lock_guard lock(mutex_);
  return responses_.size() - next_;
}

// ---------------------------------------------------------------------------
// HTTP backend

namespace {

// Splits "choices[].logprobs.token_logprobs" at the "[]" marker.
struct ResponsePath {
  std::vector<std::string> head; // before the per-sample array
  std::vector<std::string> tail; // inside each array element
  bool has_array = false;
};

ResponsePath parse_path(const std::string& path) {
  ResponsePath out;
  std::vector<std::string>* current = &out.head;
  std::string segment;
  for (size_t i = 0; i < path.size(); ++i) {
    if (path[i] == '.') {
      if (!segment.empty()) {
        current->push_back(segment);
        segment.clear();
      }
    } else if (path[i] == '[' && i + 1 < path.size() && path[i + 1] == ']') {
      if (!segment.empty()) {
        current->push_back(segment);
        segment.clear();
      }
      out.has_array = true;
      current = &out.tail;
      ++i;
    } else {
      segment += path[i];
    }
  }
  if (!segment.empty()) {
    current->push_back(segment);
  }
  return out;
}

const nlohmann::json* walk(const nlohmann::json* node,
                           const std::vector<std::string>& segments) {
  for (const auto& segment : segments) {
    if (node == nullptr || !node->is_object() || !node->contains(segment)) {
      return nullptr;
    }
    node = &(*node)[segment];
  }
  return node;
}

bool retryable_status(int status) {
  return status == 429 || status >= 500;
}

} // namespace

struct HttpBackend::Impl {
  HttpBackendConfig config;
  nlohmann::json extra_body = nlohmann::json::object();
  ResponsePath text_path;
  ResponsePath logprobs_path;
  ResponsePath finish_path;
  std::string host;
  std::string token;
  std::unique_ptr<std::counting_semaphore<64>> inflight;

  std::vector<Completion> parse_response(const nlohmann::json& body,
                                         int expected) const {
    const nlohmann::json* array = walk(&body, text_path.head);
    if (array == nullptr || !array->is_array()) {
      throw TransportError("response lacks completion array at configured "
                           "text path");
    }
    std::vector<Completion> out;
    for (const auto& element : *array) {
      Completion completion;
      const nlohmann::json* text = walk(&element, text_path.tail);
      if (text == nullptr || !text->is_string()) {
        throw TransportError("response element lacks text field");
      }
      completion.text = text->get<std::string>();
      if (!config.logprobs_path.empty()) {
        const nlohmann::json* lp =
            walk(&element, logprobs_path.has_array ? logprobs_path.tail
                                                   : logprobs_path.head);
        if (lp != nullptr && lp->is_array()) {
          std::vector<double> values;
          for (const auto& v : *lp) {
            if (v.is_number()) {
              values.push_back(v.get<double>());
            }
          }
          completion.token_logprobs = std::move(values);
        }
      }
      if (!config.finish_reason_path.empty()) {
        const nlohmann::json* reason =
            walk(&element, finish_path.has_array ? finish_path.tail
                                                 : finish_path.head);
        if (reason != nullptr && reason->is_string()) {
          const std::string value = reason->get<std::string>();
          completion.finish_reason = value == "length"
                                         ? FinishReason::length
                                     : value == "stop"
                                         ? FinishReason::stop
                                         : FinishReason::end_of_sequence;
        }
      }
      out.push_back(std::move(completion));
    }
    if (static_cast<int>(out.size()) < expected) {
      throw TransportError("backend returned " + std::to_string(out.size()) +
                           " of " + std::to_string(expected) +
                           " requested samples");
    }
    out.resize(static_cast<size_t>(expected));
    return out;
  }
};

HttpBackend::HttpBackend(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
HttpBackend::~HttpBackend() = default;

std::string HttpBackend::name() const { return "http:" + impl_->host; }

std::shared_ptr<HttpBackend> HttpBackend::create(const nlohmann::json& config) {
  auto impl = std::make_unique<Impl>();
  HttpBackendConfig& c = impl->config;
  c.base_url = config.at("base_url").get<std::string>();
  c.path = config.value("path", c.path);
  c.auth_env = config.value("auth_env", "");
  c.prompt_field = config.value("prompt_field", c.prompt_field);
  if (config.contains("field_map")) {
    const auto& fields = config["field_map"];
    c.max_tokens_field = fields.value("max_new_tokens", c.max_tokens_field);
    c.temperature_field = fields.value("temperature", c.temperature_field);
    c.top_p_field = fields.value("top_p", c.top_p_field);
    c.n_field = fields.value("n_samples", c.n_field);
    c.stop_field = fields.value("stop", c.stop_field);
  }
  c.text_path = config.value("text_path", c.text_path);
  c.logprobs_path = config.value("logprobs_path", "");
  c.finish_reason_path = config.value("finish_reason_path", "");
  c.max_retries = config.value("max_retries", c.max_retries);
  c.backoff_ms = config.value("backoff_ms", c.backoff_ms);
  c.max_inflight = config.value("max_inflight", c.max_inflight);
  c.timeout_s = config.value("timeout_s", c.timeout_s);
  if (config.contains("extra_body")) {
    impl->extra_body = config["extra_body"];
  }

  impl->text_path = parse_path(c.text_path);
  if (!impl->text_path.has_array) {
    throw ConfigError("text_path must contain a '[]' array marker");
  }
  impl->logprobs_path = parse_path(c.logprobs_path);
  impl->finish_path = parse_path(c.finish_reason_path);
  impl->host = c.base_url;
  if (!c.auth_env.empty()) {
    if (const char* token = std::getenv(c.auth_env.c_str())) {
      impl->token = token;
    }
  }
  if (c.max_inflight < 1 || c.max_inflight > 64) {
    throw ConfigError("max_inflight must be in [1, 64]");
  }
  impl->inflight =
      std::make_unique<std::counting_semaphore<64>>(c.max_inflight);
  return std::shared_ptr<HttpBackend>(new HttpBackend(std::move(impl)));
}

std::vector<Completion> HttpBackend::complete(const CompletionRequest& request) {
  request.validate();
  const HttpBackendConfig& c = impl_->config;

  nlohmann::json body = impl_->extra_body;
  body[c.prompt_field] = request.prompt;
  if (!c.max_tokens_field.empty()) {
    body[c.max_tokens_field] = request.max_new_tokens;
  }
  if (!c.temperature_field.empty()) {
    body[c.temperature_field] = request.temperature;
  }
  if (!c.top_p_field.empty()) {
    body[c.top_p_field] = request.top_p;
  }
  if (!c.n_field.empty()) {
    body[c.n_field] = request.n_samples;
  }
  if (!c.stop_field.empty() && !request.stop.empty()) {
    body[c.stop_field] = request.stop;
  }
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!impl_->token.empty()) {
    headers.emplace("Authorization", "Bearer " + impl_->token);
  }

  impl_->inflight->acquire();
  struct Release {
    std::counting_semaphore<64>* sem;
    ~Release() { sem->release(); }
  } release{impl_->inflight.get()};

  std::string last_error;
  for (int attempt = 0; attempt <= c.max_retries; ++attempt) {
    if (attempt > 0) {
      const auto delay = std::chrono::milliseconds(
          static_cast<long long>(c.backoff_ms) * (1LL << (attempt - 1)));
      std::this_thread::sleep_for(delay);
    }
    httplib::Client client(c.base_url);
    client.set_connection_timeout(std::chrono::seconds(c.timeout_s));
    client.set_read_timeout(std::chrono::seconds(c.timeout_s));
    auto res = client.Post(c.path, headers, payload, "application/json");
    if (!res) {
      last_error = "connection error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) {
      nlohmann::json parsed;
      try {
        parsed = nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        last_error = std::string("bad response body: ") + e.what();
        continue;
      }
      return impl_->parse_response(parsed, request.n_samples);
    }
    if (retryable_status(res->status)) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    throw ConfigError("backend rejected request: HTTP " +
                      std::to_string(res->status) + " " + res->body);
  }
  throw TransportError("exhausted " + std::to_string(c.max_retries) +
                       " retries against " + c.base_url + ": " + last_error);
}

std::shared_ptr<Backend> make_backend(const nlohmann::json& config) {
  const std::string type = config.value("type", "");
  if (type == "scripted") {
    if (config.contains("path")) {
      return ScriptedBackend::from_file(config["path"].get<std::string>());
    }
    if (config.contains("responses")) {
      return ScriptedBackend::from_json(config["responses"]);
    }
    throw ConfigError("scripted backend needs 'path' or 'responses'");
  }
  if (type == "http") {
    return HttpBackend::create(config);
  }
  throw ConfigError("backend config: unknown type '" + type + "'");
}

} // namespace codemend
