#pragma once

// Chat-completion clients realizing the policy judge and the rewriter, and
// in-process mocks for hermetic tests. No request is sent unless a caller
// constructs a client with an explicit EndpointConfig and Transport.
//
// Wire format: POST <base_url>/chat/completions
//   {"model": ..., "messages": [{"role": "system", "content": ...},
//                               {"role": "user", "content": ...}]}
// reply: choices[0].message.content

#include <chrono>
#include <cstdlib>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <regex>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gog/detect.hpp"
#include "gog/errors.hpp"
#include "gog/registry.hpp"
#include "gog/rewrite.hpp"

namespace gog {

inline constexpr const char* kApiKeyEnvVar = "GOG_LLM_API_KEY";

struct EndpointConfig {
  std::string base_url;
  std::string api_key;
  std::string model_name = "gpt-4o";
  std::chrono::milliseconds timeout{30000};
  int max_retries = 2;

  static EndpointConfig from_environment(std::string base_url, std::string model_name = "gpt-4o") {
    EndpointConfig cfg;
    cfg.base_url = std::move(base_url);
    cfg.model_name = std::move(model_name);
    if (const char* key = std::getenv(kApiKeyEnvVar)) cfg.api_key = key;
    return cfg;
  }

  void validate() const {
    if (base_url.empty()) throw ConfigError("endpoint: base_url is empty", "llm-url");
    if (timeout.count() <= 0) throw ConfigError("endpoint: timeout must be > 0", "timeout");
    if (max_retries < 0) throw ConfigError("endpoint: max_retries must be >= 0", "max_retries");
  }

  std::string completions_url() const {
    std::string url = base_url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    return url + "/chat/completions";
  }
};

struct HttpRequest {
  std::string url;
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;
  std::chrono::milliseconds timeout{0};
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // Throws TransportError on connection failure or timeout.
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
using RequestLog = std::function<void(const std::string&)>;

inline Sleeper thread_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

inline std::string redact(std::string text, std::string_view secret) {
  if (secret.empty()) return text;
  for (std::size_t pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos + 3)) {
    text.replace(pos, secret.size(), "***");
  }
  return text;
}

inline constexpr std::chrono::milliseconds kBackoffBase{500};
inline constexpr int kBackoffFactor = 2;

inline std::chrono::milliseconds backoff_delay(int retry_index) {
  std::chrono::milliseconds d = kBackoffBase;
  for (int i = 0; i < retry_index; ++i) d *= kBackoffFactor;
  return d;
}

struct ChatResult {
  std::string content;
  int retries = 0;
};

class ChatClient {
 public:
  ChatClient(EndpointConfig cfg, std::shared_ptr<Transport> transport, Sleeper sleeper = thread_sleeper(),
             RequestLog log = {})
      : cfg_(std::move(cfg)), transport_(std::move(transport)), sleeper_(std::move(sleeper)), log_(std::move(log)) {
    cfg_.validate();
    if (!transport_) throw ContractViolation("ChatClient: transport is null");
  }

  const EndpointConfig& config() const noexcept { return cfg_; }

  // Transport failures and non-2xx statuses are retried up to max_retries
  // times with 500 ms * 2^i backoff; a malformed body is not retried.
  ChatResult complete(std::string_view system, std::string_view user) const {
    nlohmann::json body = {{"model", cfg_.model_name},
                           {"messages",
                            {{{"role", "system"}, {"content", std::string(system)}},
                             {{"role", "user"}, {"content", std::string(user)}}}}};
    HttpRequest request;
    request.url = cfg_.completions_url();
    request.body = body.dump();
    request.timeout = cfg_.timeout;
    request.headers.emplace_back("Content-Type", "application/json");
    if (!cfg_.api_key.empty()) request.headers.emplace_back("Authorization", "Bearer " + cfg_.api_key);

    for (int attempt = 0;; ++attempt) {
      log("POST " + request.url + " attempt " + std::to_string(attempt + 1) + " headers: " + header_dump(request) +
          " body: " + request.body);
      try {
        HttpResponse response = transport_->post(request);
        if (response.status < 200 || response.status >= 300) {
          throw TransportError("HTTP status " + std::to_string(response.status) + ": " +
                               redact(response.body, cfg_.api_key));
        }
        log("response " + std::to_string(response.status) + ": " + response.body);
        return {extract_content(response.body), attempt};
      } catch (const TransportError& e) {
        log(std::string("transport error: ") + e.what());
        if (attempt >= cfg_.max_retries) {
          throw TransportError(redact(std::string(e.what()), cfg_.api_key) + " (after " +
                               std::to_string(attempt + 1) + " attempts)");
        }
        sleeper_(backoff_delay(attempt));
      }
    }
  }

 private:
  static std::string extract_content(const std::string& body) {
    try {
      const auto doc = nlohmann::json::parse(body);
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed chat completion: ") + e.what());
    }
  }

  std::string header_dump(const HttpRequest& request) const {
    std::string out;
    for (const auto& [k, v] : request.headers) out += k + ": " + v + "; ";
    return out;
  }

  void log(const std::string& line) const {
    if (log_) log_(redact(line, cfg_.api_key));
  }

  EndpointConfig cfg_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  RequestLog log_;
};

inline constexpr std::string_view kJudgeInstruction =
    "You judge prompts for an image generator against the content policy above. "
    "Decide whether the user's prompt asks for any protected concept, either by name or through "
    "an unmistakable description. Reply with exactly one line and nothing else:\n"
    "VERDICT: <0 or 1>; CONCEPTS: <comma-separated concept ids, empty when VERDICT is 0>";

inline constexpr std::string_view kRewriteInstruction =
    "You rewrite prompts for an image generator. The user lists disallowed elements and then a prompt. "
    "Remove or replace the disallowed elements while preserving high-level semantics: keep the prompt's "
    "style, composition and intent. Do not name or hint at the disallowed elements. Reply with the "
    "rewritten prompt only.";

// Grammar: "VERDICT: 0|1; CONCEPTS: id,id" on a single line; ids are
// [A-Za-z0-9_-]+. Anything else is a ParseError.
inline JudgeResult parse_verdict(std::string_view reply) {
  std::string line(reply);
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r' || line.back() == ' ')) line.pop_back();
  static const std::regex pattern(R"(^\s*VERDICT:\s*([01])\s*;\s*CONCEPTS:\s*([A-Za-z0-9_\-]+(\s*,\s*[A-Za-z0-9_\-]+)*)?\s*$)");
  std::smatch m;
  if (line.find('\n') != std::string::npos || !std::regex_match(line, m, pattern)) {
    throw ParseError("judge reply does not match \"VERDICT: 0|1; CONCEPTS: id,id\": " + line.substr(0, 200));
  }
  JudgeResult out;
  out.verdict = m[1].str() == "1" ? 1 : 0;
  const std::string ids = m[2].str();
  static const std::regex id_pattern(R"([A-Za-z0-9_\-]+)");
  for (auto it = std::sregex_iterator(ids.begin(), ids.end(), id_pattern); it != std::sregex_iterator(); ++it) {
    out.concepts.push_back(it->str());
  }
  return out;
}

// Strips surrounding whitespace and one layer of matching quotes.
inline std::string clean_rewrite_reply(std::string_view reply) {
  std::string text = detail::collapse_spaces(reply);
  static const std::pair<std::string_view, std::string_view> quotes[] = {
      {"\"", "\""}, {"'", "'"}, {"`", "`"}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}, {"\xE2\x80\x98", "\xE2\x80\x99"}};
  for (const auto& [open, close] : quotes) {
    if (text.size() >= open.size() + close.size() && text.starts_with(open) && text.ends_with(close)) {
      text = detail::collapse_spaces(text.substr(open.size(), text.size() - open.size() - close.size()));
      break;
    }
  }
  if (text.empty()) throw ParseError("rewriter returned an empty prompt");
  return text;
}

inline JudgeResult remote_judge(const ChatClient& client, std::string_view prompt, std::string_view policy_text,
                                int* retries = nullptr) {
  const std::string system = std::string(policy_text) + "\n\n" + std::string(kJudgeInstruction);
  ChatResult r = client.complete(system, prompt);
  if (retries) *retries = r.retries;
  return parse_verdict(r.content);
}

inline std::string remote_rewrite(const ChatClient& client, std::string_view prompt,
                                  const std::vector<std::string>& matched_descriptions, int* retries = nullptr) {
  std::string user = "Disallowed elements:\n";
  for (const auto& d : matched_descriptions) user += "- " + d + "\n";
  user += "\nPrompt:\n" + std::string(prompt);
  ChatResult r = client.complete(kRewriteInstruction, user);
  if (retries) *retries = r.retries;
  return clean_rewrite_reply(r.content);
}

inline std::vector<std::string> describe_matched(const DetectionReport& report, const Policy& policy) {
  std::vector<std::string> out;
  for (const auto& id : report.matched) {
    const ProtectedConcept* c = policy.find(id);
    if (!c) continue;
    std::string d = c->canonical_name;
    if (!c->synonyms.empty()) {
      d += " (also referred to as: ";
      for (std::size_t i = 0; i < c->synonyms.size(); ++i) d += (i ? ", " : "") + c->synonyms[i];
      d += ")";
    }
    out.push_back(std::move(d));
  }
  return out;
}

class RemoteJudge final : public PolicyJudge {
 public:
  // `concept_ids` are listed to the model so its CONCEPTS field can use them.
  RemoteJudge(std::shared_ptr<const ChatClient> client, std::vector<std::string> concept_ids = {})
      : client_(std::move(client)), concept_ids_(std::move(concept_ids)) {}

  JudgeResult judge(std::string_view prompt, std::string_view policy_text) override {
    std::string text(policy_text);
    if (!concept_ids_.empty()) {
      text += "\n\nConcept ids:";
      for (const auto& id : concept_ids_) text += " " + id;
    }
    return remote_judge(*client_, prompt, text);
  }

 private:
  std::shared_ptr<const ChatClient> client_;
  std::vector<std::string> concept_ids_;
};

class RemoteRewriter final : public Rewriter {
 public:
  explicit RemoteRewriter(std::shared_ptr<const ChatClient> client) : client_(std::move(client)) {}

  std::string rewrite(std::string_view prompt, const DetectionReport& report, const Policy& policy) override {
    return remote_rewrite(*client_, prompt, describe_matched(report, policy));
  }

 private:
  std::shared_ptr<const ChatClient> client_;
};

namespace mock {

inline std::string chat_completion_body(std::string_view content) {
  nlohmann::json doc = {{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}}}};
  return doc.dump();
}

// Replays a fixed script of replies or transport failures and records every
// request it receives.
class ScriptedTransport final : public Transport {
 public:
  using Step = std::variant<HttpResponse, TransportError>;

  void push_reply(std::string_view content, int status = 200) {
    std::lock_guard lock(mu_);
    script_.push_back(HttpResponse{status, chat_completion_body(content)});
  }
  void push_raw(HttpResponse response) {
    std::lock_guard lock(mu_);
    script_.push_back(std::move(response));
  }
  void push_failure(std::string what) {
    std::lock_guard lock(mu_);
    script_.push_back(TransportError(std::move(what)));
  }

  HttpResponse post(const HttpRequest& request) override {
    std::lock_guard lock(mu_);
    requests_.push_back(request);
    if (script_.empty()) throw TransportError("scripted transport exhausted");
    Step step = std::move(script_.front());
    script_.pop_front();
    if (auto* err = std::get_if<TransportError>(&step)) throw *err;
    return std::get<HttpResponse>(step);
  }

  std::vector<HttpRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  mutable std::mutex mu_;
  std::deque<Step> script_;
  std::vector<HttpRequest> requests_;
};

class StaticJudge final : public PolicyJudge {
 public:
  explicit StaticJudge(JudgeResult result) : result_(std::move(result)) {}
  JudgeResult judge(std::string_view, std::string_view) override {
    ++calls;
    return result_;
  }
  int calls = 0;

 private:
  JudgeResult result_;
};

class FailingJudge final : public PolicyJudge {
 public:
  JudgeResult judge(std::string_view, std::string_view) override { throw TransportError("judge endpoint unreachable"); }
};

class IdentityRewriter final : public Rewriter {
 public:
  std::string rewrite(std::string_view prompt, const DetectionReport&, const Policy&) override {
    ++calls;
    return std::string(prompt);
  }
  int calls = 0;
};

class CountingRewriter final : public Rewriter {
 public:
  explicit CountingRewriter(Rewriter& inner) : inner_(inner) {}
  std::string rewrite(std::string_view prompt, const DetectionReport& report, const Policy& policy) override {
    ++calls;
    return inner_.rewrite(prompt, report, policy);
  }
  int calls = 0;

 private:
  Rewriter& inner_;
};

}  // namespace mock

}  // namespace gog
