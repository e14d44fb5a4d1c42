#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "stagecraft/error.hpp"

// Every LLM call in the project flows through this header: request/response
// types, the provider contract, the retrying gateway and the mock provider.
namespace stagecraft::llm {

enum class Role { System, User, Assistant };
std::string_view to_string(Role role);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct DecodingParams {
  double temperature = 0.8;
  int max_tokens = 2048;
  std::optional<std::int64_t> seed;

  bool operator==(const DecodingParams&) const = default;
};

// Declared defaults; nothing upstream pins decoding parameters.
inline constexpr double kCreativeTemperature = 0.8;  // writer, reviser, refiner, actor, global agent
inline constexpr double kJudgingTemperature = 0.2;   // critic, judge, director, reflection, classifier

struct ChatRequest {
  // What the call is for ("writer", "critic", "director", ...). Never sent
  // over the wire; used for ledgers, logs and purpose-keyed mocks.
  std::string purpose;
  std::vector<ChatMessage> messages;
  DecodingParams params;

  const ChatMessage* last_user_message() const;
};

nlohmann::json to_json(const ChatRequest& request);

struct TokenCounts {
  int prompt = 0;
  int completion = 0;
};

struct ProviderReply {
  std::string text;
  TokenCounts tokens;
};

// Raised by providers for failures worth retrying (HTTP 429, 5xx, timeouts).
class TransientFailure : public Error {
 public:
  TransientFailure(const std::string& what, int status) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

// Transport contract. Implementations throw TransientFailure, AuthError or
// ProviderUnavailable (permanent) and must be safe for concurrent use.
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ProviderReply send(const ChatRequest& request) = 0;
  virtual std::string tag() const = 0;
};

struct ChatExchange {
  std::uint64_t sequence = 0;
  ChatRequest request;
  std::string response;
  std::string provider_tag;
  int attempt = 1;
  std::optional<std::string> error;
  double latency_ms = 0.0;
  TokenCounts tokens;
};

nlohmann::json to_json(const ChatExchange& exchange);

// Append-only, thread-safe record of every attempt made through a gateway.
class ExchangeLog {
 public:
  std::uint64_t append(ChatExchange exchange);
  std::vector<ChatExchange> snapshot() const;
  std::size_t size() const;
  // Attempts that produced a response, optionally filtered by purpose.
  std::size_t successes(std::string_view purpose = {}) const;

 private:
  mutable std::mutex mutex_;
  std::vector<ChatExchange> entries_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{250};
  double jitter = 0.5;  // delay *= 1 + U[0, jitter)
};

struct Completion {
  std::string text;
  ChatExchange exchange;
};

class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit Gateway(std::shared_ptr<ChatProvider> provider, RetryPolicy policy = {},
                   std::shared_ptr<ExchangeLog> log = std::make_shared<ExchangeLog>());

  /// Sends `request`, retrying transient failures with exponential backoff.
  /// Throws ProviderUnavailable when attempts run out, AuthError at once on
  /// 401/403, ContractError when every attempt came back empty.
  Completion complete(const ChatRequest& request);

  ExchangeLog& log() { return *log_; }
  const ExchangeLog& log() const { return *log_; }
  std::shared_ptr<ExchangeLog> shared_log() const { return log_; }
  ChatProvider& provider() { return *provider_; }
  const RetryPolicy& policy() const { return policy_; }

  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }
  std::chrono::milliseconds backoff_delay(int failed_attempt);

 private:
  std::shared_ptr<ChatProvider> provider_;
  RetryPolicy policy_;
  std::shared_ptr<ExchangeLog> log_;
  Sleeper sleeper_;
  std::unique_ptr<std::mutex> rng_mutex_ = std::make_unique<std::mutex>();
  std::mt19937_64 jitter_rng_{0x5eedULL};
};

// Programmable mock replies, registered by name for JSON mock files.
using StubFn = std::function<std::string(const ChatRequest&)>;
using StubFactory = std::function<StubFn(const nlohmann::json& options)>;
using StubRegistry = std::map<std::string, StubFactory, std::less<>>;

// Provider configuration -----------------------------------------------------

struct ProviderConfig {
  enum class Kind { HttpOpenAICompatible, Mock };

  Kind kind = Kind::HttpOpenAICompatible;
  std::string endpoint;                         // http kind only
  std::string model = "gpt-4o";
  std::string api_key_env = "STAGECRAFT_API_KEY";  // secret reference, not the secret
  RetryPolicy retry;
  std::chrono::seconds timeout{120};
  std::string mock_file;  // mock kind: JSON mock description

  /// Reads STAGECRAFT_ENDPOINT / STAGECRAFT_MODEL; kind is http.
  static ProviderConfig from_env();
  /// Throws Error when endpoint presence does not match the kind.
  void validate() const;
};

class MockProvider;

/// Builds the transport described by `config` (mock files are loaded here,
/// with `stubs` available to stub-mode mocks).
std::shared_ptr<ChatProvider> make_provider(const ProviderConfig& config, const StubRegistry& stubs = {});

/// One-shot form: a fresh gateway per call, appending to `log` when given.
Completion complete(const ProviderConfig& config, const ChatRequest& request,
                    std::shared_ptr<ExchangeLog> log = nullptr);

// Mock provider ---------------------------------------------------------------

struct MockResponse {
  std::string text;
  int fail_status = 0;  // 0: succeed; 401/403 auth; 429/5xx transient; 408 timeout
  std::chrono::milliseconds delay{0};

  static MockResponse ok(std::string text) { return {std::move(text), 0, {}}; }
  static MockResponse failure(int status) { return {{}, status, {}}; }
};

/// Lookup key for request-hash tables: SHA-256 of the last user message.
std::string request_key(const ChatRequest& request);

// Deterministic stand-in for a real endpoint. Modes: a fixed playlist (flat
// or keyed by purpose), a request-hash lookup table, or a programmable stub.
class MockProvider : public ChatProvider {
 public:
  static std::shared_ptr<MockProvider> playlist(std::vector<MockResponse> responses, bool cycle = false);
  static std::shared_ptr<MockProvider> by_purpose(std::map<std::string, std::vector<MockResponse>> queues,
                                                  bool cycle = false);
  static std::shared_ptr<MockProvider> lookup(std::map<std::string, std::string> table,
                                              std::vector<std::pair<std::string, std::string>> contains_rules = {},
                                              std::optional<std::string> fallback = std::nullopt);
  static std::shared_ptr<MockProvider> stub(StubFn fn);

  /// Reads the JSON mock format documented in docs/mock-format.md.
  static std::shared_ptr<MockProvider> from_json(const nlohmann::json& doc, const StubRegistry& stubs = {});

  ProviderReply send(const ChatRequest& request) override;
  std::string tag() const override { return "mock"; }

  std::size_t calls() const;
  std::size_t calls(std::string_view purpose) const;
  std::vector<ChatRequest> requests() const;

 private:
  enum class Mode { Playlist, ByPurpose, Lookup, Stub };
  explicit MockProvider(Mode mode) : mode_(mode) {}
  MockResponse next_response(const ChatRequest& request);

  Mode mode_;
  bool cycle_ = false;
  mutable std::mutex mutex_;
  std::vector<MockResponse> queue_;
  std::size_t cursor_ = 0;
  std::map<std::string, std::vector<MockResponse>> purpose_queues_;
  std::map<std::string, std::size_t> purpose_cursors_;
  std::map<std::string, std::string> table_;
  std::vector<std::pair<std::string, std::string>> contains_rules_;
  std::optional<std::string> fallback_;
  StubFn stub_;
  std::vector<ChatRequest> requests_;
};

MockResponse mock_response_from_json(const nlohmann::json& j);

// OpenAI-compatible HTTP transport --------------------------------------------

class HttpProvider : public ChatProvider {
 public:
  HttpProvider(std::string endpoint, std::string model, std::string api_key, std::chrono::seconds timeout);

  ProviderReply send(const ChatRequest& request) override;
  std::string tag() const override { return "http:" + model_; }

  /// JSON body for POST /v1/chat/completions.
  nlohmann::json request_body(const ChatRequest& request) const;
  const std::string& base_url() const { return base_url_; }
  const std::string& path() const { return path_; }

 private:
  std::string base_url_;  // scheme://host[:port]
  std::string path_;      // .../chat/completions
  std::string model_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

}  // namespace stagecraft::llm
