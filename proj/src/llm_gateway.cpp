#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "stagecraft/llm.hpp"
#include "stagecraft/text.hpp"

namespace stagecraft::llm {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

const ChatMessage* ChatRequest::last_user_message() const {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::User) return &*it;
  }
  return nullptr;
}

json to_json(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  json params = {{"temperature", request.params.temperature}, {"max_tokens", request.params.max_tokens}};
  if (request.params.seed) params["seed"] = *request.params.seed;
  return {{"purpose", request.purpose}, {"messages", messages}, {"params", params}};
}

json to_json(const ChatExchange& e) {
  json j = {{"sequence", e.sequence},
            {"request", to_json(e.request)},
            {"response", e.response},
            {"provider", e.provider_tag},
            {"attempt", e.attempt},
            {"latency_ms", e.latency_ms},
            {"tokens", {{"prompt", e.tokens.prompt}, {"completion", e.tokens.completion}}}};
  if (e.error) j["error"] = *e.error;
  return j;
}

std::uint64_t ExchangeLog::append(ChatExchange exchange) {
  std::lock_guard lock(mutex_);
  exchange.sequence = entries_.size() + 1;
  entries_.push_back(std::move(exchange));
  return entries_.back().sequence;
}

std::vector<ChatExchange> ExchangeLog::snapshot() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t ExchangeLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::size_t ExchangeLog::successes(std::string_view purpose) const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [&](const ChatExchange& e) {
    return !e.error && (purpose.empty() || e.request.purpose == purpose);
  }));
}

Gateway::Gateway(std::shared_ptr<ChatProvider> provider, RetryPolicy policy, std::shared_ptr<ExchangeLog> log)
    : provider_(std::move(provider)),
      policy_(policy),
      log_(log ? std::move(log) : std::make_shared<ExchangeLog>()),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  if (!provider_) throw Error("gateway needs a provider");
  if (policy_.max_attempts < 1) throw Error("retry policy needs at least one attempt");
}

std::chrono::milliseconds Gateway::backoff_delay(int failed_attempt) {
  double factor = 1.0;
  {
    std::lock_guard lock(*rng_mutex_);
    std::uniform_real_distribution<double> jitter(0.0, policy_.jitter);
    factor += policy_.jitter > 0 ? jitter(jitter_rng_) : 0.0;
  }
  const double base = static_cast<double>(policy_.backoff_base.count()) * static_cast<double>(1LL << (failed_attempt - 1));
  return std::chrono::milliseconds(static_cast<long long>(base * factor));
}

Completion Gateway::complete(const ChatRequest& request) {
  enum class LastFailure { None, Transient, Empty } last = LastFailure::None;
  std::string last_message;

  for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt) {
    ChatExchange exchange;
    exchange.request = request;
    exchange.provider_tag = provider_->tag();
    exchange.attempt = attempt;
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    };

    try {
      ProviderReply reply = provider_->send(request);
      exchange.latency_ms = elapsed();
      exchange.tokens = reply.tokens;
      if (text::trim(reply.text).empty()) {
        exchange.error = "empty completion";
        log_->append(exchange);
        last = LastFailure::Empty;
        last_message = "empty completion";
      } else {
        exchange.response = std::move(reply.text);
        exchange.sequence = log_->append(exchange);
        return {exchange.response, std::move(exchange)};
      }
    } catch (const TransientFailure& e) {
      exchange.latency_ms = elapsed();
      exchange.error = e.what();
      log_->append(exchange);
      last = LastFailure::Transient;
      last_message = e.what();
    } catch (const AuthError& e) {
      exchange.latency_ms = elapsed();
      exchange.error = e.what();
      log_->append(exchange);
      throw;
    } catch (const ProviderUnavailable& e) {
      exchange.latency_ms = elapsed();
      exchange.error = e.what();
      log_->append(exchange);
      throw;
    }
    if (attempt < policy_.max_attempts) sleeper_(backoff_delay(attempt));
  }

  const std::string summary = request.purpose + " call failed after " + std::to_string(policy_.max_attempts) +
                              " attempt(s): " + last_message;
  if (last == LastFailure::Empty) throw ContractError(summary);
  throw ProviderUnavailable(summary);
}

ProviderConfig ProviderConfig::from_env() {
  ProviderConfig c;
  c.kind = Kind::HttpOpenAICompatible;
  if (const char* e = std::getenv("STAGECRAFT_ENDPOINT")) c.endpoint = e;
  if (const char* m = std::getenv("STAGECRAFT_MODEL"); m && *m) c.model = m;
  return c;
}

void ProviderConfig::validate() const {
  if (kind == Kind::HttpOpenAICompatible && endpoint.empty()) {
    throw Error("http provider needs an endpoint (set STAGECRAFT_ENDPOINT)");
  }
  if (kind == Kind::Mock && !endpoint.empty()) throw Error("mock provider must not name an endpoint");
  if (kind == Kind::Mock && mock_file.empty()) throw Error("mock provider needs a mock file");
}

std::shared_ptr<ChatProvider> make_provider(const ProviderConfig& config, const StubRegistry& stubs) {
  config.validate();
  if (config.kind == ProviderConfig::Kind::Mock) {
    std::ifstream in(config.mock_file);
    if (!in) throw Error("cannot open mock file " + config.mock_file);
    try {
      return MockProvider::from_json(json::parse(in), stubs);
    } catch (const json::parse_error& e) {
      throw Error("mock file " + config.mock_file + " is not JSON: " + e.what());
    }
  }
  std::string key;
  if (const char* k = std::getenv(config.api_key_env.c_str())) key = k;
  return std::make_shared<HttpProvider>(config.endpoint, config.model, key, config.timeout);
}

Completion complete(const ProviderConfig& config, const ChatRequest& request, std::shared_ptr<ExchangeLog> log) {
  Gateway gateway(make_provider(config), config.retry, std::move(log));
  return gateway.complete(request);
}

// Mock provider ---------------------------------------------------------------

std::string request_key(const ChatRequest& request) {
  const ChatMessage* m = request.last_user_message();
  return text::sha256_hex(m ? m->content : std::string{});
}

std::shared_ptr<MockProvider> MockProvider::playlist(std::vector<MockResponse> responses, bool cycle) {
  std::shared_ptr<MockProvider> p(new MockProvider(Mode::Playlist));
  p->queue_ = std::move(responses);
  p->cycle_ = cycle;
  return p;
}

std::shared_ptr<MockProvider> MockProvider::by_purpose(std::map<std::string, std::vector<MockResponse>> queues,
                                                       bool cycle) {
  std::shared_ptr<MockProvider> p(new MockProvider(Mode::ByPurpose));
  p->purpose_queues_ = std::move(queues);
  p->cycle_ = cycle;
  return p;
}

std::shared_ptr<MockProvider> MockProvider::lookup(std::map<std::string, std::string> table,
                                                   std::vector<std::pair<std::string, std::string>> contains_rules,
                                                   std::optional<std::string> fallback) {
  std::shared_ptr<MockProvider> p(new MockProvider(Mode::Lookup));
  p->table_ = std::move(table);
  p->contains_rules_ = std::move(contains_rules);
  p->fallback_ = std::move(fallback);
  return p;
}

std::shared_ptr<MockProvider> MockProvider::stub(StubFn fn) {
  std::shared_ptr<MockProvider> p(new MockProvider(Mode::Stub));
  p->stub_ = std::move(fn);
  return p;
}

MockResponse mock_response_from_json(const json& j) {
  if (j.is_string()) return MockResponse::ok(j.get<std::string>());
  if (!j.is_object()) throw Error("mock response must be a string or an object");
  MockResponse r;
  if (auto it = j.find("fail"); it != j.end()) {
    if (it->is_string() && it->get<std::string>() == "timeout") {
      r.fail_status = 408;
    } else {
      r.fail_status = it->get<int>();
    }
  }
  r.text = j.value("text", "");
  r.delay = std::chrono::milliseconds(j.value("delay_ms", 0));
  return r;
}

namespace {
std::vector<MockResponse> responses_from_json(const json& arr) {
  std::vector<MockResponse> out;
  for (const auto& r : arr) out.push_back(mock_response_from_json(r));
  return out;
}
}  // namespace

std::shared_ptr<MockProvider> MockProvider::from_json(const json& doc, const StubRegistry& stubs) {
  if (doc.is_array()) return playlist(responses_from_json(doc));
  const std::string mode = doc.value("mode", "playlist");
  const bool cycle = doc.value("cycle", false);
  if (mode == "playlist") {
    if (doc.contains("by_purpose")) {
      std::map<std::string, std::vector<MockResponse>> queues;
      for (const auto& [purpose, arr] : doc.at("by_purpose").items()) queues[purpose] = responses_from_json(arr);
      return by_purpose(std::move(queues), cycle);
    }
    return playlist(responses_from_json(doc.at("responses")), cycle);
  }
  if (mode == "lookup") {
    std::map<std::string, std::string> table;
    if (doc.contains("table")) {
      for (const auto& [k, v] : doc.at("table").items()) table[k] = v.get<std::string>();
    }
    std::vector<std::pair<std::string, std::string>> rules;
    if (doc.contains("contains")) {
      for (const auto& r : doc.at("contains")) {
        rules.emplace_back(r.at("match").get<std::string>(), r.at("response").get<std::string>());
      }
    }
    std::optional<std::string> fallback;
    if (doc.contains("default")) fallback = doc.at("default").get<std::string>();
    return lookup(std::move(table), std::move(rules), std::move(fallback));
  }
  if (mode == "stub") {
    const std::string name = doc.at("stub").get<std::string>();
    auto it = stubs.find(name);
    if (it == stubs.end()) throw Error("unknown mock stub '" + name + "'");
    return stub(it->second(doc.value("options", json::object())));
  }
  throw Error("unknown mock mode '" + mode + "'");
}

MockResponse MockProvider::next_response(const ChatRequest& request) {
  switch (mode_) {
    case Mode::Playlist: {
      if (cursor_ >= queue_.size()) {
        if (!cycle_ || queue_.empty()) throw ProviderUnavailable("mock playlist exhausted");
        cursor_ = 0;
      }
      return queue_[cursor_++];
    }
    case Mode::ByPurpose: {
      auto it = purpose_queues_.find(request.purpose);
      if (it == purpose_queues_.end()) throw ProviderUnavailable("mock has no playlist for purpose '" + request.purpose + "'");
      auto& cursor = purpose_cursors_[request.purpose];
      if (cursor >= it->second.size()) {
        if (!cycle_ || it->second.empty()) {
          throw ProviderUnavailable("mock playlist for '" + request.purpose + "' exhausted");
        }
        cursor = 0;
      }
      return it->second[cursor++];
    }
    case Mode::Lookup: {
      if (auto it = table_.find(request_key(request)); it != table_.end()) return MockResponse::ok(it->second);
      const ChatMessage* m = request.last_user_message();
      const std::string content = m ? m->content : std::string{};
      for (const auto& [needle, response] : contains_rules_) {
        if (content.find(needle) != std::string::npos) return MockResponse::ok(response);
      }
      if (fallback_) return MockResponse::ok(*fallback_);
      throw ProviderUnavailable("mock lookup has no entry for request " + request_key(request));
    }
    case Mode::Stub:
      break;
  }
  return {};
}

ProviderReply MockProvider::send(const ChatRequest& request) {
  MockResponse response;
  {
    std::lock_guard lock(mutex_);
    requests_.push_back(request);
    if (mode_ != Mode::Stub) response = next_response(request);
  }
  // Stubs run unlocked so a blocking stub cannot stall other sessions.
  if (mode_ == Mode::Stub) response = MockResponse::ok(stub_(request));

  if (response.delay.count() > 0) std::this_thread::sleep_for(response.delay);
  switch (response.fail_status) {
    case 0: break;
    case 401:
    case 403: throw AuthError("mock: HTTP " + std::to_string(response.fail_status));
    case 408: throw TransientFailure("mock: timeout", 408);
    default:
      if (response.fail_status == 429 || response.fail_status >= 500) {
        throw TransientFailure("mock: HTTP " + std::to_string(response.fail_status), response.fail_status);
      }
      throw ProviderUnavailable("mock: HTTP " + std::to_string(response.fail_status));
  }
  const auto words = static_cast<int>(text::word_count(response.text));
  return {std::move(response.text), {0, words}};
}

std::size_t MockProvider::calls() const {
  std::lock_guard lock(mutex_);
  return requests_.size();
}

std::size_t MockProvider::calls(std::string_view purpose) const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(requests_.begin(), requests_.end(), [&](const ChatRequest& r) { return r.purpose == purpose; }));
}

std::vector<ChatRequest> MockProvider::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

}  // namespace stagecraft::llm
