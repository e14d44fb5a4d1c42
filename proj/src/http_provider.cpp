#include <regex>

#include "httplib.h"
#include "stagecraft/llm.hpp"

namespace stagecraft::llm {

using nlohmann::json;

namespace {

std::string ends_with_completions(std::string path) {
  while (!path.empty() && path.back() == '/') path.pop_back();
  constexpr std::string_view kSuffix = "/chat/completions";
  if (path.size() >= kSuffix.size() && path.compare(path.size() - kSuffix.size(), kSuffix.size(), kSuffix) == 0) {
    return path;
  }
  if (path.size() >= 3 && path.compare(path.size() - 3, 3, "/v1") == 0) return path + std::string(kSuffix);
  return path + "/v1" + std::string(kSuffix);
}

}  // namespace

HttpProvider::HttpProvider(std::string endpoint, std::string model, std::string api_key, std::chrono::seconds timeout)
    : model_(std::move(model)), api_key_(std::move(api_key)), timeout_(timeout) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint, m, kUrl)) throw Error("invalid endpoint URL '" + endpoint + "'");
  base_url_ = m[1].str();
  path_ = ends_with_completions(m[2].matched ? m[2].str() : std::string{});
}

json HttpProvider::request_body(const ChatRequest& request) const {
  json messages = json::array();
  for (const auto& msg : request.messages) messages.push_back({{"role", to_string(msg.role)}, {"content", msg.content}});
  json body = {{"model", model_},
               {"messages", messages},
               {"temperature", request.params.temperature},
               {"max_tokens", request.params.max_tokens}};
  if (request.params.seed) body["seed"] = *request.params.seed;
  return body;
}

ProviderReply HttpProvider::send(const ChatRequest& request) {
  httplib::Client client(base_url_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto res = client.Post(path_, headers, request_body(request).dump(), "application/json");
  if (!res) {
    throw TransientFailure("http transport error: " + httplib::to_string(res.error()), 0);
  }
  const int status = res->status;
  if (status == 401 || status == 403) throw AuthError("provider rejected credentials (HTTP " + std::to_string(status) + ")");
  if (status == 429 || status >= 500) throw TransientFailure("provider returned HTTP " + std::to_string(status), status);
  if (status != 200) throw ProviderUnavailable("provider returned HTTP " + std::to_string(status) + ": " + res->body);

  json doc;
  try {
    doc = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw TransientFailure(std::string("unparsable provider response: ") + e.what(), status);
  }
  ProviderReply reply;
  try {
    const auto& content = doc.at("choices").at(0).at("message").at("content");
    reply.text = content.is_string() ? content.get<std::string>() : std::string{};
  } catch (const json::exception&) {
    throw TransientFailure("provider response lacks choices[0].message.content", status);
  }
  if (auto usage = doc.find("usage"); usage != doc.end() && usage->is_object()) {
    reply.tokens.prompt = usage->value("prompt_tokens", 0);
    reply.tokens.completion = usage->value("completion_tokens", 0);
  }
  return reply;
}

}  // namespace stagecraft::llm
