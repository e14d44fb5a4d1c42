#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "httplib.h"
#include "stagecraft/llm.hpp"

namespace stagecraft::llm {
namespace {

ChatRequest request(std::string purpose = "writer", std::string user = "hi") {
  return {std::move(purpose), {{Role::System, "sys"}, {Role::User, std::move(user)}}, {}};
}

Gateway gateway_for(std::shared_ptr<ChatProvider> p, int max_attempts = 3) {
  RetryPolicy policy;
  policy.max_attempts = max_attempts;
  Gateway g(std::move(p), policy);
  g.set_sleeper([](std::chrono::milliseconds) {});
  return g;
}

TEST(Gateway, MockPassthroughLogsOnce) {
  auto mock = MockProvider::playlist({MockResponse::ok("hello")});
  auto g = gateway_for(mock);
  const auto c = g.complete(request());
  EXPECT_EQ(c.text, "hello");
  EXPECT_EQ(g.log().size(), 1u);
  EXPECT_EQ(mock->calls(), 1u);
}

TEST(Gateway, RetriesTransientFailuresThenSucceeds) {
  auto mock = MockProvider::playlist({MockResponse::failure(503), MockResponse::failure(429), MockResponse::ok("ok")});
  auto g = gateway_for(mock, 3);
  std::vector<std::chrono::milliseconds> sleeps;
  g.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  const auto c = g.complete(request());
  EXPECT_EQ(c.text, "ok");
  EXPECT_EQ(c.exchange.attempt, 3);
  EXPECT_EQ(mock->calls(), 3u);
  const auto log = g.log().snapshot();
  ASSERT_EQ(log.size(), 3u);
  EXPECT_TRUE(log[0].error.has_value());
  EXPECT_TRUE(log[1].error.has_value());
  EXPECT_FALSE(log[2].error.has_value());
  EXPECT_EQ(g.log().successes(), 1u);
  // Exponential backoff: second wait is at least the doubled base.
  ASSERT_EQ(sleeps.size(), 2u);
  EXPECT_GE(sleeps[0], g.policy().backoff_base);
  EXPECT_GE(sleeps[1], 2 * g.policy().backoff_base);
}

TEST(Gateway, ExhaustedRetriesRaiseProviderUnavailable) {
  auto mock = MockProvider::playlist(
      {MockResponse::failure(500), MockResponse::failure(500), MockResponse::failure(500), MockResponse::failure(500)});
  auto g = gateway_for(mock, 3);
  EXPECT_THROW(g.complete(request()), ProviderUnavailable);
  EXPECT_EQ(mock->calls(), 3u);
}

TEST(Gateway, AuthErrorsAreNeverRetried) {
  auto mock = MockProvider::playlist({MockResponse::failure(401), MockResponse::ok("late")});
  auto g = gateway_for(mock, 3);
  EXPECT_THROW(g.complete(request()), AuthError);
  EXPECT_EQ(mock->calls(), 1u);
}

TEST(Gateway, EmptyCompletionsBecomeContractError) {
  auto mock = MockProvider::playlist({MockResponse::ok(""), MockResponse::ok("   "), MockResponse::ok("\n")});
  auto g = gateway_for(mock, 3);
  EXPECT_THROW(g.complete(request()), ContractError);
}

TEST(Gateway, TimeoutIsTransient) {
  auto mock = MockProvider::playlist({MockResponse::failure(408), MockResponse::ok("fine")});
  auto g = gateway_for(mock, 2);
  EXPECT_EQ(g.complete(request()).text, "fine");
}

TEST(MockProvider, PurposeQueues) {
  auto mock = MockProvider::by_purpose({{"writer", {MockResponse::ok("w1"), MockResponse::ok("w2")}},
                                        {"critic", {MockResponse::ok("c1")}}});
  auto g = gateway_for(mock);
  EXPECT_EQ(g.complete(request("writer")).text, "w1");
  EXPECT_EQ(g.complete(request("critic")).text, "c1");
  EXPECT_EQ(g.complete(request("writer")).text, "w2");
  EXPECT_THROW(g.complete(request("critic")), ProviderUnavailable);
  EXPECT_EQ(mock->calls("writer"), 2u);
}

TEST(MockProvider, LookupByHashAndSubstring) {
  const auto key = request_key(request("x", "exact question"));
  auto mock = MockProvider::lookup({{key, "hashed"}}, {{"note", "about the note"}}, "fallback");
  auto g = gateway_for(mock);
  EXPECT_EQ(g.complete(request("x", "exact question")).text, "hashed");
  EXPECT_EQ(g.complete(request("x", "who wrote the note?")).text, "about the note");
  EXPECT_EQ(g.complete(request("x", "anything")).text, "fallback");
}

TEST(MockProvider, FromJsonFormats) {
  auto flat = MockProvider::from_json(nlohmann::json::parse(R"(["a", {"fail": 503}, {"text": "b"}])"));
  auto g = gateway_for(flat);
  EXPECT_EQ(g.complete(request()).text, "a");
  EXPECT_EQ(g.complete(request()).text, "b");

  StubRegistry stubs{{"echo", [](const nlohmann::json& opts) {
                        const std::string prefix = opts.value("prefix", "");
                        return StubFn([prefix](const ChatRequest& r) { return prefix + r.last_user_message()->content; });
                      }}};
  auto stub = MockProvider::from_json(nlohmann::json::parse(R"({"mode":"stub","stub":"echo","options":{"prefix":">"}})"),
                                      stubs);
  auto g2 = gateway_for(stub);
  EXPECT_EQ(g2.complete(request("p", "yo")).text, ">yo");
  EXPECT_THROW(MockProvider::from_json(nlohmann::json::parse(R"({"mode":"stub","stub":"nope"})")), Error);

  auto cyc = MockProvider::from_json(nlohmann::json::parse(R"({"mode":"playlist","cycle":true,"responses":["x"]})"));
  auto g3 = gateway_for(cyc);
  EXPECT_EQ(g3.complete(request()).text, "x");
  EXPECT_EQ(g3.complete(request()).text, "x");
}

TEST(ProviderConfig, EndpointRequiredIffHttp) {
  ProviderConfig http;
  EXPECT_THROW(http.validate(), Error);
  http.endpoint = "http://localhost:1";
  EXPECT_NO_THROW(http.validate());

  ProviderConfig mock;
  mock.kind = ProviderConfig::Kind::Mock;
  mock.mock_file = "x.json";
  EXPECT_NO_THROW(mock.validate());
  mock.endpoint = "http://localhost:1";
  EXPECT_THROW(mock.validate(), Error);
}

TEST(HttpProvider, PathResolution) {
  EXPECT_EQ(HttpProvider("http://h:1", "m", "", std::chrono::seconds(1)).path(), "/v1/chat/completions");
  EXPECT_EQ(HttpProvider("http://h:1/v1", "m", "", std::chrono::seconds(1)).path(), "/v1/chat/completions");
  EXPECT_EQ(HttpProvider("https://h/api/v1/chat/completions", "m", "", std::chrono::seconds(1)).path(),
            "/api/v1/chat/completions");
  EXPECT_EQ(HttpProvider("https://h/api/v1/chat/completions", "m", "", std::chrono::seconds(1)).base_url(),
            "https://h");
  EXPECT_THROW(HttpProvider("ftp://nope", "m", "", std::chrono::seconds(1)), Error);
}

// A local OpenAI-compatible server; the loopback interface is the only
// network the suite touches.
class FakeOpenAI {
 public:
  FakeOpenAI() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_body = nlohmann::json::parse(req.body);
      last_auth = req.get_header_value("Authorization");
      const int n = ++hits;
      if (n <= fail_first) {
        res.status = fail_status;
        return;
      }
      nlohmann::json out = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "served"}}}}}},
                            {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 3}}}};
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeOpenAI() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::atomic<int> hits{0};
  int fail_first = 0;
  int fail_status = 503;
  nlohmann::json last_body;
  std::string last_auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST(HttpProvider, SendsOpenAIBodyAndParsesReply) {
  FakeOpenAI fake;
  auto provider = std::make_shared<HttpProvider>(fake.url(), "test-model", "sekret", std::chrono::seconds(5));
  auto g = gateway_for(provider);
  auto req = request("director", "hello there");
  req.params.temperature = 0.2;
  req.params.seed = 7;
  const auto c = g.complete(req);
  EXPECT_EQ(c.text, "served");
  EXPECT_EQ(c.exchange.tokens.prompt, 11);
  EXPECT_EQ(fake.last_body["model"], "test-model");
  EXPECT_EQ(fake.last_body["messages"][1]["content"], "hello there");
  EXPECT_EQ(fake.last_body["messages"][0]["role"], "system");
  EXPECT_DOUBLE_EQ(fake.last_body["temperature"].get<double>(), 0.2);
  EXPECT_EQ(fake.last_body["seed"], 7);
  EXPECT_FALSE(fake.last_body.contains("purpose"));
  EXPECT_EQ(fake.last_auth, "Bearer sekret");
}

TEST(HttpProvider, RetriesOn429AndFailsFastOn401) {
  FakeOpenAI fake;
  fake.fail_first = 2;
  fake.fail_status = 429;
  auto g = gateway_for(std::make_shared<HttpProvider>(fake.url(), "m", "", std::chrono::seconds(5)), 3);
  EXPECT_EQ(g.complete(request()).text, "served");
  EXPECT_EQ(fake.hits.load(), 3);

  FakeOpenAI denied;
  denied.fail_first = 100;
  denied.fail_status = 401;
  auto g2 = gateway_for(std::make_shared<HttpProvider>(denied.url(), "m", "", std::chrono::seconds(5)), 3);
  EXPECT_THROW(g2.complete(request()), AuthError);
  EXPECT_EQ(denied.hits.load(), 1);
}

TEST(HttpProvider, ConnectionRefusedIsTransientThenUnavailable) {
  auto g = gateway_for(std::make_shared<HttpProvider>("http://127.0.0.1:9", "m", "", std::chrono::seconds(1)), 2);
  EXPECT_THROW(g.complete(request()), ProviderUnavailable);
  EXPECT_EQ(g.log().size(), 2u);
}

}  // namespace
}  // namespace stagecraft::llm
