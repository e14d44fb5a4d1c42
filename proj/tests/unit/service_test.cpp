#include <gtest/gtest.h>

#include <future>
#include <thread>

#include "httplib.h"
#include "stagecraft/service.hpp"
#include "support/generation_fixtures.hpp"
#include "support/sessions.hpp"

namespace stagecraft::service {
namespace {

using nlohmann::json;
using llm::MockProvider;
using llm::MockResponse;
namespace fs = std::filesystem;

std::shared_ptr<llm::ChatProvider> walker(json options = json::object()) {
  return MockProvider::from_json({{"mode", "stub"}, {"stub", "plot-walker"}, {"options", options}},
                                 runtime::builtin_stubs());
}

std::shared_ptr<llm::ChatProvider> generation_mock() {
  auto doc = json::parse(testing::read_file(testing::fixture("generation/compliant_playlist.json")));
  doc["by_purpose"]["transformer"] = {testing::read_file(testing::fixture("generation/transform_flashback.txt"))};
  return MockProvider::from_json(doc);
}

ServiceConfig test_config(const std::string& name) {
  ServiceConfig c;
  c.data_dir = testing::scratch_dir(name);
  c.port = 0;
  return c;
}

std::unique_ptr<Service> make_service(const ServiceConfig& c, json walker_options = json::object()) {
  return std::make_unique<Service>(
      c, [walker_options] { return walker(walker_options); }, [] { return generation_mock(); });
}

TEST(Config, SectionsQuotesAndComments) {
  const auto kv = parse_config(
      "# service\nport = 9000\ntoken = \"a#b\"  # trailing\n\n[drama]\nprovider = mock\nmock_file = m.json\n"
      "[runtime]\narchitecture = director-actor\nreflection_period = none\n");
  EXPECT_EQ(kv.at("port"), "9000");
  EXPECT_EQ(kv.at("token"), "a#b");
  EXPECT_EQ(kv.at("drama.provider"), "mock");
  EXPECT_EQ(kv.at("runtime.reflection_period"), "none");

  const auto c = ServiceConfig::from_map(kv, "/etc/stagecraft");
  EXPECT_EQ(c.port, 9000);
  EXPECT_EQ(c.token, "a#b");
  EXPECT_EQ(c.drama.kind, llm::ProviderConfig::Kind::Mock);
  EXPECT_EQ(c.drama.mock_file, "/etc/stagecraft/m.json");
  EXPECT_EQ(c.generation.mock_file, c.drama.mock_file);
  EXPECT_EQ(c.architecture.kind, runtime::Architecture::DirectorActor);
  EXPECT_FALSE(c.architecture.reflection_period);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("[drama\n"), SchemaError);
  EXPECT_THROW(parse_config("just words\n"), SchemaError);
  EXPECT_THROW(ServiceConfig::from_map({{"colour", "blue"}}), SchemaError);
  EXPECT_THROW(ServiceConfig::from_map({{"port", "80x"}, {"drama.provider", "mock"}, {"drama.mock_file", "m"}}),
               SchemaError);
  EXPECT_THROW(ServiceConfig::from_map({{"drama.provider", "carrier-pigeon"}}), SchemaError);
  EXPECT_THROW(ServiceConfig::from_map({{"runtime.reflection_period", "0"}, {"drama.provider", "mock"},
                                        {"drama.mock_file", "m"}}),
               SchemaError);
  // http without an endpoint cannot work
  unsetenv("STAGECRAFT_ENDPOINT");
  EXPECT_THROW(ServiceConfig::from_map({}), Error);
}

TEST(Scripts, UploadIsContentAddressed) {
  auto svc = make_service(test_config("scripts"));
  const auto doc = json::parse(testing::read_file(testing::bundled_script_path()));
  const auto a = svc->upload_script(doc);
  const auto b = svc->upload_script(doc);
  EXPECT_EQ(a["script_id"], b["script_id"]);
  EXPECT_EQ(svc->get_script(a["script_id"])["script"]["title"], doc["title"]);
  EXPECT_EQ(svc->get_script("harrow_quay")["script"]["title"], doc["title"]);  // bundled
  EXPECT_THROW(svc->get_script("nope"), NotFound);
  EXPECT_THROW(svc->get_script("../../etc/passwd"), NotFound);
  auto bad = doc;
  bad["scenes"] = json::array();
  EXPECT_THROW(svc->upload_script(bad), SchemaError);
}

TEST(Sessions, CreateValidatesInput) {
  auto svc = make_service(test_config("create"));
  const auto h = svc->create_session({{"script_id", "harrow_quay"}, {"architecture", "one-for-all"}});
  EXPECT_EQ(h["architecture"]["kind"], "one-for-all");
  EXPECT_EQ(h["state"]["turn"], 0);
  EXPECT_EQ(h["state"]["scene"]["index"], 1);
  EXPECT_TRUE(fs::exists(svc->session_log_path(h["session_id"])));
  EXPECT_THROW(svc->create_session({{"script_id", "missing"}}), NotFound);
  EXPECT_THROW(svc->create_session({{"script_id", "harrow_quay"}, {"architecture", "orchestra"}}), SchemaError);
  EXPECT_THROW(svc->create_session({{"script_id", "harrow_quay"}, {"reflection_period", 0}}), SchemaError);
  EXPECT_THROW(svc->create_session(json::object()), SchemaError);
  const auto none = svc->create_session({{"script_id", "harrow_quay"}, {"reflection_period", nullptr}});
  EXPECT_TRUE(none["architecture"]["reflection_period"].is_null());
}

TEST(Sessions, PlayToTheEndThenConflict) {
  auto svc = make_service(test_config("play"));
  const std::string id = svc->create_session({{"script_id", "harrow_quay"}})["session_id"];
  json last;
  int banners = 0;
  for (int i = 0; i < 12; ++i) {
    last = svc->post_message(id, "line " + std::to_string(i));
    EXPECT_EQ(last["turn"], i + 1);
    ASSERT_EQ(last["messages"].size(), 2u);
    EXPECT_EQ(last["messages"][0]["speaker"], "Wren");
    banners += last.contains("scene");
  }
  EXPECT_TRUE(last["finished"]);
  EXPECT_EQ(banners, 2);
  EXPECT_THROW(svc->post_message(id, "again"), SessionFinished);

  const auto t = svc->transcript(id);
  EXPECT_EQ(t["messages"].size(), 24u);
  EXPECT_EQ(t["turns"].size(), 12u);
  EXPECT_EQ(t["scenes"].size(), 3u);
  EXPECT_EQ(t["state"]["status"], "finished");
}

TEST(Sessions, RestartReplaysEveryLog) {
  const auto cfg = test_config("resume");
  json reflection{{"reflection", "rewrite"}, {"complete", "scene_end"}, {"scene_turns", 7}};
  std::string id;
  runtime::Session before;
  json plots_before;
  {
    auto svc = make_service(cfg, reflection);
    id = svc->create_session({{"script_id", "harrow_quay"}})["session_id"];
    for (int i = 0; i < 9; ++i) svc->post_message(id, "line " + std::to_string(i));
    before = svc->session_state(id);
    plots_before = svc->plots(id);
  }
  auto svc = make_service(cfg, reflection);
  EXPECT_EQ(svc->session_state(id), before);
  EXPECT_EQ(svc->plots(id), plots_before);

  // The resumed session continues exactly as an uninterrupted one would.
  auto reference = make_service(test_config("resume-ref"), reflection);
  const std::string ref = reference->create_session({{"script_id", "harrow_quay"}})["session_id"];
  for (int i = 0; i < 9; ++i) reference->post_message(ref, "line " + std::to_string(i));
  const auto a = svc->post_message(id, "line 9");
  const auto b = reference->post_message(ref, "line 9");
  EXPECT_EQ(a["record"], b["record"]);
  EXPECT_EQ(a["messages"], b["messages"]);
}

TEST(Sessions, TornLogLineIsDroppedOnRestart) {
  const auto cfg = test_config("torn");
  std::string id;
  runtime::Session after_two;
  {
    auto svc = make_service(cfg);
    id = svc->create_session({{"script_id", "harrow_quay"}})["session_id"];
    svc->post_message(id, "one");
    svc->post_message(id, "two");
    after_two = svc->session_state(id);
  }
  std::ofstream(cfg.data_dir / "sessions" / (id + ".jsonl"), std::ios::app) << "{\"event\":\"turn\",\"rec";
  auto svc = make_service(cfg);
  EXPECT_EQ(svc->session_state(id), after_two);
  svc->post_message(id, "three");
  const auto after_three = svc->session_state(id);
  svc.reset();
  EXPECT_EQ(make_service(cfg)->session_state(id), after_three);
}

TEST(Sessions, IdempotencyKeyReturnsFirstResult) {
  const auto cfg = test_config("idem");
  auto svc = make_service(cfg);
  const std::string id = svc->create_session({{"script_id", "harrow_quay"}})["session_id"];
  const auto a = svc->post_message(id, "hello", "k1");
  const auto b = svc->post_message(id, "hello", "k1");
  EXPECT_EQ(a, b);
  EXPECT_EQ(svc->session_state(id).turn, 1);
  svc.reset();
  auto again = make_service(cfg);
  EXPECT_EQ(again->post_message(id, "hello", "k1"), a);
  EXPECT_EQ(again->post_message(id, "hello", "k2")["turn"], 2);
}

TEST(Sessions, FailedTurnIsLoggedAndStateKept) {
  auto cfg = test_config("failed");
  auto svc = std::make_unique<Service>(
      cfg, [] { return MockProvider::playlist({MockResponse::ok("gibberish"), MockResponse::ok("more gibberish")}); },
      [] { return generation_mock(); });
  const std::string id = svc->create_session({{"script_id", "harrow_quay"}, {"architecture", "one-for-all"}})["session_id"];
  EXPECT_THROW(svc->post_message(id, "hi"), TurnFailed);
  EXPECT_EQ(svc->session_state(id).turn, 0);
  const auto t = svc->transcript(id);
  ASSERT_EQ(t["turns"].size(), 1u);
  EXPECT_TRUE(t["turns"][0]["failed"]);
}

// Lets the first call through only when released.
class GateProvider : public llm::ChatProvider {
 public:
  explicit GateProvider(std::shared_ptr<llm::ChatProvider> inner) : inner_(std::move(inner)) {}
  llm::ProviderReply send(const llm::ChatRequest& r) override {
    std::unique_lock lock(m_);
    ++entered_;
    cv_.notify_all();
    cv_.wait(lock, [&] { return open_; });
    lock.unlock();
    return inner_->send(r);
  }
  std::string tag() const override { return "gate"; }
  void wait_entered(int n) {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return entered_ >= n; });
  }
  int entered() {
    std::lock_guard lock(m_);
    return entered_;
  }
  void open() {
    std::lock_guard lock(m_);
    open_ = true;
    cv_.notify_all();
  }

 private:
  std::shared_ptr<llm::ChatProvider> inner_;
  std::mutex m_;
  std::condition_variable cv_;
  int entered_ = 0;
  bool open_ = false;
};

TEST(Concurrency, SimultaneousPostsAreServedInArrivalOrder) {
  auto gate = std::make_shared<GateProvider>(walker({{"complete", "never"}}));
  Service svc(test_config("race"), [gate] { return gate; }, [] { return generation_mock(); });
  const std::string id = svc.create_session({{"script_id", "harrow_quay"}})["session_id"];

  auto first = std::async(std::launch::async, [&] { return svc.post_message(id, "first"); });
  gate->wait_entered(1);
  auto second = std::async(std::launch::async, [&] { return svc.post_message(id, "second"); });
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  EXPECT_EQ(gate->entered(), 1);  // the second post is queued, not calling
  gate->open();
  const auto a = first.get();
  const auto b = second.get();
  EXPECT_EQ(a["turn"], 1);
  EXPECT_EQ(b["turn"], 2);
  EXPECT_EQ(a["record"]["player_input"], "first");
  EXPECT_EQ(b["record"]["player_input"], "second");
  EXPECT_EQ(svc.session_state(id).turn, 2);
}

TEST(Concurrency, NPostsAdvanceExactlyNTurns) {
  Service svc(test_config("n-posts"), [] { return walker({{"complete", "never"}}); }, [] { return generation_mock(); });
  const std::string id = svc.create_session({{"script_id", "harrow_quay"}})["session_id"];
  constexpr int kPosts = 16;
  std::vector<std::future<json>> posts;
  for (int i = 0; i < kPosts; ++i) {
    posts.push_back(std::async(std::launch::async, [&, i] { return svc.post_message(id, "m" + std::to_string(i)); }));
  }
  std::set<int> turns;
  for (auto& f : posts) turns.insert(f.get()["turn"].get<int>());
  EXPECT_EQ(turns.size(), static_cast<std::size_t>(kPosts));
  EXPECT_EQ(*turns.rbegin(), kPosts);
  EXPECT_EQ(svc.session_state(id).turn, kPosts);
  EXPECT_EQ(runtime::replay(runtime::read_event_log(testing::read_file(svc.session_log_path(id)))).turn, kPosts);
}

TEST(Jobs, MockPipelineProducesPlayableScript) {
  auto svc = make_service(test_config("jobs"));
  const auto submitted = svc->submit_generation({{"premise", testing::fixture_premise().text}, {"seed", 7}});
  EXPECT_EQ(submitted["state"], "queued");
  EXPECT_TRUE(submitted["warnings"].empty());
  svc->wait_for_jobs();
  const auto job = svc->job(submitted["job_id"]);
  ASSERT_EQ(job["state"], "done") << job.dump();
  EXPECT_EQ(job["report"]["selections"].size(), 3u);
  const auto script = svc->get_script(job["script_id"]);
  EXPECT_EQ(script["script"]["scenes"].size(), 3u);
  EXPECT_NO_THROW(svc->create_session({{"script_id", job["script_id"]}}));
}

TEST(Jobs, FailureKeepsReportAndShortPremiseWarns) {
  Service svc(test_config("jobs-fail"), [] { return walker(); },
              [] { return MockProvider::playlist({MockResponse::failure(401)}); });
  const auto submitted = svc.submit_generation({{"premise", "A lighthouse keeper vanishes one night."}});
  EXPECT_EQ(submitted["warnings"].size(), 1u);
  svc.wait_for_jobs();
  const auto job = svc.job(submitted["job_id"]);
  EXPECT_EQ(job["state"], "failed");
  EXPECT_FALSE(job.value("error", "").empty());
  EXPECT_TRUE(job.contains("report"));
  EXPECT_THROW(svc.submit_generation({{"premise", "   "}}), SchemaError);
  EXPECT_THROW(svc.job("j-none"), NotFound);
}

// HTTP -------------------------------------------------------------------------------

struct Running {
  std::unique_ptr<Service> svc;
  std::thread thread;
  explicit Running(ServiceConfig c, json options = json::object()) : svc(make_service(c, options)) {
    thread = std::thread([this] { svc->listen(); });
    if (!svc->wait_until_listening(std::chrono::seconds(5))) throw std::runtime_error("server did not start");
  }
  ~Running() {
    svc->stop();
    thread.join();
  }
  httplib::Client client(std::optional<std::string> token = "secret") const {
    httplib::Client c("127.0.0.1", svc->bound_port());
    if (token) c.set_bearer_token_auth(*token);
    c.set_read_timeout(10, 0);
    return c;
  }
};

ServiceConfig with_token(ServiceConfig c) {
  c.token = "secret";
  return c;
}

TEST(Http, BearerTokenRequired) {
  Running r(with_token(test_config("http-auth")));
  auto anon = r.client(std::nullopt);
  EXPECT_EQ(anon.Get("/health")->status, 200);
  EXPECT_EQ(anon.Post("/sessions", R"({"script_id":"harrow_quay"})", "application/json")->status, 401);
  auto wrong = r.client("nope");
  EXPECT_EQ(wrong.Get("/scripts/harrow_quay")->status, 401);
  EXPECT_EQ(r.client().Get("/scripts/harrow_quay")->status, 200);
}

TEST(Http, EndpointsAndStatusCodes) {
  Running r(with_token(test_config("http-flow")));
  auto c = r.client();
  const auto script = testing::read_file(testing::bundled_script_path());
  auto up = c.Post("/scripts", script, "application/json");
  ASSERT_EQ(up->status, 201);
  const auto script_id = json::parse(up->body)["script_id"].get<std::string>();
  EXPECT_EQ(c.Get("/scripts/" + script_id)->status, 200);
  EXPECT_EQ(c.Get("/scripts/unknown")->status, 404);
  EXPECT_EQ(c.Post("/scripts", "{not json", "application/json")->status, 400);

  EXPECT_EQ(c.Post("/sessions", R"({"script_id":"unknown"})", "application/json")->status, 404);
  EXPECT_EQ(c.Post("/sessions", json{{"script_id", script_id}, {"architecture", "solo"}}.dump(), "application/json")
                ->status,
            400);
  auto created = c.Post("/sessions", json{{"script_id", script_id}}.dump(), "application/json");
  ASSERT_EQ(created->status, 201);
  const auto id = json::parse(created->body)["session_id"].get<std::string>();

  EXPECT_EQ(c.Post("/sessions/" + id + "/message", R"({"txt":"hi"})", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/sessions/nope/message", R"({"text":"hi"})", "application/json")->status, 404);
  json last;
  for (int i = 0; i < 12; ++i) {
    auto res = c.Post("/sessions/" + id + "/message", json{{"text", "hi"}}.dump(), "application/json");
    ASSERT_EQ(res->status, 200) << res->body;
    last = json::parse(res->body);
  }
  EXPECT_TRUE(last["finished"]);
  EXPECT_EQ(c.Post("/sessions/" + id + "/message", R"({"text":"hi"})", "application/json")->status, 409);

  auto transcript = json::parse(c.Get("/sessions/" + id + "/transcript")->body);
  EXPECT_EQ(transcript["messages"].size(), 24u);
  auto plots = json::parse(c.Get("/sessions/" + id + "/plots")->body);
  EXPECT_EQ(plots["status"], "finished");
  EXPECT_EQ(plots["plots"].size(), 4u);

  auto gen = c.Post("/generate", json{{"premise", testing::fixture_premise().text}}.dump(), "application/json");
  ASSERT_EQ(gen->status, 202);
  r.svc->wait_for_jobs();
  auto job = json::parse(c.Get("/generate/" + json::parse(gen->body)["job_id"].get<std::string>())->body);
  EXPECT_EQ(job["state"], "done");
  EXPECT_EQ(c.Post("/generate", R"({"premise":""})", "application/json")->status, 400);
  EXPECT_EQ(c.Get("/generate/jmissing")->status, 404);
}

TEST(Http, TurnFailureIs502AndReplayable) {
  auto cfg = with_token(test_config("http-502"));
  cfg.drama.retry.backoff_base = std::chrono::milliseconds(1);
  auto outage = std::make_shared<std::atomic<bool>>(true);
  auto svc = std::make_unique<Service>(
      cfg,
      [outage] {
        auto healthy = walker();
        return MockProvider::stub([outage, healthy](const llm::ChatRequest& req) -> std::string {
          if (*outage) throw llm::TransientFailure("upstream down", 503);
          return healthy->send(req).text;
        });
      },
      [] { return generation_mock(); });
  std::thread t([&] { svc->listen(); });
  ASSERT_TRUE(svc->wait_until_listening(std::chrono::seconds(5)));
  httplib::Client c("127.0.0.1", svc->bound_port());
  c.set_bearer_token_auth("secret");
  const auto id =
      json::parse(c.Post("/sessions", R"({"script_id":"harrow_quay"})", "application/json")->body)["session_id"]
          .get<std::string>();
  auto res = c.Post("/sessions/" + id + "/message", R"({"text":"hi"})", "application/json");
  ASSERT_EQ(res->status, 502);
  const auto body = json::parse(res->body);
  EXPECT_TRUE(body["replayable"]);
  EXPECT_TRUE(body["provider_failure"]);
  EXPECT_EQ(svc->session_state(id).turn, 0);
  *outage = false;
  res = c.Post("/sessions/" + id + "/message", R"({"text":"hi"})", "application/json");
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["turn"], 1);
  svc->stop();
  t.join();
}

TEST(Http, StreamDeliversTurnsAsServerSentEvents) {
  Running r(with_token(test_config("http-sse")));
  auto c = r.client();
  const auto id = json::parse(c.Post("/sessions", R"({"script_id":"harrow_quay"})", "application/json")->body)
                      ["session_id"]
                          .get<std::string>();
  auto reader = std::async(std::launch::async, [&] {
    auto sc = r.client();
    std::string received;
    sc.Get("/sessions/" + id + "/stream", [&](const char* data, std::size_t n) {
      received.append(data, n);
      return received.find("event: end") == std::string::npos;
    });
    return received;
  });
  for (int i = 0; i < 12; ++i) c.Post("/sessions/" + id + "/message", R"({"text":"go"})", "application/json");
  ASSERT_EQ(reader.wait_for(std::chrono::seconds(20)), std::future_status::ready);
  const auto body = reader.get();
  std::size_t turns = 0;
  for (std::size_t p = body.find("event: turn"); p != std::string::npos; p = body.find("event: turn", p + 1)) ++turns;
  EXPECT_EQ(turns, 12u);
  EXPECT_NE(body.find("\"utterance\""), std::string::npos);
  EXPECT_NE(body.find("event: end"), std::string::npos);
}

}  // namespace
}  // namespace stagecraft::service
