#include "stagecraft/service.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

#include "httplib.h"
#include "stagecraft/generation.hpp"
#include "stagecraft/playbook.hpp"
#include "stagecraft/text.hpp"

namespace stagecraft::service {

using nlohmann::json;
namespace fs = std::filesystem;

// Config ---------------------------------------------------------------------------

std::map<std::string, std::string> parse_config(std::string_view text) {
  std::map<std::string, std::string> out;
  std::string section;
  int line_no = 0;
  for (const auto& raw : text::split_lines(text)) {
    ++line_no;
    std::string line = raw;
    // A '#' inside quotes is part of the value.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = text::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw SchemaError("config line " + std::to_string(line_no) + ": unclosed section");
      section = text::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw SchemaError("config line " + std::to_string(line_no) + ": expected key = value");
    auto key = text::trim(line.substr(0, eq));
    auto value = text::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw SchemaError("config line " + std::to_string(line_no) + ": empty key");
    out[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

namespace {

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int n = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw SchemaError("config key '" + key + "' must be an integer, got '" + v + "'");
  }
}

llm::ProviderConfig provider_from(const std::map<std::string, std::string>& kv, const std::string& section,
                                  const fs::path& base) {
  auto get = [&](const std::string& k) -> std::optional<std::string> {
    auto it = kv.find(section + "." + k);
    if (it == kv.end()) return std::nullopt;
    return it->second;
  };
  auto c = llm::ProviderConfig::from_env();
  const auto provider = get("provider").value_or("http");
  if (provider == "mock") {
    c.kind = llm::ProviderConfig::Kind::Mock;
    c.endpoint.clear();
    fs::path f = get("mock_file").value_or("");
    if (!f.empty() && f.is_relative() && !base.empty()) f = base / f;
    c.mock_file = f.string();
  } else if (provider != "http") {
    throw SchemaError("[" + section + "] provider must be 'mock' or 'http'");
  }
  if (auto v = get("endpoint")) c.endpoint = *v;
  if (auto v = get("model")) c.model = *v;
  if (auto v = get("api_key_env")) c.api_key_env = *v;
  if (auto v = get("timeout_s")) c.timeout = std::chrono::seconds(to_int(section + ".timeout_s", *v));
  if (auto v = get("max_attempts")) c.retry.max_attempts = to_int(section + ".max_attempts", *v);
  return c;
}

}  // namespace

ServiceConfig ServiceConfig::from_map(const std::map<std::string, std::string>& kv, const fs::path& base) {
  static const std::set<std::string> kKnown = {
      "data_dir",           "host",           "port",                    "token",
      "token_env",          "runtime.architecture", "runtime.reflection_period", "runtime.reflection_budget",
      "runtime.memory_window"};
  for (const auto& [k, v] : kv) {
    const bool provider_key = k.rfind("drama.", 0) == 0 || k.rfind("generation.", 0) == 0;
    if (!provider_key && !kKnown.contains(k)) throw SchemaError("unknown config key '" + k + "'");
  }
  ServiceConfig c;
  if (auto it = kv.find("data_dir"); it != kv.end()) {
    c.data_dir = it->second;
    if (c.data_dir.is_relative() && !base.empty()) c.data_dir = base / c.data_dir;
  }
  if (auto it = kv.find("host"); it != kv.end()) c.host = it->second;
  if (auto it = kv.find("port"); it != kv.end()) c.port = to_int("port", it->second);
  if (auto it = kv.find("token"); it != kv.end() && !it->second.empty()) c.token = it->second;
  if (auto it = kv.find("token_env"); it != kv.end()) {
    const char* t = std::getenv(it->second.c_str());
    if (!t || !*t) throw SchemaError("token_env names '" + it->second + "', which is not set");
    c.token = t;
  }
  c.drama = provider_from(kv, "drama", base);
  c.generation = kv.contains("generation.provider") ? provider_from(kv, "generation", base) : c.drama;
  if (auto it = kv.find("runtime.architecture"); it != kv.end()) {
    auto a = runtime::parse_architecture(it->second);
    if (!a) throw SchemaError("unknown architecture '" + it->second + "'");
    c.architecture.kind = *a;
  }
  if (auto it = kv.find("runtime.reflection_period"); it != kv.end()) {
    if (it->second == "none") {
      c.architecture.reflection_period.reset();
    } else {
      const int k = to_int("runtime.reflection_period", it->second);
      if (k <= 0) throw SchemaError("runtime.reflection_period must be positive or 'none'");
      c.architecture.reflection_period = k;
    }
  }
  if (auto it = kv.find("runtime.reflection_budget"); it != kv.end()) {
    c.architecture.reflection_budget = to_int("runtime.reflection_budget", it->second);
  }
  if (auto it = kv.find("runtime.memory_window"); it != kv.end()) {
    c.memory_window = static_cast<std::size_t>(to_int("runtime.memory_window", it->second));
  }
  c.drama.validate();
  c.generation.validate();
  return c;
}

ServiceConfig ServiceConfig::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_map(parse_config(ss.str()), file.parent_path());
}

std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "?";
}

// Internals --------------------------------------------------------------------------

struct Service::Slot {
  std::string script_id;
  fs::path log_path;

  // Turn queue: tickets are served in the order they were taken.
  std::mutex queue_mutex;
  std::condition_variable queue_cv;
  std::uint64_t next_ticket = 0;
  std::uint64_t serving = 0;

  // Committed state, read by transcript/plots/stream.
  std::mutex state_mutex;
  std::condition_variable state_cv;
  runtime::Session session;
  std::vector<json> events;               // the log, session_started first
  std::map<std::string, json> by_key;     // idempotency key -> turn event
};

struct Service::Job {
  std::string id;
  std::string premise;
  std::uint64_t seed = 0;
  JobState state = JobState::Queued;
  std::optional<std::string> script_id;
  std::optional<std::string> error;
  json report;
  std::vector<std::string> warnings;
};

namespace {

std::string random_id(std::string_view prefix) {
  static std::mutex m;
  static std::mt19937_64 rng(std::random_device{}());
  std::lock_guard lock(m);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return std::string(prefix) + buf;
}

// Ids become file names, so only a safe alphabet is accepted.
void check_id(const std::string& id, std::string_view what) {
  const bool ok = !id.empty() && id.size() <= 80 && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
  if (!ok) throw NotFound("no " + std::string(what) + " '" + id + "'");
}

void append_line(const fs::path& path, const json& event) {
  const std::string line = event.dump() + "\n";
  std::FILE* f = std::fopen(path.c_str(), "a");
  if (!f) throw Error("cannot open " + path.string() + " for append");
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0 &&
                  ::fsync(fileno(f)) == 0;
  std::fclose(f);
  if (!ok) throw Error("failed to append to " + path.string());
}

void write_atomic(const fs::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error("cannot write " + tmp);
  }
  fs::rename(tmp, path);
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json turn_response(const std::string& session_id, const json& turn_event) {
  const auto& record = turn_event.at("record");
  const auto status = turn_event.at("state").at("status").get<std::string>();
  json out = {{"session_id", session_id},
              {"turn", record.at("turn")},
              {"messages", turn_event.at("memory")},
              {"record", record},
              {"status", status},
              {"finished", status == "finished"}};
  if (record.contains("next_scene")) out["scene"] = record["next_scene"];
  return out;
}

json handle_json(const runtime::Session& s, const std::string& script_id) {
  return {{"session_id", s.id},
          {"script_id", script_id},
          {"created_at", s.created_at},
          {"architecture", runtime::to_json(s.architecture)},
          {"state", runtime::state_json(s)}};
}

}  // namespace

Service::Service(ServiceConfig config, ProviderFactory drama, ProviderFactory generation)
    : config_(std::move(config)),
      drama_factory_(std::move(drama)),
      generation_factory_(std::move(generation)),
      server_(std::make_unique<httplib::Server>()) {
  if (!drama_factory_) {
    auto cfg = config_.drama;
    drama_factory_ = [cfg] { return llm::make_provider(cfg, runtime::builtin_stubs()); };
  }
  if (!generation_factory_) {
    auto cfg = config_.generation;
    generation_factory_ = [cfg] { return llm::make_provider(cfg, runtime::builtin_stubs()); };
  }
  for (const auto* sub : {"scripts", "sessions", "jobs"}) fs::create_directories(config_.data_dir / sub);
  drama_provider_ = drama_factory_();
  drama_gateway_ = std::make_unique<llm::Gateway>(drama_provider_, config_.drama.retry);
}

Service::~Service() {
  stop();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mutex_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

fs::path Service::session_log_path(const std::string& id) const {
  return config_.data_dir / "sessions" / (id + ".jsonl");
}

// Sessions are loaded lazily: the first request after a restart replays the log.
std::shared_ptr<Service::Slot> Service::slot(const std::string& id) {
  check_id(id, "session");
  std::lock_guard lock(mutex_);
  if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
  const auto path = session_log_path(id);
  if (!fs::exists(path)) throw NotFound("no session '" + id + "'");
  auto s = std::make_shared<Slot>();
  s->log_path = path;
  auto content = read_all(path);
  if (!content.empty() && content.back() != '\n') {
    // A crash mid-append left a partial line; later appends must not follow it.
    content.resize(content.rfind('\n') == std::string::npos ? 0 : content.rfind('\n') + 1);
    fs::resize_file(path, content.size());
  }
  s->events = runtime::read_event_log(content);
  s->session = runtime::replay(s->events);
  s->script_id = s->events.front().value("script_id", "");
  for (const auto& ev : s->events) {
    if (ev.value("event", "") == "turn" && ev.contains("idempotency_key")) s->by_key[ev["idempotency_key"]] = ev;
  }
  sessions_[id] = s;
  return s;
}

DramaScript Service::load_script(const std::string& id) {
  check_id(id, "script");
  for (const auto& dir : {config_.data_dir / "scripts", data_dir() / "scripts"}) {
    const auto p = dir / (id + ".json");
    if (fs::exists(p)) return parse_script(read_all(p));
  }
  throw NotFound("no script '" + id + "'");
}

json Service::upload_script(const json& doc) {
  const auto script = script_from_json(doc);
  const auto body = serialize_script(script);
  const auto id = "s-" + text::sha256_hex(body).substr(0, 16);
  const auto path = config_.data_dir / "scripts" / (id + ".json");
  if (!fs::exists(path)) write_atomic(path, body);
  return {{"script_id", id}, {"title", script.title}, {"scenes", script.scenes.size()}};
}

json Service::get_script(const std::string& id) {
  return {{"script_id", id}, {"script", to_json(load_script(id))}};
}

json Service::create_session(const json& request) {
  if (!request.is_object() || !request.contains("script_id") || !request["script_id"].is_string()) {
    throw SchemaError("create_session needs a string 'script_id'");
  }
  const auto script_id = request["script_id"].get<std::string>();
  auto script = load_script(script_id);
  auto arch = config_.architecture;
  if (request.contains("architecture")) {
    if (!request["architecture"].is_string()) throw SchemaError("'architecture' must be a string");
    auto a = runtime::parse_architecture(request["architecture"].get<std::string>());
    if (!a) throw SchemaError("unknown architecture '" + request["architecture"].get<std::string>() + "'");
    arch.kind = *a;
  }
  if (request.contains("reflection_period")) {
    const auto& k = request["reflection_period"];
    if (k.is_null()) {
      arch.reflection_period.reset();
    } else if (k.is_number_integer() && k.get<int>() > 0) {
      arch.reflection_period = k.get<int>();
    } else {
      throw SchemaError("'reflection_period' must be a positive integer or null");
    }
  }

  auto slot = std::make_shared<Slot>();
  slot->script_id = script_id;
  slot->session = runtime::start_session(std::move(script), arch, random_id("x"));
  slot->log_path = session_log_path(slot->session.id);
  auto started = runtime::started_event(slot->session);
  started["script_id"] = script_id;
  append_line(slot->log_path, started);
  slot->events.push_back(started);
  {
    std::lock_guard lock(mutex_);
    sessions_[slot->session.id] = slot;
  }
  return handle_json(slot->session, script_id);
}

json Service::post_message(const std::string& session_id, const std::string& text,
                           const std::optional<std::string>& key) {
  auto s = slot(session_id);

  std::unique_lock queue(s->queue_mutex);
  const auto ticket = s->next_ticket++;
  s->queue_cv.wait(queue, [&] { return s->serving == ticket; });
  queue.unlock();
  struct Release {
    Slot& s;
    ~Release() {
      std::lock_guard l(s.queue_mutex);
      ++s.serving;
      s.queue_cv.notify_all();
    }
  } release{*s};

  runtime::Session work;
  {
    std::lock_guard lock(s->state_mutex);
    if (key) {
      if (auto it = s->by_key.find(*key); it != s->by_key.end()) return turn_response(session_id, it->second);
    }
    work = s->session;
  }

  runtime::Engine engine(*drama_gateway_, {config_.memory_window});
  runtime::TurnRecord record;
  try {
    record = engine.step(work, text);
  } catch (const TurnFailed& e) {
    auto failed = runtime::failed_event(work, text, e.what());
    append_line(s->log_path, failed);
    std::lock_guard lock(s->state_mutex);
    s->events.push_back(std::move(failed));
    throw;
  }

  auto event = runtime::turn_event(work, record);
  if (key) event["idempotency_key"] = *key;
  append_line(s->log_path, event);  // durable before it becomes visible
  {
    std::lock_guard lock(s->state_mutex);
    s->session = std::move(work);
    s->events.push_back(event);
    if (key) s->by_key[*key] = event;
  }
  s->state_cv.notify_all();
  return turn_response(session_id, event);
}

runtime::Session Service::session_state(const std::string& session_id) {
  auto s = slot(session_id);
  std::lock_guard lock(s->state_mutex);
  return s->session;
}

bool Service::session_finished(const std::string& session_id) {
  return session_state(session_id).status == runtime::SessionStatus::Finished;
}

json Service::transcript(const std::string& session_id) {
  auto s = slot(session_id);
  std::lock_guard lock(s->state_mutex);
  json out = handle_json(s->session, s->script_id);
  json turns = json::array();
  json banners = json::array();
  const auto& first = s->session.script.scenes.front();
  banners.push_back({{"turn", 0},
                     {"index", first.index},
                     {"location", first.location},
                     {"background", first.background},
                     {"is_flashback", first.is_flashback}});
  for (const auto& ev : s->events) {
    const auto kind = ev.value("event", "");
    if (kind == "turn") {
      turns.push_back(ev["record"]);
      if (ev["record"].contains("next_scene")) {
        auto b = ev["record"]["next_scene"];
        b["turn"] = ev["record"]["turn"];
        banners.push_back(b);
      }
    } else if (kind == "turn_failed") {
      turns.push_back({{"failed", true}, {"turn", ev["turn"]}, {"player_input", ev["player_input"]},
                       {"error", ev["error"]}});
    }
  }
  json messages = json::array();
  for (const auto& m : s->session.memory) messages.push_back(runtime::to_json(m));
  out["title"] = s->session.script.title;
  out["player"] = s->session.script.player().name;
  out["scenes"] = banners;
  out["messages"] = messages;
  out["turns"] = turns;
  return out;
}

json Service::plots(const std::string& session_id) {
  auto s = slot(session_id);
  std::lock_guard lock(s->state_mutex);
  const auto& sc = s->session.scene();
  json reflections = json::array();
  for (const auto& ev : s->events) {
    if (ev.value("event", "") != "turn") continue;
    const auto& rec = ev["record"];
    if (!rec.contains("reflection")) continue;
    auto r = rec["reflection"];
    r["turn"] = rec["turn"];
    r["scene_index"] = rec["scene_index"];
    reflections.push_back(r);
  }
  return {{"session_id", session_id},
          {"status", runtime::to_string(s->session.status)},
          {"scene", {{"index", sc.index}, {"location", sc.location}, {"scene_turn", s->session.scene_turn}}},
          {"plots", to_json(s->session.chain)},
          {"reflections", reflections}};
}

std::vector<json> Service::turn_events(const std::string& session_id, std::size_t from,
                                       std::chrono::milliseconds wait) {
  auto s = slot(session_id);
  std::unique_lock lock(s->state_mutex);
  auto collect = [&] {
    std::vector<json> out;
    std::size_t n = 0;
    for (const auto& ev : s->events) {
      if (ev.value("event", "") != "turn") continue;
      if (n++ >= from) out.push_back(turn_response(session_id, ev));
    }
    return out;
  };
  auto out = collect();
  if (out.empty() && s->session.status != runtime::SessionStatus::Finished) {
    s->state_cv.wait_for(lock, wait);
    out = collect();
  }
  return out;
}

// Generation jobs ---------------------------------------------------------------------

void Service::save_job(const Job& job) {
  json j = {{"job_id", job.id},
            {"premise", job.premise},
            {"seed", job.seed},
            {"state", to_string(job.state)},
            {"warnings", job.warnings}};
  if (job.script_id) j["script_id"] = *job.script_id;
  if (job.error) j["error"] = *job.error;
  if (!job.report.is_null()) j["report"] = job.report;
  write_atomic(config_.data_dir / "jobs" / (job.id + ".json"), j.dump(2));
}

json Service::submit_generation(const json& request) {
  if (!request.is_object() || !request.contains("premise") || !request["premise"].is_string()) {
    throw SchemaError("generation needs a string 'premise'");
  }
  const auto premise = generation::Premise::from_text(request["premise"].get<std::string>());
  if (premise.text.empty()) throw SchemaError("premise is empty");
  auto job = std::make_shared<Job>();
  job->id = random_id("j");
  job->premise = premise.text;
  if (request.contains("seed")) {
    if (!request["seed"].is_number_unsigned() && !request["seed"].is_number_integer()) {
      throw SchemaError("'seed' must be an integer");
    }
    job->seed = request["seed"].get<std::uint64_t>();
  }
  if (premise.word_count < generation::kPremiseMinWords || premise.word_count > generation::kPremiseMaxWords) {
    job->warnings.push_back("premise has " + std::to_string(premise.word_count) + " words; " +
                            std::to_string(generation::kPremiseMinWords) + " to " +
                            std::to_string(generation::kPremiseMaxWords) + " work best");
  }
  save_job(*job);
  {
    std::lock_guard lock(mutex_);
    jobs_[job->id] = job;
    workers_.emplace_back([this, job] { run_job(job); });
  }
  return {{"job_id", job->id}, {"state", "queued"}, {"warnings", job->warnings}};
}

void Service::run_job(std::shared_ptr<Job> job) {
  auto set = [&](auto&& fn) {
    std::lock_guard lock(mutex_);
    fn(*job);
    save_job(*job);
    jobs_cv_.notify_all();
  };
  set([](Job& j) { j.state = JobState::Running; });
  try {
    llm::Gateway gateway(generation_factory_(), config_.generation.retry);
    const auto catalog = playbook::Catalog::load_default();
    generation::StoryGenerator gen(gateway, catalog);
    auto result = gen.run_pipeline(generation::Premise::from_text(job->premise), job->seed);
    auto script = gen.story_to_script(result.story);
    const auto stored = upload_script(to_json(script));
    set([&](Job& j) {
      j.report = generation::to_json(result.report);
      j.script_id = stored["script_id"].get<std::string>();
      j.state = JobState::Done;
    });
  } catch (const generation::PipelineError& e) {
    set([&](Job& j) {
      j.report = generation::to_json(e.report());
      j.error = e.what();
      j.state = JobState::Failed;
    });
  } catch (const std::exception& e) {
    set([&](Job& j) {
      j.error = e.what();
      j.state = JobState::Failed;
    });
  }
}

json Service::job(const std::string& job_id) {
  check_id(job_id, "job");
  std::lock_guard lock(mutex_);
  const auto path = config_.data_dir / "jobs" / (job_id + ".json");
  if (!fs::exists(path)) throw NotFound("no job '" + job_id + "'");
  return json::parse(read_all(path));
}

void Service::wait_for_jobs() {
  std::unique_lock lock(mutex_);
  jobs_cv_.wait(lock, [&] {
    for (const auto& [id, j] : jobs_) {
      if (j->state == JobState::Queued || j->state == JobState::Running) return false;
    }
    return true;
  });
}

// HTTP -----------------------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Maps the error hierarchy onto status codes.
template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const NotFound& e) {
      send_json(res, 404, {{"error", e.what()}});
    } catch (const SessionFinished& e) {
      send_json(res, 409, {{"error", e.what()}});
    } catch (const TurnFailed& e) {
      send_json(res, 502, {{"error", e.what()}, {"replayable", true}, {"provider_failure", e.provider_failure()}});
    } catch (const SyntaxError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const SchemaError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const PreconditionError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const json::exception& e) {
      send_json(res, 400, {{"error", std::string("bad JSON: ") + e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  };
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

}  // namespace

void Service::mount(httplib::Server& server) {
  if (config_.token) {
    const std::string expected = "Bearer " + *config_.token;
    server.set_pre_routing_handler([expected](const httplib::Request& req, httplib::Response& res) {
      if (req.path == "/health") return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") != expected) {
        send_json(res, 401, {{"error", "missing or wrong bearer token"}});
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });
  }

  server.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"ok", true}}); });
  server.Post("/scripts", guarded([this](const auto& req, auto& res) { send_json(res, 201, upload_script(body_json(req))); }));
  server.Get("/scripts/:id", guarded([this](const auto& req, auto& res) {
               send_json(res, 200, get_script(req.path_params.at("id")));
             }));
  server.Post("/sessions", guarded([this](const auto& req, auto& res) {
                send_json(res, 201, create_session(body_json(req)));
              }));
  server.Post("/sessions/:id/message", guarded([this](const auto& req, auto& res) {
                const auto body = body_json(req);
                if (!body.contains("text") || !body["text"].is_string()) {
                  throw SchemaError("message needs a string 'text'");
                }
                std::optional<std::string> key;
                if (req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
                if (body.contains("idempotency_key")) key = body["idempotency_key"].template get<std::string>();
                send_json(res, 200, post_message(req.path_params.at("id"), body["text"].template get<std::string>(), key));
              }));
  server.Get("/sessions/:id/transcript", guarded([this](const auto& req, auto& res) {
               send_json(res, 200, transcript(req.path_params.at("id")));
             }));
  server.Get("/sessions/:id/plots", guarded([this](const auto& req, auto& res) {
               send_json(res, 200, plots(req.path_params.at("id")));
             }));
  server.Get("/sessions/:id/stream", guarded([this](const auto& req, auto& res) {
               const auto id = req.path_params.at("id");
               slot(id);  // 404 before the stream starts
               std::size_t from = 0;
               if (req.has_param("from")) from = std::stoul(req.get_param_value("from"));
               auto cursor = std::make_shared<std::size_t>(from);
               res.set_header("Cache-Control", "no-cache");
               res.set_chunked_content_provider(
                   "text/event-stream", [this, id, cursor](std::size_t, httplib::DataSink& sink) {
                     if (!server_->is_running()) return false;
                     const auto events = turn_events(id, *cursor, std::chrono::milliseconds(1000));
                     for (const auto& e : events) {
                       const auto chunk = "event: turn\ndata: " + e.dump() + "\n\n";
                       if (!sink.write(chunk.data(), chunk.size())) return false;
                       ++*cursor;
                     }
                     if (events.empty()) {
                       if (session_finished(id)) {
                         const std::string end = "event: end\ndata: {}\n\n";
                         sink.write(end.data(), end.size());
                         sink.done();
                         return true;
                       }
                       const std::string ping = ": keepalive\n\n";
                       if (!sink.write(ping.data(), ping.size())) return false;
                     }
                     return true;
                   });
             }));
  server.Post("/generate", guarded([this](const auto& req, auto& res) {
                send_json(res, 202, submit_generation(body_json(req)));
              }));
  server.Get("/generate/:job", guarded([this](const auto& req, auto& res) {
               send_json(res, 200, job(req.path_params.at("job")));
             }));
}

void Service::listen() {
  mount(*server_);
  int port = config_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(config_.host);
  } else if (!server_->bind_to_port(config_.host, port)) {
    port = -1;
  }
  if (port < 0) throw Error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  bound_port_ = port;
  server_->listen_after_bind();
}

bool Service::wait_until_listening(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (server_->is_running() && bound_port_ > 0) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return false;
}

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace stagecraft::service
