#include <chrono>
#include <ctime>

#include "stagecraft/runtime.hpp"
#include "stagecraft/text.hpp"

namespace stagecraft::runtime {

namespace {

MemoryEntry memory_from_json(const nlohmann::json& j) {
  MemoryEntry e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.turn = j.at("turn").get<int>();
  e.speaker = j.at("speaker").get<std::string>();
  e.addressee = j.at("addressee").get<std::string>();
  e.utterance = j.at("utterance").get<std::string>();
  if (j.contains("action")) e.action = j["action"].get<std::string>();
  e.scene_index = j.at("scene_index").get<int>();
  e.from_player = j.value("from_player", false);
  return e;
}

TurnLedger ledger_from_json(const nlohmann::json& j) {
  TurnLedger l;
  l.turn = j.at("turn").get<int>();
  l.scene_index = j.at("scene_index").get<int>();
  l.architecture = parse_architecture(j.at("architecture").get<std::string>()).value();
  l.director = j.at("director").get<int>();
  l.actor = j.at("actor").get<int>();
  l.global = j.at("global").get<int>();
  l.reflection = j.at("reflection").get<int>();
  l.repair = j.at("repair").get<int>();
  return l;
}

SessionStatus status_from_string(const std::string& s) {
  if (s == "active") return SessionStatus::Active;
  if (s == "scene_transition") return SessionStatus::SceneTransition;
  if (s == "finished") return SessionStatus::Finished;
  throw SchemaError("unknown session status '" + s + "'");
}

nlohmann::json lint_json(const LintFinding& f) {
  return {{"kind", f.kind == LintFinding::Kind::FutureSceneEntity ? "future_scene_entity" : "unknown_entity"},
          {"plot", f.plot_id},
          {"token", f.token}};
}

}  // namespace

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json to_json(const MemoryEntry& e) {
  nlohmann::json j = {{"seq", e.seq},
                      {"turn", e.turn},
                      {"speaker", e.speaker},
                      {"addressee", e.addressee},
                      {"utterance", e.utterance},
                      {"scene_index", e.scene_index},
                      {"from_player", e.from_player}};
  if (e.action) j["action"] = *e.action;
  return j;
}

nlohmann::json to_json(const Decision& d) {
  nlohmann::json j = {{"speaker", d.speaker},
                      {"addressee", d.addressee},
                      {"utterance", d.utterance},
                      {"completed", d.asserted_completions},
                      {"class", to_string(d.input_class)}};
  if (d.action) j["action"] = *d.action;
  if (d.strategy) j["strategy"] = to_string(*d.strategy);
  return j;
}

nlohmann::json to_json(const TurnLedger& l) {
  return {{"turn", l.turn},
          {"scene_index", l.scene_index},
          {"architecture", to_string(l.architecture)},
          {"director", l.director},
          {"actor", l.actor},
          {"global", l.global},
          {"reflection", l.reflection},
          {"repair", l.repair}};
}

nlohmann::json to_json(const ArchitectureConfig& a) {
  return {{"kind", to_string(a.kind)},
          {"reflection_period", a.reflection_period ? nlohmann::json(*a.reflection_period) : nlohmann::json(nullptr)},
          {"reflection_budget", a.reflection_budget}};
}

ArchitectureConfig architecture_from_json(const nlohmann::json& j) {
  ArchitectureConfig a;
  auto kind = parse_architecture(j.at("kind").get<std::string>());
  if (!kind) throw SchemaError("unknown architecture '" + j.at("kind").get<std::string>() + "'");
  a.kind = *kind;
  if (j.contains("reflection_period") && !j["reflection_period"].is_null()) {
    a.reflection_period = j["reflection_period"].get<int>();
  } else {
    a.reflection_period.reset();
  }
  a.reflection_budget = j.value("reflection_budget", 1);
  return a;
}

nlohmann::json to_json(const TurnRecord& r) {
  nlohmann::json j = {{"turn", r.turn},
                      {"scene_index", r.scene_index},
                      {"scene_turn", r.scene_turn},
                      {"player_input", r.player_input},
                      {"architecture", to_string(r.architecture)},
                      {"decision", to_json(r.decision)},
                      {"calls", to_json(r.calls)},
                      {"warnings", r.warnings}};
  if (r.motivation) {
    j["motivation"] = {{"actor", r.motivation->target_actor}, {"instruction", r.motivation->instruction}};
  }
  if (r.reflection.performed) {
    nlohmann::json refl = {{"performed", true}};
    if (r.reflection.error) refl["error"] = *r.reflection.error;
    if (r.reflection.verdict) {
      const auto& v = *r.reflection.verdict;
      nlohmann::json violations = nlohmann::json::array();
      for (auto b : v.violations) violations.push_back(to_string(b));
      refl["accepted"] = v.accepted;
      refl["changes_used"] = v.changes_used;
      refl["violations"] = violations;
      refl["diff"] = to_json(v.diff);
    }
    refl["lint"] = nlohmann::json::array();
    for (const auto& f : r.reflection.lint) refl["lint"].push_back(lint_json(f));
    j["reflection"] = refl;
  }
  if (r.next_scene) {
    j["next_scene"] = {{"index", r.next_scene->index},
                       {"location", r.next_scene->location},
                       {"background", r.next_scene->background},
                       {"is_flashback", r.next_scene->is_flashback}};
  }
  return j;
}

nlohmann::json state_json(const Session& s) {
  const auto& sc = s.scene();
  return {{"session_id", s.id},
          {"status", to_string(s.status)},
          {"turn", s.turn},
          {"scene", {{"index", sc.index},
                     {"location", sc.location},
                     {"background", sc.background},
                     {"mode", to_string(sc.mode)},
                     {"is_flashback", sc.is_flashback},
                     {"scene_turn", s.scene_turn},
                     {"architecture", to_string(s.current_architecture())}}},
          {"plots", to_json(s.chain)},
          {"architecture", to_json(s.architecture)},
          {"calls", {{"total", s.total_calls()}, {"lawful", s.lawful_calls()}}}};
}

nlohmann::json started_event(const Session& s) {
  return {{"event", "session_started"},
          {"session_id", s.id},
          {"created_at", s.created_at},
          {"architecture", to_json(s.architecture)},
          {"script", to_json(s.script)}};
}

nlohmann::json turn_event(const Session& after, const TurnRecord& record) {
  nlohmann::json memory = nlohmann::json::array();
  for (const auto& e : after.memory) {
    if (e.turn == record.turn) memory.push_back(to_json(e));
  }
  return {{"event", "turn"},
          {"record", to_json(record)},
          {"memory", memory},
          {"state",
           {{"turn", after.turn},
            {"scene_cursor", after.scene_cursor},
            {"scene_turn", after.scene_turn},
            {"status", to_string(after.status)},
            {"next_reflected_id", after.next_reflected_id},
            {"next_seq", after.next_seq},
            {"chain", to_json(after.chain)}}}};
}

nlohmann::json failed_event(const Session& s, std::string_view input, std::string_view error) {
  return {{"event", "turn_failed"}, {"turn", s.turn + 1}, {"player_input", input}, {"error", error}};
}

std::vector<nlohmann::json> read_event_log(std::string_view jsonl) {
  std::vector<nlohmann::json> out;
  std::size_t line_no = 0;
  for (const auto& line : text::split_lines(jsonl)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error&) {
      // A torn final line is what a crash mid-append leaves behind.
      if (line_no == text::split_lines(jsonl).size()) break;
      throw SchemaError("session log line " + std::to_string(line_no) + " is not JSON");
    }
  }
  return out;
}

Session replay(const std::vector<nlohmann::json>& events) {
  if (events.empty() || events.front().value("event", "") != "session_started") {
    throw SchemaError("session log must begin with session_started");
  }
  try {
    const auto& start = events.front();
    Session s;
    s.id = start.at("session_id").get<std::string>();
    s.created_at = start.at("created_at").get<std::string>();
    s.script = script_from_json(start.at("script"));
    s.architecture = architecture_from_json(start.at("architecture"));
    s.chain = s.script.scenes.front().plot_chain;
    for (std::size_t i = 1; i < events.size(); ++i) {
      const auto& ev = events[i];
      const auto kind = ev.at("event").get<std::string>();
      if (kind == "turn_failed") continue;
      if (kind != "turn") throw SchemaError("unknown session event '" + kind + "'");
      for (const auto& m : ev.at("memory")) s.memory.push_back(memory_from_json(m));
      s.ledger.push_back(ledger_from_json(ev.at("record").at("calls")));
      const auto& st = ev.at("state");
      s.turn = st.at("turn").get<int>();
      s.scene_cursor = st.at("scene_cursor").get<std::size_t>();
      s.scene_turn = st.at("scene_turn").get<int>();
      s.status = status_from_string(st.at("status").get<std::string>());
      s.next_reflected_id = st.at("next_reflected_id").get<int>();
      s.next_seq = st.at("next_seq").get<std::uint64_t>();
      s.chain = chain_from_json(st.at("chain"));
      if (s.scene_cursor >= s.script.scenes.size()) throw SchemaError("scene cursor out of range");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed session log: ") + e.what());
  }
}

}  // namespace stagecraft::runtime
