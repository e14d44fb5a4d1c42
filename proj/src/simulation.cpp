#include "stagecraft/simulation.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "stagecraft/playbook.hpp"
#include "stagecraft/text.hpp"

namespace stagecraft::simulation {

PersonaCatalog PersonaCatalog::from_json(const nlohmann::json& doc) {
  PersonaCatalog c;
  try {
    std::set<std::string> ids;
    for (const auto& p : doc.at("personas")) {
      PlayerPersona persona{p.at("id").get<std::string>(), p.at("name").get<std::string>(),
                            p.at("description").get<std::string>()};
      if (persona.description.empty()) throw SchemaError("persona '" + persona.id + "' has no description");
      if (!ids.insert(persona.id).second) throw SchemaError("duplicate persona '" + persona.id + "'");
      c.personas_.push_back(std::move(persona));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed persona catalog: ") + e.what());
  }
  if (c.personas_.size() != kPersonaCount) {
    throw SchemaError("persona catalog must hold " + std::to_string(kPersonaCount) + " entries, found " +
                      std::to_string(c.personas_.size()));
  }
  return c;
}

PersonaCatalog PersonaCatalog::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open persona catalog " + file.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(file.string() + ": " + e.what());
  }
}

PersonaCatalog PersonaCatalog::load_default() { return load(data_dir() / "personas" / "personas.json"); }

const PlayerPersona& PersonaCatalog::find(std::string_view key) const {
  const auto k = text::to_lower(key);
  for (const auto& p : personas_) {
    if (p.id == k || text::to_lower(p.name) == k) return p;
  }
  // "grumpy" finds "grumpy-guy" when the prefix is unambiguous.
  const PlayerPersona* hit = nullptr;
  for (const auto& p : personas_) {
    if (p.id.rfind(k, 0) == 0) {
      if (hit) throw Error("persona '" + std::string(key) + "' is ambiguous");
      hit = &p;
    }
  }
  if (!hit) throw Error("unknown persona '" + std::string(key) + "'");
  return *hit;
}

nlohmann::json PersonaCatalog::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : personas_) arr.push_back({{"id", p.id}, {"name", p.name}, {"description", p.description}});
  return {{"personas", arr}};
}

std::string PersonaCatalog::fingerprint() const { return text::sha256_hex(to_json().dump()); }

// Player agent -------------------------------------------------------------------

namespace prompts {

std::vector<llm::ChatMessage> player(const PlayerPersona& persona, const runtime::Session& s) {
  const auto& sc = s.scene();
  const auto& me = s.script.player();
  std::string system =
      persona.description +
      "\n\nYou are now playing a text-based interactive drama as the character " + me.name +
      ". Stay in your personality above. Each time it is your turn, write the one thing you say next.";

  std::string user = "## Where you are\n" + sc.location + "\n" + sc.background + "\n\n## Who is here\n";
  for (const auto& n : s.present_npcs()) user += "- " + n + "\n";
  user += "\n## Conversation so far\n";
  std::size_t from = 0;
  constexpr std::size_t kRecent = 12;
  if (s.memory.size() > kRecent) from = s.memory.size() - kRecent;
  if (from == s.memory.size()) user += "(nothing yet)\n";
  for (std::size_t i = from; i < s.memory.size(); ++i) {
    const auto& e = s.memory[i];
    user += e.speaker + " to " + e.addressee + ": " + e.utterance;
    if (e.action) user += " (" + *e.action + ")";
    user += "\n";
  }
  user += "\n## Output format\nSAY: <your line, one or two sentences>\n";
  return {{llm::Role::System, system}, {llm::Role::User, user}};
}

}  // namespace prompts

std::string extract_player_line(std::string_view response) {
  auto t = text::trim(text::normalize_newlines(response));
  for (const auto& line : text::split_lines(t)) {
    const auto l = text::trim(line);
    if (l.rfind("SAY:", 0) == 0) return text::trim(l.substr(4));
  }
  return t;
}

// Playthrough ----------------------------------------------------------------------

namespace {

void add_calls(runtime::TurnLedger& sum, const runtime::TurnLedger& t) {
  sum.director += t.director;
  sum.actor += t.actor;
  sum.global += t.global;
  sum.reflection += t.reflection;
  sum.repair += t.repair;
}

int completed_in(const PlotChain& chain) {
  int n = 0;
  for (const auto& p : chain.plots) n += p.completed;
  return n;
}

}  // namespace

Playthrough run_playthrough(const DramaScript& script, const PlayerPersona& persona,
                            const runtime::ArchitectureConfig& architecture, const PlaythroughOptions& options,
                            llm::Gateway& drama, llm::Gateway& player, const std::string& session_id) {
  if (options.max_turns <= 0) throw PreconditionError("max_turns must be positive");
  runtime::Engine engine(drama);
  auto s = runtime::start_session(script, architecture, session_id);

  Playthrough out;
  auto& r = out.report;
  r.persona = persona.id;
  r.architecture = architecture;
  out.events.push_back(runtime::started_event(s));

  std::map<int, int> turns_in_scene;
  std::map<int, SceneProgress> progress;
  progress[s.scene().index] = {s.scene().index, 0, static_cast<int>(s.chain.size()), 0};

  while (s.status != runtime::SessionStatus::Finished && s.turn < options.max_turns) {
    std::string line;
    try {
      llm::ChatRequest req{"player", prompts::player(persona, s), {llm::kCreativeTemperature, 256, std::nullopt}};
      ++r.player_calls;
      line = extract_player_line(player.complete(req).text);
    } catch (const Error& e) {
      r.failure = std::string("player agent: ") + e.what();
      out.events.push_back(runtime::failed_event(s, "", *r.failure));
      break;
    }

    const int scene_before = s.scene().index;
    const auto chain_before = s.chain;
    runtime::TurnRecord rec;
    try {
      rec = engine.step(s, line);
    } catch (const TurnFailed& e) {
      r.failure = e.what();
      out.events.push_back(runtime::failed_event(s, line, e.what()));
      break;
    }
    out.events.push_back(runtime::turn_event(s, rec));

    add_calls(r.calls, rec.calls);
    ++turns_in_scene[rec.scene_index];
    auto& prog = progress[scene_before];
    ++prog.turns;

    const std::string cls(to_string(rec.decision.input_class));
    ++r.strategies[cls][rec.decision.strategy ? std::string(to_string(*rec.decision.strategy)) : "none"];
    if (rec.reflection.performed) {
      ++r.reflections;
      if (rec.reflection.error) {
        ++r.reflections_skipped;
      } else if (rec.reflection.verdict && rec.reflection.verdict->accepted) {
        ++r.reflections_accepted;
      } else {
        ++r.reflections_rejected;
      }
      r.lint_flags += static_cast<int>(rec.reflection.lint.size());
    }

    const bool left_scene = s.status == runtime::SessionStatus::Finished || s.scene().index != scene_before;
    if (left_scene) {
      // The scene closed with every plot done, including any this turn's
      // reflection inserted.
      int inserted = 0;
      if (rec.reflection.verdict && rec.reflection.verdict->accepted) {
        inserted = static_cast<int>(rec.reflection.verdict->diff.inserted.size());
      }
      prog.total = static_cast<int>(chain_before.size()) + inserted;
      prog.completed = prog.total;
      if (s.status != runtime::SessionStatus::Finished) {
        progress[s.scene().index] = {s.scene().index, 0, static_cast<int>(s.chain.size()), 0};
      }
    } else {
      prog.total = static_cast<int>(s.chain.size());
      prog.completed = completed_in(s.chain);
    }
  }

  r.turns = s.turn;
  r.finished = s.status == runtime::SessionStatus::Finished;
  r.cutoff = !r.finished && !r.failure;

  int done = 0;
  int total = 0;
  for (const auto& sc : script.scenes) {
    auto it = progress.find(sc.index);
    if (it != progress.end()) {
      r.scenes.push_back(it->second);
      done += it->second.completed;
      total += it->second.total;
    } else {
      total += static_cast<int>(sc.plot_chain.size());
    }
  }
  r.completion = total ? static_cast<double>(done) / total : 0.0;

  std::vector<runtime::SceneTurns> played;
  for (const auto& sc : script.scenes) {
    auto it = turns_in_scene.find(sc.index);
    if (it != turns_in_scene.end()) played.push_back({sc.mode, it->second});
  }
  r.predicted_calls = runtime::inference_count(architecture, played);
  return out;
}

nlohmann::json to_json(const SimReport& r) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& p : r.scenes) {
    scenes.push_back({{"scene", p.scene_index}, {"completed", p.completed}, {"total", p.total}, {"turns", p.turns}});
  }
  nlohmann::json j = {{"persona", r.persona},
                      {"architecture", runtime::to_json(r.architecture)},
                      {"turns", r.turns},
                      {"finished", r.finished},
                      {"cutoff", r.cutoff},
                      {"scenes", scenes},
                      {"completion", r.completion},
                      {"calls",
                       {{"director", r.calls.director},
                        {"actor", r.calls.actor},
                        {"global", r.calls.global},
                        {"reflection", r.calls.reflection},
                        {"repair", r.calls.repair},
                        {"total", r.calls.total()},
                        {"lawful", r.calls.lawful()},
                        {"predicted", r.predicted_calls},
                        {"matches_prediction", r.ledger_matches()}}},
                      {"player_calls", r.player_calls},
                      {"strategies", r.strategies},
                      {"reflections",
                       {{"performed", r.reflections},
                        {"accepted", r.reflections_accepted},
                        {"rejected", r.reflections_rejected},
                        {"skipped", r.reflections_skipped},
                        {"lint_flags", r.lint_flags}}}};
  if (r.failure) j["failure"] = *r.failure;
  return j;
}

// Comparison -----------------------------------------------------------------------

Comparison compare_architectures(const DramaScript& script, const std::vector<PlayerPersona>& personas,
                                 const ProviderFactory& drama, const ProviderFactory& player,
                                 const PlaythroughOptions& options, int reflection_period) {
  if (personas.empty()) throw PreconditionError("compare needs at least one persona");
  using runtime::Architecture;
  Comparison c;
  auto row = [](std::string label, runtime::ArchitectureConfig a) {
    ComparisonRow r;
    r.label = std::move(label);
    r.architecture = a;
    return r;
  };
  c.rows = {row("director-actor", {Architecture::DirectorActor, reflection_period, 1}),
            row("hybrid", {Architecture::Hybrid, reflection_period, 1}),
            row("hybrid, no reflection", {Architecture::Hybrid, std::nullopt, 1})};
  for (auto& row : c.rows) {
    for (const auto& persona : personas) {
      llm::Gateway dg(drama());
      llm::Gateway pg(player());
      dg.set_sleeper([](std::chrono::milliseconds) {});
      pg.set_sleeper([](std::chrono::milliseconds) {});
      auto run = run_playthrough(script, persona, row.architecture, options, dg, pg, "cmp-" + persona.id);
      row.turns += run.report.turns;
      row.calls += run.report.calls.lawful();
      row.reflection_calls += run.report.calls.reflection;
      row.completion += run.report.completion;
      row.reports.push_back(std::move(run.report));
    }
    row.completion /= static_cast<double>(personas.size());
  }
  // Calls per turn, so rows that played different numbers of turns still compare.
  auto per_turn = [](const ComparisonRow& r) { return r.turns ? static_cast<double>(r.calls) / r.turns : 0.0; };
  const double base = per_turn(c.rows.front());
  for (auto& row : c.rows) row.speedup = per_turn(row) > 0 ? base / per_turn(row) : 0.0;
  return c;
}

nlohmann::json to_json(const Comparison& c) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : c.rows) {
    nlohmann::json reports = nlohmann::json::array();
    for (const auto& r : row.reports) reports.push_back(to_json(r));
    rows.push_back({{"label", row.label},
                    {"architecture", runtime::to_json(row.architecture)},
                    {"turns", row.turns},
                    {"calls", row.calls},
                    {"reflection_calls", row.reflection_calls},
                    {"completion", row.completion},
                    {"speedup", row.speedup},
                    {"reports", reports}});
  }
  return {{"rows", rows}};
}

std::string render_table(const Comparison& c) {
  std::string out = "architecture            turns  calls  reflections  completion  speedup\n";
  for (const auto& row : c.rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-22s %6d %6ld %12ld %10.1f%% %8.3f\n", row.label.c_str(), row.turns, row.calls,
                  row.reflection_calls, row.completion * 100.0, row.speedup);
    out += buf;
  }
  return out;
}

}  // namespace stagecraft::simulation
