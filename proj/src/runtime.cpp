#include "stagecraft/runtime.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "stagecraft/text.hpp"

namespace stagecraft::runtime {

namespace {

using llm::ChatMessage;
using llm::Role;

const char* kClassGuide =
    "Classify the player's latest input:\n"
    "- InPlot: it engages with the story as it is unfolding.\n"
    "- Daily: ordinary small talk with no bearing on the story.\n"
    "- Breaking: it ignores, disrupts or steps outside the story world (including saying nothing).\n"
    "For Daily or Breaking inputs pick exactly one way to bring the player back:\n"
    "- Avoid: sidestep the input politely and return to the story.\n"
    "- IgnoreQuestion: leave the input unanswered and seize the initiative with a story topic of your own.\n"
    "- Associate: tie something the player mentioned to a person, object or image from the story.\n";

std::string shown_input(std::string_view input) {
  auto t = text::trim(input);
  return t.empty() ? "(the player says nothing)" : t;
}

std::string render_chain(const PlotChain& chain) {
  std::string out;
  for (const auto& p : chain.plots) {
    out += "- [" + p.id + "] (" + (p.completed ? "done" : "open") + ") " + p.description;
    if (p.owner) out += " [driven by " + *p.owner + "]";
    out += "\n";
  }
  return out;
}

std::string render_entry(const MemoryEntry& e) {
  std::string out = "[t" + std::to_string(e.turn) + "] " + e.speaker + " -> " + e.addressee + ": " + e.utterance;
  if (e.action) out += " (" + *e.action + ")";
  return out + "\n";
}

std::string render_memory(const std::vector<MemoryEntry>& memory, std::size_t window,
                          const std::function<bool(const MemoryEntry&)>& visible = {}) {
  std::vector<const MemoryEntry*> shown;
  for (const auto& e : memory) {
    if (!visible || visible(e)) shown.push_back(&e);
  }
  if (window > 0 && shown.size() > window) shown.erase(shown.begin(), shown.end() - static_cast<std::ptrdiff_t>(window));
  if (shown.empty()) return "(nothing yet)\n";
  std::string out;
  for (const auto* e : shown) out += render_entry(*e);
  return out;
}

std::string render_present(const Session& s) {
  std::string out;
  for (const auto& [name, setup] : s.scene().setups) out += "- " + name + ": " + setup + "\n";
  return out;
}

std::string scene_block(const Session& s) {
  const auto obs = s.observe();
  return "## Story background\n" + s.script.background + "\n\n## Scene " + std::to_string(obs.scene_index) + "\n" +
         "Location: " + obs.location + "\n" + s.scene().background + "\nScene turn: " + std::to_string(obs.scene_turn) +
         "\n\n## Player character\n" + s.script.player().name + "\n\n## Characters present\n" + render_present(s) +
         "\n## Plot chain\n" + render_chain(s.chain);
}

llm::ChatRequest make_request(std::string purpose, std::vector<ChatMessage> messages, double temperature) {
  llm::ChatRequest r;
  r.purpose = std::move(purpose);
  r.messages = std::move(messages);
  r.params.temperature = temperature;
  return r;
}

bool is_present_npc(const Session& s, const std::string& name) {
  return s.scene().setups.contains(name);
}

}  // namespace

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::DirectorActor: return "director-actor";
    case Architecture::OneForAll: return "one-for-all";
    case Architecture::Hybrid: return "hybrid";
  }
  return "hybrid";
}

std::optional<Architecture> parse_architecture(std::string_view s) {
  std::string k;
  for (char c : s) {
    if (std::isalpha(static_cast<unsigned char>(c))) k.push_back(static_cast<char>(std::tolower(c)));
  }
  if (k == "directoractor") return Architecture::DirectorActor;
  if (k == "oneforall") return Architecture::OneForAll;
  if (k == "hybrid") return Architecture::Hybrid;
  return std::nullopt;
}

std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Active: return "active";
    case SessionStatus::SceneTransition: return "scene_transition";
    case SessionStatus::Finished: return "finished";
  }
  return "active";
}

Architecture resolve(const ArchitectureConfig& config, SceneMode mode) {
  if (config.kind != Architecture::Hybrid) return config.kind;
  return mode == SceneMode::Narrative ? Architecture::OneForAll : Architecture::DirectorActor;
}

std::vector<std::string> Session::present_npcs() const {
  std::vector<std::string> out;
  for (const auto& [name, setup] : scene().setups) out.push_back(name);
  return out;
}

Observation Session::observe() const {
  Observation o;
  o.scene_index = scene().index;
  o.location = scene().location;
  o.present.push_back(script.player().name);
  for (auto& n : present_npcs()) o.present.push_back(std::move(n));
  o.scene_turn = scene_turn + 1;
  return o;
}

int Session::total_calls() const {
  int n = 0;
  for (const auto& l : ledger) n += l.total();
  return n;
}

int Session::lawful_calls() const {
  int n = 0;
  for (const auto& l : ledger) n += l.lawful();
  return n;
}

long inference_count(const ArchitectureConfig& config, const std::vector<SceneTurns>& scenes) {
  long total = 0;
  for (const auto& s : scenes) {
    const int per_turn = resolve(config, s.mode) == Architecture::DirectorActor ? 2 : 1;
    total += static_cast<long>(s.turns) * per_turn;
    if (config.reflection_period && *config.reflection_period > 0) total += s.turns / *config.reflection_period;
  }
  return total;
}

Session start_session(DramaScript script, ArchitectureConfig architecture, std::string id, const Clock& clock) {
  validate_script(script);
  if (architecture.reflection_period && *architecture.reflection_period <= 0) {
    throw PreconditionError("reflection period must be positive");
  }
  Session s;
  s.id = std::move(id);
  s.created_at = clock ? clock() : utc_now();
  s.script = std::move(script);
  s.architecture = architecture;
  s.chain = s.script.scenes.front().plot_chain;
  return s;
}

// Lint -------------------------------------------------------------------------

std::vector<LintFinding> lint_reflection(const Session& session, const PlotChainDiff& diff) {
  auto words_of = [](std::string_view s) {
    std::set<std::string> out;
    std::string w;
    for (char c : s) {
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'') {
        w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      } else {
        if (!w.empty()) out.insert(w);
        w.clear();
      }
    }
    if (!w.empty()) out.insert(w);
    return out;
  };
  std::string known_text = session.script.title + " " + session.script.background + " ";
  for (const auto& c : session.script.roster) known_text += c.name + " " + c.description + " ";
  std::string future_text;
  for (std::size_t i = 0; i < session.script.scenes.size(); ++i) {
    const auto& sc = session.script.scenes[i];
    std::string t = sc.background + " " + sc.location + " ";
    for (const auto& [n, setup] : sc.setups) t += n + " " + setup + " ";
    for (const auto& p : sc.plot_chain.plots) t += p.description + " ";
    (i <= session.scene_cursor ? known_text : future_text) += t;
  }
  // Memories are things the player has seen too.
  for (const auto& e : session.memory) known_text += e.utterance + " ";
  for (const auto& p : session.chain.plots) known_text += p.description + " ";
  const auto known = words_of(known_text);
  const auto future = words_of(future_text);

  std::vector<LintFinding> out;
  auto check = [&](const std::string& plot_id, const std::string& description) {
    std::string w;
    bool sentence_start = true;
    auto flush = [&] {
      if (w.size() >= 3 && std::isupper(static_cast<unsigned char>(w[0])) && !sentence_start) {
        const auto lw = text::to_lower(w);
        if (!known.contains(lw)) {
          out.push_back({future.contains(lw) ? LintFinding::Kind::FutureSceneEntity : LintFinding::Kind::UnknownEntity,
                         plot_id, w});
        }
      }
    };
    for (char c : description) {
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'') {
        w.push_back(c);
        continue;
      }
      if (!w.empty()) {
        flush();
        sentence_start = false;
      }
      w.clear();
      if (c == '.' || c == '!' || c == '?') sentence_start = true;
    }
    if (!w.empty()) flush();
  };
  for (const auto& m : diff.modified) check(m.id, m.new_description);
  for (const auto& i : diff.inserted) check(i.plot.id, i.plot.description);
  return out;
}

// Prompts ----------------------------------------------------------------------

namespace prompts {

std::vector<ChatMessage> director(const Session& s, std::string_view input) {
  std::string user = scene_block(s) + "\n## Memory\n" + render_memory(s.memory, 0) + "\n## Player input\n" +
                     shown_input(input) +
                     "\n\n## Task\n"
                     "First decide which open plots the conversation, including the player's latest input, has "
                     "now achieved. Then choose the one present character who should respond, and tell them what "
                     "to aim for in their reply. That character cannot see the plot chain, so phrase the "
                     "motivation as an intention, not as a copy of a plot.\n\n" +
                     kClassGuide +
                     "\n## Output format\n"
                     "COMPLETED: [comma-separated plot ids, or empty]\n"
                     "ACTOR: <name of a character present>\n"
                     "MOTIVATION: <what they should aim for>\n"
                     "CLASS: InPlot | Daily | Breaking\n"
                     "STRATEGY: Avoid | IgnoreQuestion | Associate (only for Daily or Breaking)\n";
  return {{Role::System, "You are the director of an interactive drama. You keep the story on course by "
                         "instructing the actors; you never speak to the player yourself."},
          {Role::User, std::move(user)}};
}

std::vector<ChatMessage> actor(const Session& s, const Motivation& z, std::string_view input) {
  const auto* profile = s.script.find_character(z.target_actor);
  std::set<int> scenes_present;
  for (const auto& sc : s.script.scenes) {
    if (sc.setups.contains(z.target_actor)) scenes_present.insert(sc.index);
  }
  const auto obs = s.observe();
  std::string present;
  for (const auto& n : obs.present) {
    if (n == z.target_actor) continue;
    if (!present.empty()) present += ", ";
    present += n;
  }
  std::string user = "## You are\n" + z.target_actor + "\n\n## Profile\n" + (profile ? profile->description : "") +
                     "\n\n## Where you are\nLocation: " + obs.location + "\nWith you: " + present +
                     "\nScene turn: " + std::to_string(obs.scene_turn) + "\n\n## What you remember\n" +
                     render_memory(s.memory, 0, [&](const MemoryEntry& e) {
                       return scenes_present.contains(e.scene_index);
                     }) +
                     "\n## " + s.script.player().name + " just said\n" + shown_input(input) +
                     "\n\n## Your motivation\n" + z.instruction +
                     "\n\n## Task\nReply in character, in one or two sentences, pursuing your motivation.\n\n"
                     "## Output format\n"
                     "TO: <who you are addressing, or all>\n"
                     "SAY: <your line>\n"
                     "ACTION: <optional stage action>\n";
  return {{Role::System, "You are an actor playing " + z.target_actor + " in an interactive drama. Stay in "
                         "character."},
          {Role::User, std::move(user)}};
}

std::vector<ChatMessage> global(const Session& s, std::string_view input) {
  std::string user = scene_block(s) + "\n## Memory\n" + render_memory(s.memory, 0) + "\n## Player input\n" +
                     shown_input(input) +
                     "\n\n## Task\n"
                     "You play every character except the player. First decide which open plots the "
                     "conversation, including the player's latest input, has now achieved. Then pick one present "
                     "character and write their reply, moving the story toward the next open plot.\n\n" +
                     kClassGuide +
                     "\n## Output format\n"
                     "COMPLETED: [comma-separated plot ids, or empty]\n"
                     "SPEAKER: <name of a character present>\n"
                     "TO: <who they address, or all>\n"
                     "SAY: <their line>\n"
                     "ACTION: <optional stage action>\n"
                     "CLASS: InPlot | Daily | Breaking\n"
                     "STRATEGY: Avoid | IgnoreQuestion | Associate (only for Daily or Breaking)\n";
  return {{Role::System, "You run an interactive drama, voicing all of its characters."},
          {Role::User, std::move(user)}};
}

std::vector<ChatMessage> reflection(const Session& s, std::string_view input) {
  const auto player = s.script.player().name;
  std::string user =
      scene_block(s) + "\n## What the player has said and heard\n" +
      render_memory(s.memory, 0,
                    [&](const MemoryEntry& e) {
                      return e.from_player || e.addressee == player || e.addressee == "all";
                    }) +
      "\n## Player input\n" + shown_input(input) +
      "\n\n## Task\n"
      "Adapt the plot chain to what this player has shown interest in. You may rewrite ONE open plot or add "
      "ONE new plot; leave everything else exactly as it is. Never change, drop or reorder plots marked done. "
      "List the whole chain in order, one plot per line, keeping each existing id; use NEW for an added plot.\n\n"
      "## Output format\n"
      "PLOT <id>: <description>\n"
      "PLOT NEW: <description>\n";
  return {{Role::System, "You are the director of an interactive drama reviewing the plan for the current scene."},
          {Role::User, std::move(user)}};
}

std::vector<ChatMessage> classification(const Session& s, std::string_view input) {
  std::string user = "## Scene\nLocation: " + s.scene().location + "\n\n## Plot chain\n" + render_chain(s.chain) +
                     "\n## Player input\n" + shown_input(input) + "\n\n" + kClassGuide +
                     "\n## Output format\nCLASS: InPlot | Daily | Breaking\n"
                     "STRATEGY: Avoid | IgnoreQuestion | Associate (only for Daily or Breaking)\n";
  return {{Role::System, "You classify player inputs in an interactive drama."}, {Role::User, std::move(user)}};
}

}  // namespace prompts

// Engine -----------------------------------------------------------------------

Engine::Engine(llm::Gateway& gateway, EngineOptions options) : gateway_(gateway), options_(options) {}

Engine::Exchange Engine::ask(std::string purpose, std::vector<ChatMessage> messages, double temperature) {
  auto c = gateway_.complete(make_request(std::move(purpose), messages, temperature));
  return {std::move(messages), std::move(c.text)};
}

std::string Engine::repair(std::vector<ChatMessage> messages, const std::string& response, const std::string& problem,
                           TurnLedger& ledger) {
  messages.push_back({Role::Assistant, response});
  messages.push_back({Role::User, "Your reply could not be used: " + problem +
                                      ". Answer again using exactly the requested format."});
  ++ledger.repair;
  return gateway_.complete(make_request("repair", std::move(messages), llm::kJudgingTemperature)).text;
}

ClassificationReply Engine::classify_input(const Session& session, std::string_view player_input) {
  if (session.status == SessionStatus::Finished) throw SessionFinished("session " + session.id + " is finished");
  if (text::trim(player_input).empty()) return {InputClass::Breaking, ReplyStrategy::Avoid};
  const auto ex = ask("classifier", prompts::classification(session, player_input), llm::kJudgingTemperature);
  return extract_classification(ex.response);
}

void Engine::apply_completions(Session& s, const std::vector<std::string>& completed,
                               const std::vector<std::string>& reopened, Decision& decision,
                               std::vector<std::string>& warnings) {
  for (const auto& id : completed) {
    const Plot* p = s.chain.find(id);
    if (!p) {
      warnings.push_back("dropped completion of unknown plot '" + id + "'");
      continue;
    }
    if (p->completed) continue;
    s.chain = mark_complete(s.chain, id);
    decision.asserted_completions.push_back(id);
  }
  for (const auto& id : reopened) warnings.push_back("ignored request to reopen plot '" + id + "'");
}

ReflectionRecord Engine::reflect(Session& s, std::string_view input, TurnLedger& ledger) {
  const int k = s.architecture.reflection_period.value_or(0);
  const int scene_turn = s.scene_turn + 1;
  if (k <= 0 || scene_turn % k != 0) {
    throw PreconditionError("reflection runs only on scene turns that are multiples of k");
  }
  ReflectionRecord rec;
  rec.performed = true;
  ++ledger.reflection;
  std::string response;
  try {
    response = ask("reflection", prompts::reflection(s, input), llm::kJudgingTemperature).response;
  } catch (const Error& e) {
    rec.error = std::string("reflection skipped: ") + e.what();
    return rec;
  }
  std::vector<ProposedPlot> proposal;
  try {
    proposal = extract_reflection(response);
  } catch (const MalformedDecision& e) {
    rec.error = std::string("reflection skipped: ") + e.what();
    return rec;
  }

  PlotChain proposed;
  int fresh = s.next_reflected_id;
  for (const auto& pp : proposal) {
    const Plot* existing = pp.id ? s.chain.find(*pp.id) : nullptr;
    if (existing) {
      Plot p = *existing;
      p.description = pp.description;
      proposed.plots.push_back(std::move(p));
    } else {
      Plot p;
      p.id = "r" + std::to_string(fresh++);
      p.description = pp.description;
      p.origin = PlotOrigin::Reflected;
      proposed.plots.push_back(std::move(p));
    }
  }
  auto verdict = enforce_reflection_bound(s.chain, proposed, s.architecture.reflection_budget);
  if (verdict.accepted) {
    rec.lint = lint_reflection(s, verdict.diff);
    s.chain = verdict.chain;
    s.next_reflected_id += static_cast<int>(verdict.diff.inserted.size());
  }
  rec.verdict = std::move(verdict);
  return rec;
}

TurnRecord Engine::step(Session& live, std::string_view player_input) {
  if (live.status == SessionStatus::Finished) throw SessionFinished("session " + live.id + " is finished");
  Session s = live;
  if (s.status == SessionStatus::SceneTransition) s.status = SessionStatus::Active;

  TurnRecord rec;
  rec.turn = s.turn + 1;
  rec.scene_index = s.scene().index;
  rec.scene_turn = s.scene_turn + 1;
  rec.player_input = text::trim(text::normalize_newlines(player_input));
  rec.architecture = s.current_architecture();
  rec.calls.turn = rec.turn;
  rec.calls.scene_index = rec.scene_index;
  rec.calls.architecture = rec.architecture;
  const std::string input = rec.player_input;
  const bool blank = input.empty();
  const std::string player = s.script.player().name;

  try {
    if (s.architecture.reflection_period && rec.scene_turn % *s.architecture.reflection_period == 0) {
      rec.reflection = reflect(s, input, rec.calls);
      if (rec.reflection.error) rec.warnings.push_back(*rec.reflection.error);
      if (rec.reflection.verdict && !rec.reflection.verdict->accepted) {
        std::string v;
        for (auto b : rec.reflection.verdict->violations) v += (v.empty() ? "" : ", ") + std::string(to_string(b));
        rec.warnings.push_back("reflection rejected: " + v);
      }
    }

    Decision& d = rec.decision;
    std::optional<InputClass> cls;
    std::optional<ReplyStrategy> strategy;
    if (rec.architecture == Architecture::OneForAll) {
      auto ex = ask("global", prompts::global(s, input), llm::kCreativeTemperature);
      StructuredDecision sd;
      std::string problem;
      try {
        sd = extract_structured_decision(ex.response);
        if (!is_present_npc(s, sd.speaker)) problem = "SPEAKER '" + sd.speaker + "' is not a character present";
      } catch (const MalformedDecision& e) {
        problem = e.what();
      }
      if (!problem.empty()) {
        const auto fixed = repair(ex.messages, ex.response, problem, rec.calls);
        try {
          sd = extract_structured_decision(fixed);
        } catch (const MalformedDecision& e) {
          throw TurnFailed(std::string("global agent reply unusable after repair: ") + e.what());
        }
        if (!is_present_npc(s, sd.speaker)) {
          throw TurnFailed("global agent chose '" + sd.speaker + "', who is not in the scene");
        }
      }
      ++rec.calls.global;
      apply_completions(s, sd.completed, sd.reopened, d, rec.warnings);
      d.speaker = sd.speaker;
      d.addressee = sd.addressee;
      d.utterance = sd.utterance;
      d.action = sd.action;
      cls = sd.input_class;
      strategy = sd.strategy;
    } else {
      auto ex = ask("director", prompts::director(s, input), llm::kJudgingTemperature);
      ++rec.calls.director;
      MotivationReply mr;
      std::string problem;
      try {
        mr = extract_motivation(ex.response);
        if (!is_present_npc(s, mr.actor)) problem = "ACTOR '" + mr.actor + "' is not a character present";
      } catch (const MalformedDecision& e) {
        problem = e.what();
      }
      if (!problem.empty()) {
        const auto fixed = repair(ex.messages, ex.response, problem, rec.calls);
        try {
          mr = extract_motivation(fixed);
        } catch (const MalformedDecision& e) {
          throw TurnFailed(std::string("director reply unusable after repair: ") + e.what());
        }
        if (!is_present_npc(s, mr.actor)) {
          throw TurnFailed("director chose '" + mr.actor + "', who is not in the scene");
        }
      }
      // The chain is updated before the actor speaks.
      apply_completions(s, mr.completed, mr.reopened, d, rec.warnings);
      rec.motivation = Motivation{mr.actor, mr.motivation, rec.turn};
      cls = mr.input_class;
      strategy = mr.strategy;

      auto ax = ask("actor", prompts::actor(s, *rec.motivation, input), llm::kCreativeTemperature);
      ++rec.calls.actor;
      ActorReply ar;
      try {
        ar = extract_actor_reply(ax.response);
      } catch (const MalformedDecision& e) {
        const auto fixed = repair(ax.messages, ax.response, e.what(), rec.calls);
        try {
          ar = extract_actor_reply(fixed);
        } catch (const MalformedDecision& e2) {
          throw TurnFailed(std::string("actor reply unusable after repair: ") + e2.what());
        }
      }
      d.speaker = mr.actor;
      d.addressee = ar.addressee;
      d.utterance = ar.utterance;
      d.action = ar.action;
    }

    d.input_class = cls.value_or(InputClass::InPlot);
    d.strategy = strategy;
    if (blank && d.input_class != InputClass::Breaking) {
      d.input_class = InputClass::Breaking;
      if (!d.strategy) d.strategy = ReplyStrategy::Avoid;
    }
    if (d.input_class == InputClass::InPlot) d.strategy.reset();
  } catch (const TurnFailed&) {
    throw;
  } catch (const ProviderUnavailable& e) {
    throw TurnFailed(std::string("provider unavailable: ") + e.what(), true);
  } catch (const AuthError& e) {
    throw TurnFailed(std::string("provider rejected credentials: ") + e.what(), true);
  } catch (const Error& e) {
    throw TurnFailed(e.what());
  }

  // Memory, after the chain update.
  MemoryEntry pe;
  pe.seq = s.next_seq++;
  pe.turn = rec.turn;
  pe.speaker = player;
  pe.addressee = "all";
  pe.utterance = input;
  pe.scene_index = rec.scene_index;
  pe.from_player = true;
  s.memory.push_back(pe);
  MemoryEntry ne;
  ne.seq = s.next_seq++;
  ne.turn = rec.turn;
  ne.speaker = rec.decision.speaker;
  ne.addressee = rec.decision.addressee;
  ne.utterance = rec.decision.utterance;
  ne.action = rec.decision.action;
  ne.scene_index = rec.scene_index;
  s.memory.push_back(ne);

  s.turn = rec.turn;
  s.scene_turn = rec.scene_turn;
  s.ledger.push_back(rec.calls);

  if (is_scene_complete(s.chain)) {
    if (s.scene_cursor + 1 >= s.script.scenes.size()) {
      s.status = SessionStatus::Finished;
    } else {
      ++s.scene_cursor;
      s.chain = s.scene().plot_chain;
      s.scene_turn = 0;
      s.status = SessionStatus::SceneTransition;
      rec.next_scene = SceneHeader{s.scene().index, s.scene().location, s.scene().background, s.scene().is_flashback};
    }
  }
  live = std::move(s);
  return rec;
}

}  // namespace stagecraft::runtime
