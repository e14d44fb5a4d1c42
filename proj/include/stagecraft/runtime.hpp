#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stagecraft/grammar.hpp"
#include "stagecraft/llm.hpp"
#include "stagecraft/plot_diff.hpp"
#include "stagecraft/script.hpp"

// The live drama engine. A session walks the scenes of a script one player
// input at a time; each turn updates the scene's plot chain and produces one
// NPC response, with a bounded plot reflection every k scene turns.
namespace stagecraft::runtime {

enum class Architecture { DirectorActor, OneForAll, Hybrid };
std::string_view to_string(Architecture a);
std::optional<Architecture> parse_architecture(std::string_view s);  // "director-actor", "one-for-all", "hybrid"

struct ArchitectureConfig {
  Architecture kind = Architecture::Hybrid;
  std::optional<int> reflection_period = 5;  // k; nullopt disables reflection
  int reflection_budget = 1;

  bool operator==(const ArchitectureConfig&) const = default;
};

/// Architecture actually used for a scene (Hybrid: narrative scenes run
/// one-for-all, interactive scenes director-actor).
Architecture resolve(const ArchitectureConfig& config, SceneMode mode);

struct MemoryEntry {
  std::uint64_t seq = 0;  // strictly increasing within a session
  int turn = 0;           // player input and its response share a turn
  std::string speaker;
  std::string addressee;  // a name or "all"
  std::string utterance;
  std::optional<std::string> action;
  int scene_index = 0;
  bool from_player = false;

  bool operator==(const MemoryEntry&) const = default;
};

struct Motivation {
  std::string target_actor;
  std::string instruction;
  int turn = 0;

  bool operator==(const Motivation&) const = default;
};

struct Decision {
  std::string speaker;
  std::string addressee;
  std::string utterance;
  std::optional<std::string> action;
  std::vector<std::string> asserted_completions;  // ids actually applied
  InputClass input_class = InputClass::InPlot;
  std::optional<ReplyStrategy> strategy;  // present iff input_class != InPlot

  bool operator==(const Decision&) const = default;
};

// Provider calls made during one turn, by role. Repairs are re-asks after a
// malformed response and sit outside the per-architecture laws.
struct TurnLedger {
  int turn = 0;
  int scene_index = 0;
  Architecture architecture = Architecture::OneForAll;
  int director = 0;
  int actor = 0;
  int global = 0;
  int reflection = 0;
  int repair = 0;

  int total() const { return director + actor + global + reflection + repair; }
  int lawful() const { return total() - repair; }
  bool operator==(const TurnLedger&) const = default;
};

enum class SessionStatus { Active, SceneTransition, Finished };
std::string_view to_string(SessionStatus s);

struct Observation {
  int scene_index = 0;
  std::string location;
  std::vector<std::string> present;  // player first, then the scene's NPCs
  int scene_turn = 0;                // 1-based turn being played in this scene
};

struct Session {
  std::string id;
  std::string created_at;
  DramaScript script;
  ArchitectureConfig architecture;
  std::size_t scene_cursor = 0;  // 0-based into script.scenes
  int turn = 0;                  // completed turns
  int scene_turn = 0;            // completed turns in the current scene
  PlotChain chain;
  std::vector<MemoryEntry> memory;
  std::vector<TurnLedger> ledger;
  SessionStatus status = SessionStatus::Active;
  int next_reflected_id = 1;  // reflected plots are named r1, r2, ...
  std::uint64_t next_seq = 1;

  const Scene& scene() const { return script.scenes.at(scene_cursor); }
  Architecture current_architecture() const { return resolve(architecture, scene().mode); }
  /// NPCs with a setup in the current scene.
  std::vector<std::string> present_npcs() const;
  Observation observe() const;
  int total_calls() const;
  int lawful_calls() const;

  bool operator==(const Session&) const = default;
};

/// Lint finding on a reflected plot that names something the player could
/// not know about yet.
struct LintFinding {
  enum class Kind { FutureSceneEntity, UnknownEntity } kind;
  std::string plot_id;
  std::string token;
};
std::vector<LintFinding> lint_reflection(const Session& session, const PlotChainDiff& diff);

struct ReflectionRecord {
  bool performed = false;
  std::optional<std::string> error;  // provider/parse failure: skipped
  std::optional<ReflectionVerdict> verdict;
  std::vector<LintFinding> lint;
};

struct SceneHeader {
  int index = 0;
  std::string location;
  std::string background;
  bool is_flashback = false;
};

struct TurnRecord {
  int turn = 0;
  int scene_index = 0;
  int scene_turn = 0;
  std::string player_input;
  Architecture architecture = Architecture::OneForAll;
  ReflectionRecord reflection;
  std::optional<Motivation> motivation;
  Decision decision;
  TurnLedger calls;
  std::vector<std::string> warnings;
  std::optional<SceneHeader> next_scene;  // set when this turn closed a scene
};

// Events -----------------------------------------------------------------------

using Clock = std::function<std::string()>;
std::string utc_now();  // ISO-8601, seconds precision

Session start_session(DramaScript script, ArchitectureConfig architecture, std::string id,
                      const Clock& clock = utc_now);

nlohmann::json started_event(const Session& session);
nlohmann::json turn_event(const Session& after, const TurnRecord& record);
nlohmann::json failed_event(const Session& session, std::string_view input, std::string_view error);

/// Rebuilds a session from its event log. Throws SchemaError on a malformed log.
Session replay(const std::vector<nlohmann::json>& events);
std::vector<nlohmann::json> read_event_log(std::string_view jsonl);

nlohmann::json to_json(const MemoryEntry& e);
nlohmann::json to_json(const Decision& d);
nlohmann::json to_json(const TurnLedger& l);
nlohmann::json to_json(const TurnRecord& r);
nlohmann::json to_json(const ArchitectureConfig& a);
ArchitectureConfig architecture_from_json(const nlohmann::json& j);
/// Public view of a session: scene, chain, status and ledger totals.
nlohmann::json state_json(const Session& s);

// Engine -------------------------------------------------------------------------

namespace prompts {
std::vector<llm::ChatMessage> director(const Session& s, std::string_view input);
std::vector<llm::ChatMessage> actor(const Session& s, const Motivation& z, std::string_view input);
std::vector<llm::ChatMessage> global(const Session& s, std::string_view input);
std::vector<llm::ChatMessage> reflection(const Session& s, std::string_view input);
std::vector<llm::ChatMessage> classification(const Session& s, std::string_view input);
}  // namespace prompts

struct EngineOptions {
  std::size_t memory_window = 0;  // 0: the whole flattened memory
};

class Engine {
 public:
  explicit Engine(llm::Gateway& gateway, EngineOptions options = {});

  /// One turn. On success `session` advances and the record is returned; on
  /// failure (TurnFailed) `session` is untouched. SessionFinished when over.
  TurnRecord step(Session& session, std::string_view player_input);

  /// Stand-alone classification; blank input is Breaking with no call.
  ClassificationReply classify_input(const Session& session, std::string_view player_input);

  /// Reflection against the current chain. Throws PreconditionError unless
  /// the scene turn being played is a positive multiple of k.
  ReflectionRecord reflect(Session& session, std::string_view player_input, TurnLedger& ledger);

 private:
  struct Exchange {
    std::vector<llm::ChatMessage> messages;
    std::string response;
  };
  Exchange ask(std::string purpose, std::vector<llm::ChatMessage> messages, double temperature);
  std::string repair(std::vector<llm::ChatMessage> messages, const std::string& response, const std::string& problem,
                     TurnLedger& ledger);

  void apply_completions(Session& s, const std::vector<std::string>& completed,
                         const std::vector<std::string>& reopened, Decision& decision,
                         std::vector<std::string>& warnings);

  llm::Gateway& gateway_;
  EngineOptions options_;
};

/// Closed-form call count: per turn 1 (one-for-all) or 2 (director-actor),
/// plus floor(turns/k) reflections per scene.
struct SceneTurns {
  SceneMode mode = SceneMode::Interactive;
  int turns = 0;
};
long inference_count(const ArchitectureConfig& config, const std::vector<SceneTurns>& scenes);

/// Mock stubs understood by the engine's prompts ("plot-walker").
llm::StubRegistry builtin_stubs();

}  // namespace stagecraft::runtime
