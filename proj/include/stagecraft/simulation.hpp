#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stagecraft/llm.hpp"
#include "stagecraft/runtime.hpp"

// Automated playthroughs: an LLM player agent driven by one of the shipped
// aggressive personas talks to the engine until the drama ends or a cutoff.
namespace stagecraft::simulation {

inline constexpr int kDefaultCutoff = 60;
inline constexpr std::size_t kPersonaCount = 10;

struct PlayerPersona {
  std::string id;    // "grumpy-guy"
  std::string name;  // "Grumpy Guy"
  std::string description;
};

class PersonaCatalog {
 public:
  static PersonaCatalog from_json(const nlohmann::json& doc);
  static PersonaCatalog load(const std::filesystem::path& file);
  static PersonaCatalog load_default();  // data_dir()/personas/personas.json

  const std::vector<PlayerPersona>& personas() const { return personas_; }
  /// By id or display name, case-insensitive. Throws Error when absent.
  const PlayerPersona& find(std::string_view key) const;

  nlohmann::json to_json() const;
  std::string fingerprint() const;

 private:
  std::vector<PlayerPersona> personas_;
};

struct SceneProgress {
  int scene_index = 0;
  int completed = 0;
  int total = 0;
  int turns = 0;
};

struct SimReport {
  std::string persona;
  runtime::ArchitectureConfig architecture;
  int turns = 0;
  bool finished = false;
  bool cutoff = false;
  std::vector<SceneProgress> scenes;  // scenes reached, in order
  double completion = 0.0;            // completed / total over the whole script

  runtime::TurnLedger calls;  // summed over turns; turn/scene fields unused
  long predicted_calls = 0;   // inference_count over the turns actually played

  // class -> strategy -> count; InPlot turns are counted under "none".
  std::map<std::string, std::map<std::string, int>> strategies;
  int reflections = 0;
  int reflections_accepted = 0;
  int reflections_rejected = 0;
  int reflections_skipped = 0;
  int lint_flags = 0;
  int player_calls = 0;
  std::optional<std::string> failure;  // provider error that aborted the run

  bool ledger_matches() const { return calls.lawful() == predicted_calls; }
};

nlohmann::json to_json(const SimReport& r);

struct Playthrough {
  SimReport report;
  std::vector<nlohmann::json> events;  // session log: started, turns, failure
};

namespace prompts {
std::vector<llm::ChatMessage> player(const PlayerPersona& persona, const runtime::Session& s);
}

/// Reads a player reply: an optional "SAY:" prefix is stripped, the rest kept.
std::string extract_player_line(std::string_view response);

struct PlaythroughOptions {
  int max_turns = kDefaultCutoff;
};

/// Alternates player-agent turns and engine steps. Provider failures end the
/// run early with `report.failure` set; PreconditionError when max_turns <= 0.
Playthrough run_playthrough(const DramaScript& script, const PlayerPersona& persona,
                            const runtime::ArchitectureConfig& architecture, const PlaythroughOptions& options,
                            llm::Gateway& drama, llm::Gateway& player, const std::string& session_id = "sim");

// Comparison -------------------------------------------------------------------

struct ComparisonRow {
  std::string label;  // "director-actor", "hybrid", "hybrid, no reflection"
  runtime::ArchitectureConfig architecture;
  std::vector<SimReport> reports;
  int turns = 0;
  long calls = 0;  // lawful calls over all playthroughs
  long reflection_calls = 0;
  double completion = 0.0;  // mean over playthroughs
  double speedup = 1.0;     // director-actor calls per turn / this row's
};

struct Comparison {
  std::vector<ComparisonRow> rows;
};

nlohmann::json to_json(const Comparison& c);
std::string render_table(const Comparison& c);

/// Makes a fresh provider per playthrough, so every row sees identical replies.
using ProviderFactory = std::function<std::shared_ptr<llm::ChatProvider>()>;

/// Rows: director-actor, hybrid and hybrid with reflection disabled (k unset).
Comparison compare_architectures(const DramaScript& script, const std::vector<PlayerPersona>& personas,
                                 const ProviderFactory& drama, const ProviderFactory& player,
                                 const PlaythroughOptions& options = {}, int reflection_period = 5);

}  // namespace stagecraft::simulation
