#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace stagecraft {

inline constexpr std::string_view kScriptSchemaId = "stagecraft-script/v1";

struct CharacterProfile {
  std::string name;
  std::string description;
  bool is_player = false;

  bool operator==(const CharacterProfile&) const = default;
};

enum class PlotOrigin { Scripted, Reflected };

struct Plot {
  std::string id;
  std::string description;
  bool completed = false;
  std::optional<std::string> owner;
  PlotOrigin origin = PlotOrigin::Scripted;

  bool operator==(const Plot&) const = default;
};

// Ordered plot objectives of one scene. Completion flags only ever move
// false -> true during a session.
struct PlotChain {
  std::vector<Plot> plots;

  bool operator==(const PlotChain&) const = default;

  const Plot* find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }
  std::size_t size() const { return plots.size(); }
  bool empty() const { return plots.empty(); }
};

enum class SceneMode { Narrative, Interactive };

struct Scene {
  int index = 1;  // 1-based
  std::string background;
  std::string location;
  std::map<std::string, std::string> setups;  // character name -> scene-specific motivation
  PlotChain plot_chain;
  SceneMode mode = SceneMode::Interactive;
  bool is_flashback = false;

  bool operator==(const Scene&) const = default;
};

struct DramaScript {
  std::string title;
  std::string background;
  std::vector<CharacterProfile> roster;
  std::vector<Scene> scenes;

  bool operator==(const DramaScript&) const = default;

  const CharacterProfile* find_character(std::string_view name) const;
  const CharacterProfile& player() const;
};

enum class ValidationLevel {
  Manual,     // hand-authored scripts: at least one scene
  Generated,  // generator output: 3..5 scenes
};

/// Parses a `stagecraft-script/v1` JSON document and validates it.
/// Throws SyntaxError for malformed JSON and SchemaError for structural or
/// referential problems.
DramaScript parse_script(std::string_view document, ValidationLevel level = ValidationLevel::Manual);
DramaScript script_from_json(const nlohmann::json& doc, ValidationLevel level = ValidationLevel::Manual);

/// Throws SchemaError describing the first invariant violation found.
void validate_script(const DramaScript& script, ValidationLevel level = ValidationLevel::Manual);

nlohmann::json to_json(const DramaScript& script);
nlohmann::json to_json(const PlotChain& chain);
nlohmann::json to_json(const Plot& plot);
PlotChain chain_from_json(const nlohmann::json& plots);
std::string serialize_script(const DramaScript& script);

std::string_view to_string(SceneMode mode);
std::string_view to_string(PlotOrigin origin);

// Plot chain state machine ---------------------------------------------------

/// Returns a copy of `chain` with `plot_id` completed. Idempotent; throws
/// UnknownPlot when the id is absent.
PlotChain mark_complete(const PlotChain& chain, std::string_view plot_id);

/// True iff every plot is completed (vacuously true for an empty chain).
bool is_scene_complete(const PlotChain& chain);

}  // namespace stagecraft
