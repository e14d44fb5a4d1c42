#include "stagecraft/script.hpp"

#include <algorithm>
#include <set>

#include "stagecraft/error.hpp"

namespace stagecraft {

using nlohmann::json;

const Plot* PlotChain::find(std::string_view id) const {
  auto it = std::find_if(plots.begin(), plots.end(), [&](const Plot& p) { return p.id == id; });
  return it == plots.end() ? nullptr : &*it;
}

const CharacterProfile* DramaScript::find_character(std::string_view name) const {
  auto it = std::find_if(roster.begin(), roster.end(), [&](const CharacterProfile& c) { return c.name == name; });
  return it == roster.end() ? nullptr : &*it;
}

const CharacterProfile& DramaScript::player() const {
  auto it = std::find_if(roster.begin(), roster.end(), [](const CharacterProfile& c) { return c.is_player; });
  if (it == roster.end()) throw SchemaError("script has no player role");
  return *it;
}

std::string_view to_string(SceneMode mode) {
  return mode == SceneMode::Narrative ? "narrative" : "interactive";
}

std::string_view to_string(PlotOrigin origin) {
  return origin == PlotOrigin::Scripted ? "scripted" : "reflected";
}

namespace {

// Converts a byte offset reported by the JSON parser into line/column.
std::pair<std::size_t, std::size_t> line_and_column(std::string_view doc, std::size_t offset) {
  offset = std::min(offset, doc.size());
  std::size_t line = 1;
  std::size_t column = 1;
  for (std::size_t i = 0; i < offset; ++i) {
    if (doc[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(where + ": missing field '" + key + "'");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) throw SchemaError(where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

bool optional_bool(const json& obj, const char* key, bool fallback, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_boolean()) throw SchemaError(where + ": field '" + key + "' must be a boolean");
  return it->get<bool>();
}

Plot plot_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": plot must be an object");
  Plot p;
  p.id = require_string(j, "id", where);
  p.description = require_string(j, "description", where + " plot '" + p.id + "'");
  p.completed = optional_bool(j, "completed", false, where);
  if (auto it = j.find("owner"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw SchemaError(where + ": plot owner must be a string");
    p.owner = it->get<std::string>();
  }
  if (auto it = j.find("origin"); it != j.end()) {
    const auto origin = it->is_string() ? it->get<std::string>() : std::string{};
    if (origin == "scripted") {
      p.origin = PlotOrigin::Scripted;
    } else if (origin == "reflected") {
      p.origin = PlotOrigin::Reflected;
    } else {
      throw SchemaError(where + ": plot origin must be 'scripted' or 'reflected'");
    }
  }
  return p;
}

}  // namespace

PlotChain chain_from_json(const json& plots) {
  if (!plots.is_array()) throw SchemaError("plots must be an array");
  PlotChain chain;
  for (const auto& p : plots) chain.plots.push_back(plot_from_json(p, "plot chain"));
  return chain;
}

DramaScript script_from_json(const json& doc, ValidationLevel level) {
  if (!doc.is_object()) throw SchemaError("script document must be a JSON object");
  if (auto it = doc.find("schema"); it != doc.end()) {
    if (!it->is_string() || it->get<std::string>() != kScriptSchemaId) {
      throw SchemaError("unsupported schema id; expected '" + std::string(kScriptSchemaId) + "'");
    }
  }

  DramaScript script;
  script.title = require_string(doc, "title", "script");
  script.background = require_string(doc, "background", "script");

  const json& roster = require(doc, "roster", "script");
  if (!roster.is_array()) throw SchemaError("script: 'roster' must be an array");
  for (std::size_t i = 0; i < roster.size(); ++i) {
    const std::string where = "roster[" + std::to_string(i) + "]";
    const json& c = roster[i];
    if (!c.is_object()) throw SchemaError(where + ": must be an object");
    CharacterProfile profile;
    profile.name = require_string(c, "name", where);
    profile.description = require_string(c, "description", where);
    profile.is_player = optional_bool(c, "is_player", false, where);
    script.roster.push_back(std::move(profile));
  }

  const json& scenes = require(doc, "scenes", "script");
  if (!scenes.is_array()) throw SchemaError("script: 'scenes' must be an array");
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::string where = "scenes[" + std::to_string(i) + "]";
    const json& s = scenes[i];
    if (!s.is_object()) throw SchemaError(where + ": must be an object");
    Scene scene;
    const json& index = require(s, "index", where);
    if (!index.is_number_integer()) throw SchemaError(where + ": 'index' must be an integer");
    scene.index = index.get<int>();
    scene.background = require_string(s, "background", where);
    scene.location = require_string(s, "location", where);
    if (auto it = s.find("mode"); it != s.end()) {
      const auto mode = it->is_string() ? it->get<std::string>() : std::string{};
      if (mode == "narrative") {
        scene.mode = SceneMode::Narrative;
      } else if (mode == "interactive") {
        scene.mode = SceneMode::Interactive;
      } else {
        throw SchemaError(where + ": 'mode' must be 'narrative' or 'interactive'");
      }
    }
    scene.is_flashback = optional_bool(s, "is_flashback", false, where);
    if (auto it = s.find("setups"); it != s.end()) {
      if (!it->is_object()) throw SchemaError(where + ": 'setups' must be an object");
      for (const auto& [name, text] : it->items()) {
        if (!text.is_string()) throw SchemaError(where + ": setup for '" + name + "' must be a string");
        scene.setups.emplace(name, text.get<std::string>());
      }
    }
    const json& plots = require(s, "plots", where);
    if (!plots.is_array()) throw SchemaError(where + ": 'plots' must be an array");
    for (const auto& p : plots) scene.plot_chain.plots.push_back(plot_from_json(p, where));
    script.scenes.push_back(std::move(scene));
  }

  validate_script(script, level);
  return script;
}

DramaScript parse_script(std::string_view document, ValidationLevel level) {
  json doc;
  try {
    doc = json::parse(document.begin(), document.end());
  } catch (const json::parse_error& e) {
    auto [line, column] = line_and_column(document, e.byte == 0 ? 0 : e.byte - 1);
    throw SyntaxError("malformed script document: " + std::string(e.what()), line, column);
  }
  return script_from_json(doc, level);
}

void validate_script(const DramaScript& script, ValidationLevel level) {
  if (script.roster.empty()) throw SchemaError("roster is empty");
  std::set<std::string> names;
  int players = 0;
  for (const auto& c : script.roster) {
    if (c.name.empty()) throw SchemaError("roster entry with empty name");
    if (!names.insert(c.name).second) throw SchemaError("duplicate character name '" + c.name + "'");
    if (c.is_player) ++players;
  }
  if (players == 0) throw SchemaError("no roster entry is marked is_player");
  if (players > 1) throw SchemaError("multiple roster entries are marked is_player");
  const std::string& player = script.player().name;

  const std::size_t n = script.scenes.size();
  if (level == ValidationLevel::Generated) {
    if (n < 3 || n > 5) throw SchemaError("generated scripts need 3 to 5 scenes, got " + std::to_string(n));
  } else if (n == 0) {
    throw SchemaError("script has no scenes");
  }

  for (std::size_t i = 0; i < n; ++i) {
    const Scene& scene = script.scenes[i];
    const std::string where = "scene " + std::to_string(i + 1);
    if (scene.index != static_cast<int>(i + 1)) {
      throw SchemaError(where + ": index " + std::to_string(scene.index) + " out of sequence");
    }
    for (const auto& [name, text] : scene.setups) {
      if (!names.contains(name)) throw SchemaError(where + ": setup names unknown character '" + name + "'");
    }
    if (scene.plot_chain.empty()) throw SchemaError(where + ": plot chain is empty");
    std::set<std::string> ids;
    for (const auto& p : scene.plot_chain.plots) {
      if (p.id.empty()) throw SchemaError(where + ": plot with empty id");
      if (!ids.insert(p.id).second) throw SchemaError(where + ": duplicate plot id '" + p.id + "'");
      if (p.description.empty()) throw SchemaError(where + ": plot '" + p.id + "' has an empty description");
      if (p.owner && *p.owner != player && !scene.setups.contains(*p.owner)) {
        throw SchemaError(where + ": plot '" + p.id + "' owner '" + *p.owner + "' is not in the scene");
      }
    }
  }
}

json to_json(const Plot& plot) {
  json j = {{"id", plot.id}, {"description", plot.description}};
  if (plot.owner) j["owner"] = *plot.owner;
  if (plot.completed) j["completed"] = true;
  if (plot.origin != PlotOrigin::Scripted) j["origin"] = to_string(plot.origin);
  return j;
}

json to_json(const PlotChain& chain) {
  json arr = json::array();
  for (const auto& p : chain.plots) arr.push_back(to_json(p));
  return arr;
}

json to_json(const DramaScript& script) {
  json roster = json::array();
  for (const auto& c : script.roster) {
    roster.push_back({{"name", c.name}, {"description", c.description}, {"is_player", c.is_player}});
  }
  json scenes = json::array();
  for (const auto& s : script.scenes) {
    json setups = json::object();
    for (const auto& [name, text] : s.setups) setups[name] = text;
    scenes.push_back({{"index", s.index},
                      {"background", s.background},
                      {"location", s.location},
                      {"mode", to_string(s.mode)},
                      {"is_flashback", s.is_flashback},
                      {"setups", setups},
                      {"plots", to_json(s.plot_chain)}});
  }
  return {{"schema", kScriptSchemaId},
          {"title", script.title},
          {"background", script.background},
          {"roster", roster},
          {"scenes", scenes}};
}

std::string serialize_script(const DramaScript& script) { return to_json(script).dump(2) + "\n"; }

PlotChain mark_complete(const PlotChain& chain, std::string_view plot_id) {
  PlotChain out = chain;
  auto it = std::find_if(out.plots.begin(), out.plots.end(), [&](const Plot& p) { return p.id == plot_id; });
  if (it == out.plots.end()) throw UnknownPlot(std::string(plot_id));
  it->completed = true;
  return out;
}

bool is_scene_complete(const PlotChain& chain) {
  return std::all_of(chain.plots.begin(), chain.plots.end(), [](const Plot& p) { return p.completed; });
}

}  // namespace stagecraft
