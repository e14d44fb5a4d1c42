#include "stagecraft/playbook.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "stagecraft/error.hpp"
#include "stagecraft/text.hpp"

#ifndef STAGECRAFT_DEFAULT_DATA_DIR
#define STAGECRAFT_DEFAULT_DATA_DIR "."
#endif

namespace stagecraft {

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("STAGECRAFT_DATA_DIR"); env && *env) return env;
  return STAGECRAFT_DEFAULT_DATA_DIR;
}

}  // namespace stagecraft

namespace stagecraft::playbook {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kSituationCount> kSituationNames = {
    "Love", "Phoenix", "Cinderella", "LoveTriangle", "Revenge", "Family", "Reunion", "Savior"};
constexpr std::array<std::string_view, kTechniqueCount> kTechniqueNames = {
    "Suspense", "Twist", "NonLinear", "MultipleNarrative", "Irony", "Symbolism"};

}  // namespace

std::string_view to_string(SituationId id) { return kSituationNames.at(static_cast<std::size_t>(id)); }
std::string_view to_string(TechniqueId id) { return kTechniqueNames.at(static_cast<std::size_t>(id)); }

SituationId situation_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kSituationNames.size(); ++i) {
    if (kSituationNames[i] == s) return static_cast<SituationId>(i);
  }
  throw SchemaError("unknown dramatic situation '" + std::string(s) + "'");
}

TechniqueId technique_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kTechniqueNames.size(); ++i) {
    if (kTechniqueNames[i] == s) return static_cast<TechniqueId>(i);
  }
  throw SchemaError("unknown narrative technique '" + std::string(s) + "'");
}

json to_json(const TechniqueSelection& s) {
  json techniques = json::array();
  for (auto t : s.techniques) techniques.push_back(to_string(t));
  return {{"situation", to_string(s.situation)}, {"techniques", techniques}, {"iteration", s.iteration}};
}

TechniqueSelection selection_from_json(const json& j) {
  TechniqueSelection s;
  s.situation = situation_from_string(j.at("situation").get<std::string>());
  const auto& t = j.at("techniques");
  if (!t.is_array() || t.size() != kTechniquesPerStory) throw SchemaError("selection needs exactly 3 techniques");
  for (std::size_t i = 0; i < kTechniquesPerStory; ++i) s.techniques[i] = technique_from_string(t[i].get<std::string>());
  s.iteration = j.value("iteration", 1);
  return s;
}

Catalog Catalog::from_json(const json& doc) {
  Catalog c;
  for (const auto& s : doc.at("situations")) {
    DramaticSituation d;
    d.id = situation_from_string(s.at("id").get<std::string>());
    d.name = s.at("name").get<std::string>();
    const auto& acts = s.at("acts");
    if (acts.size() != 3) throw SchemaError("situation '" + d.name + "' needs exactly three acts");
    for (std::size_t i = 0; i < 3; ++i) d.acts[i] = acts[i].get<std::string>();
    d.exemplar = s.at("exemplar").get<std::string>();
    c.situations_.push_back(std::move(d));
  }
  for (const auto& t : doc.at("techniques")) {
    NarrativeTechnique n;
    n.id = technique_from_string(t.at("id").get<std::string>());
    n.name = t.at("name").get<std::string>();
    n.description = t.at("description").get<std::string>();
    n.prompt_text = t.at("prompt_text").get<std::string>();
    c.techniques_.push_back(std::move(n));
  }
  if (c.situations_.size() != kSituationCount) throw SchemaError("catalog must hold exactly 8 dramatic situations");
  if (c.techniques_.size() != kTechniqueCount) throw SchemaError("catalog must hold exactly 6 narrative techniques");
  for (std::size_t i = 0; i < kSituationCount; ++i) c.situation(static_cast<SituationId>(i));
  for (std::size_t i = 0; i < kTechniqueCount; ++i) c.technique(static_cast<TechniqueId>(i));
  return c;
}

Catalog Catalog::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open catalog file " + file.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw SchemaError("catalog " + file.string() + ": " + e.what());
  }
}

Catalog Catalog::load_default() { return load(data_dir() / "playbook" / "catalog.json"); }

const DramaticSituation& Catalog::situation(SituationId id) const {
  auto it = std::find_if(situations_.begin(), situations_.end(), [&](const auto& s) { return s.id == id; });
  if (it == situations_.end()) throw SchemaError("catalog lacks situation " + std::string(to_string(id)));
  return *it;
}

const NarrativeTechnique& Catalog::technique(TechniqueId id) const {
  auto it = std::find_if(techniques_.begin(), techniques_.end(), [&](const auto& t) { return t.id == id; });
  if (it == techniques_.end()) throw SchemaError("catalog lacks technique " + std::string(to_string(id)));
  return *it;
}

json Catalog::to_json() const {
  json situations = json::array();
  for (const auto& s : situations_) {
    situations.push_back({{"id", playbook::to_string(s.id)},
                          {"name", s.name},
                          {"acts", json::array({s.acts[0], s.acts[1], s.acts[2]})},
                          {"exemplar", s.exemplar}});
  }
  json techniques = json::array();
  for (const auto& t : techniques_) {
    techniques.push_back({{"id", playbook::to_string(t.id)},
                          {"name", t.name},
                          {"description", t.description},
                          {"prompt_text", t.prompt_text}});
  }
  return {{"situations", situations}, {"techniques", techniques}};
}

std::string Catalog::fingerprint() const { return text::sha256_hex(to_json().dump()); }

std::vector<TechniqueSelection> sample_selections(std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);

  std::array<SituationId, kSituationCount> situations{};
  for (std::size_t i = 0; i < kSituationCount; ++i) situations[i] = static_cast<SituationId>(i);

  // All C(6,3) = 20 technique subsets, each stored in ascending order.
  std::vector<std::array<TechniqueId, kTechniquesPerStory>> subsets;
  for (std::size_t a = 0; a < kTechniqueCount; ++a) {
    for (std::size_t b = a + 1; b < kTechniqueCount; ++b) {
      for (std::size_t c = b + 1; c < kTechniqueCount; ++c) {
        subsets.push_back({static_cast<TechniqueId>(a), static_cast<TechniqueId>(b), static_cast<TechniqueId>(c)});
      }
    }
  }

  // Partial Fisher-Yates: the first kIterations slots are a uniform draw
  // without replacement.
  auto draw_front = [&rng](auto& pool) {
    for (std::size_t i = 0; i < kIterations; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
  };
  draw_front(situations);
  draw_front(subsets);

  std::vector<TechniqueSelection> out;
  for (std::size_t i = 0; i < kIterations; ++i) {
    out.push_back({situations[i], subsets[i], static_cast<int>(i + 1)});
  }
  return out;
}

std::string situation_prompt_text(const Catalog& catalog, SituationId id) {
  const auto& s = catalog.situation(id);
  std::ostringstream out;
  out << s.name << ":\n";
  for (const auto& act : s.acts) out << "- " << act << "\n";
  return out.str();
}

std::string techniques_prompt_text(const Catalog& catalog, const TechniqueSelection& selection) {
  std::ostringstream out;
  for (auto id : selection.techniques) {
    const auto& t = catalog.technique(id);
    out << t.name << ": " << t.prompt_text << "\n";
  }
  return out.str();
}

std::string catalog_prompt_text(const Catalog& catalog, const TechniqueSelection& selection) {
  return "Dramatic Situation:\n" + situation_prompt_text(catalog, selection.situation) +
         "\nNarrative Techniques:\n" + techniques_prompt_text(catalog, selection);
}

}  // namespace stagecraft::playbook
