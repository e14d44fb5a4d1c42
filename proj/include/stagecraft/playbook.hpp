#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace stagecraft {

/// Root for shipped data files (playbook/, personas/, scripts/). Honors the
/// STAGECRAFT_DATA_DIR environment variable, else the configured build path.
std::filesystem::path data_dir();

}  // namespace stagecraft

namespace stagecraft::playbook {

enum class SituationId { Love, Phoenix, Cinderella, LoveTriangle, Revenge, Family, Reunion, Savior };
enum class TechniqueId { Suspense, Twist, NonLinear, MultipleNarrative, Irony, Symbolism };

inline constexpr std::size_t kSituationCount = 8;
inline constexpr std::size_t kTechniqueCount = 6;
inline constexpr std::size_t kIterations = 3;
inline constexpr std::size_t kTechniquesPerStory = 3;

std::string_view to_string(SituationId id);
std::string_view to_string(TechniqueId id);
SituationId situation_from_string(std::string_view s);
TechniqueId technique_from_string(std::string_view s);

// Macro structure told as setup, confrontation and resolution.
struct DramaticSituation {
  SituationId id{};
  std::string name;
  std::array<std::string, 3> acts;
  std::string exemplar;
};

struct NarrativeTechnique {
  TechniqueId id{};
  std::string name;
  std::string description;  // reference definition
  std::string prompt_text;  // wording used inside writer prompts
};

struct TechniqueSelection {
  SituationId situation{};
  std::array<TechniqueId, kTechniquesPerStory> techniques{};  // ascending, distinct
  int iteration = 1;                                          // 1..3

  bool operator==(const TechniqueSelection&) const = default;
};

nlohmann::json to_json(const TechniqueSelection& s);
TechniqueSelection selection_from_json(const nlohmann::json& j);

class Catalog {
 public:
  static Catalog from_json(const nlohmann::json& doc);
  static Catalog load(const std::filesystem::path& file);
  static Catalog load_default();  // data_dir()/playbook/catalog.json

  const std::vector<DramaticSituation>& situations() const { return situations_; }
  const std::vector<NarrativeTechnique>& techniques() const { return techniques_; }
  const DramaticSituation& situation(SituationId id) const;
  const NarrativeTechnique& technique(TechniqueId id) const;

  nlohmann::json to_json() const;
  // SHA-256 of the canonical serialization; pinned by the test suite.
  std::string fingerprint() const;

 private:
  std::vector<DramaticSituation> situations_;
  std::vector<NarrativeTechnique> techniques_;
};

/// Three selections with pairwise-distinct situations and pairwise-distinct
/// technique sets, drawn uniformly; deterministic per seed.
std::vector<TechniqueSelection> sample_selections(std::uint64_t rng_seed);

std::string situation_prompt_text(const Catalog& catalog, SituationId id);
std::string techniques_prompt_text(const Catalog& catalog, const TechniqueSelection& selection);
std::string catalog_prompt_text(const Catalog& catalog, const TechniqueSelection& selection);

}  // namespace stagecraft::playbook
