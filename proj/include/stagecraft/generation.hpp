#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stagecraft/error.hpp"
#include "stagecraft/llm.hpp"
#include "stagecraft/playbook.hpp"
#include "stagecraft/script.hpp"

// Story generation: three sampled candidates each drafted, critiqued and
// revised; a three-judge vote; three refinement passes; then conversion of
// the winning story into a drama script.
namespace stagecraft::generation {

inline constexpr std::size_t kPremiseMinWords = 50;
inline constexpr std::size_t kPremiseMaxWords = 100;
inline constexpr int kCandidates = 3;
inline constexpr int kJudges = 3;
inline constexpr int kRefinementPasses = 3;

struct Premise {
  std::string text;
  std::size_t word_count = 0;

  static Premise from_text(std::string text);
};

struct Sentence {
  std::string id;  // "s1", "s2", ...; stable across refinement passes
  std::string text;

  bool operator==(const Sentence&) const = default;
};

struct Story {
  std::vector<Sentence> sentences;
  std::string outline;
  playbook::TechniqueSelection selection;
  int revision_round = 0;
  int refinement_round = 0;

  std::string text() const;  // sentences joined by single spaces
  std::size_t word_count() const;

  bool operator==(const Story&) const = default;
};

/// Numbers the sentences of `prose` s1..sN.
std::vector<Sentence> number_sentences(std::string_view prose);

struct Critique {
  std::vector<playbook::TechniqueId> techniques_found;  // subset of the selection, ascending
  std::string effectiveness;
  std::string comment;
};

struct JudgeBallot {
  int judge = 0;   // 1-based
  int choice = 0;  // 1-based candidate index
  std::string rationale;
};

struct VoteRecord {
  std::vector<JudgeBallot> ballots;
  int winner = 0;
  bool tie = false;  // no majority; lowest voted index won
};

/// Majority of the ballots' choices; without one, the lowest index voted for.
int tally(const std::vector<JudgeBallot>& ballots, bool* tie = nullptr);

struct RefinementPass {
  int round = 0;  // 1..3, the story's refinement_round after this pass
  int attempts = 0;
  std::vector<std::string> violations;  // from every rejected attempt
  bool applied = false;                 // false: pre-pass story kept
  Story story;
};

/// Problems with a refined sentence list: original ids must all survive, once
/// each and in order. Ids absent from `before` count as insertions. Empty
/// when compliant.
std::vector<std::string> refinement_violations(const std::vector<Sentence>& before,
                                               const std::vector<Sentence>& after);

struct CandidateRecord {
  int iteration = 0;
  playbook::TechniqueSelection selection;
  Story draft;
  Critique critique;
  Story revised;
};

struct RunReport {
  std::string premise;
  std::uint64_t seed = 0;
  std::vector<playbook::TechniqueSelection> selections;
  std::vector<CandidateRecord> candidates;
  std::optional<VoteRecord> vote;
  std::vector<RefinementPass> refinements;
  std::optional<Story> final_story;
  std::vector<std::string> warnings;
  std::vector<llm::ChatExchange> exchanges;
  std::optional<std::string> failure;
};

nlohmann::json to_json(const Story& story);
nlohmann::json to_json(const Critique& critique);
nlohmann::json to_json(const VoteRecord& vote);
nlohmann::json to_json(const RefinementPass& pass);
nlohmann::json to_json(const RunReport& report);

// Raised by run_pipeline; carries everything recorded up to the failure.
class PipelineError : public Error {
 public:
  PipelineError(const std::string& what, RunReport report, bool provider_failure = false)
      : Error(what), report_(std::move(report)), provider_failure_(provider_failure) {}
  const RunReport& report() const noexcept { return report_; }
  // True when the endpoint failed, as opposed to a non-compliant response.
  bool provider_failure() const noexcept { return provider_failure_; }

 private:
  RunReport report_;
  bool provider_failure_;
};

struct PipelineResult {
  Story story;
  RunReport report;
};

struct GenerationOptions {
  int revise_rounds = 1;
  std::size_t target_story_words = 500;
};

// Prompt builders, exposed so tests can inspect exactly what is sent.
namespace prompts {
std::vector<llm::ChatMessage> generation(const Premise& premise, const playbook::Catalog& catalog,
                                         const playbook::TechniqueSelection& selection, std::size_t target_words);
std::vector<llm::ChatMessage> critique(const Story& story, const playbook::Catalog& catalog);
std::vector<llm::ChatMessage> revision(const Story& story, const Critique& critique);
std::vector<llm::ChatMessage> judge(const Premise& premise, const std::vector<Story>& candidates);
std::vector<llm::ChatMessage> refinement(const Story& story);
std::vector<llm::ChatMessage> transform(const Story& story);
}  // namespace prompts

class StoryGenerator {
 public:
  StoryGenerator(llm::Gateway& gateway, const playbook::Catalog& catalog, GenerationOptions options = {});

  Story generate_candidate(const Premise& premise, const playbook::TechniqueSelection& selection);
  Critique critique_story(const Story& story);
  Story revise_story(const Story& story, const Critique& critique);
  VoteRecord vote_best(const Premise& premise, const std::vector<Story>& candidates);
  RefinementPass refine_story(const Story& story);
  DramaScript story_to_script(const Story& story);

  /// The full loop. Issues exactly 15 calls when every response is compliant.
  PipelineResult run_pipeline(const Premise& premise, std::uint64_t rng_seed);

  /// Soft-validation notes gathered so far (premise length, traceability...).
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  std::string call(std::string purpose, std::vector<llm::ChatMessage> messages, double temperature,
                   std::uint64_t seed_offset = 0);

  llm::Gateway& gateway_;
  const playbook::Catalog& catalog_;
  GenerationOptions options_;
  std::optional<std::uint64_t> seed_;
  std::vector<std::string> warnings_;
};

/// Story markers that require a flashback scene in the converted script.
bool mentions_time_shift(std::string_view story_text);

/// Plot descriptions sharing too few content words with the story.
std::vector<std::string> untraceable_plots(const DramaScript& script, std::string_view story_text);

}  // namespace stagecraft::generation
