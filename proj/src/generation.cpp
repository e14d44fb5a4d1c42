#include "stagecraft/generation.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <set>

#include "stagecraft/grammar.hpp"
#include "stagecraft/text.hpp"

namespace stagecraft::generation {

namespace {

using llm::ChatMessage;
using llm::Role;

std::string squash(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

const char* kWriterSystem =
    "You are a playwright writing stories for interactive drama, where the reader plays the protagonist and talks "
    "with the other characters as the story unfolds.";

std::string numbered(const std::vector<Sentence>& sentences) {
  std::string out;
  for (const auto& s : sentences) out += "[" + s.id + "] " + s.text + "\n";
  return out;
}

int next_sentence_number(const std::vector<Sentence>& sentences) {
  int best = 0;
  for (const auto& s : sentences) {
    if (s.id.size() > 1 && s.id[0] == 's') {
      try {
        best = std::max(best, std::stoi(s.id.substr(1)));
      } catch (const std::exception&) {
      }
    }
  }
  return best + 1;
}

// Parses `[sN] text` / `[+] text` lines of a refined story.
std::vector<Sentence> parse_refined(const std::string& block, const std::vector<Sentence>& before,
                                    std::vector<std::string>& problems) {
  int next_number = next_sentence_number(before);
  static const std::regex kLine(R"(^\s*\[\s*(s[0-9]+|\+)\s*\]\s*(.*)$)");
  std::vector<Sentence> out;
  for (const auto& line : text::split_lines(block)) {
    if (text::trim(line).empty()) continue;
    std::smatch m;
    if (!std::regex_match(line, m, kLine)) {
      problems.push_back("unlabelled line: " + text::trim(line));
      continue;
    }
    Sentence s;
    s.id = m[1].str() == "+" ? "s" + std::to_string(next_number++) : m[1].str();
    if (m[1].str() != "+" &&
        std::none_of(before.begin(), before.end(), [&](const Sentence& b) { return b.id == s.id; })) {
      problems.push_back("unknown sentence id " + s.id);
      continue;
    }
    s.text = text::trim(m[2].str());
    if (s.text.empty()) {
      problems.push_back("sentence " + s.id + " is empty");
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string strip_code_fence(std::string block) {
  block = text::trim(block);
  if (block.rfind("```", 0) == 0) {
    auto nl = block.find('\n');
    block = nl == std::string::npos ? "" : block.substr(nl + 1);
    auto end = block.rfind("```");
    if (end != std::string::npos) block = block.substr(0, end);
  }
  return text::trim(block);
}

}  // namespace

// Data types -------------------------------------------------------------------

Premise Premise::from_text(std::string text) {
  Premise p;
  p.text = text::trim(text::normalize_newlines(text));
  p.word_count = text::word_count(p.text);
  return p;
}

std::string Story::text() const {
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty()) out += ' ';
    out += s.text;
  }
  return out;
}

std::size_t Story::word_count() const { return text::word_count(text()); }

std::vector<Sentence> number_sentences(std::string_view prose) {
  std::vector<Sentence> out;
  for (const auto& s : text::split_sentences(prose)) {
    out.push_back({"s" + std::to_string(out.size() + 1), s});
  }
  return out;
}

int tally(const std::vector<JudgeBallot>& ballots, bool* tie) {
  if (ballots.empty()) throw PreconditionError("no ballots to count");
  std::map<int, int> counts;
  for (const auto& b : ballots) ++counts[b.choice];
  for (const auto& [choice, n] : counts) {
    if (2 * n > static_cast<int>(ballots.size())) {
      if (tie) *tie = false;
      return choice;
    }
  }
  if (tie) *tie = true;
  return counts.begin()->first;
}

std::vector<std::string> refinement_violations(const std::vector<Sentence>& before,
                                               const std::vector<Sentence>& after) {
  std::vector<std::string> problems;
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < before.size(); ++i) position[before[i].id] = i;

  std::set<std::string> seen;
  std::size_t last = 0;
  bool any = false;
  for (const auto& s : after) {
    auto it = position.find(s.id);
    if (it == position.end()) continue;  // inserted sentence
    if (!seen.insert(s.id).second) {
      problems.push_back("sentence " + s.id + " repeated");
      continue;
    }
    if (any && it->second < last) problems.push_back("sentence " + s.id + " moved");
    last = it->second;
    any = true;
  }
  for (const auto& s : before) {
    if (!seen.contains(s.id)) problems.push_back("sentence " + s.id + " deleted");
  }
  return problems;
}

// JSON --------------------------------------------------------------------------

nlohmann::json to_json(const Story& story) {
  nlohmann::json sentences = nlohmann::json::array();
  for (const auto& s : story.sentences) sentences.push_back({{"id", s.id}, {"text", s.text}});
  return {{"selection", playbook::to_json(story.selection)},
          {"outline", story.outline},
          {"sentences", sentences},
          {"revision_round", story.revision_round},
          {"refinement_round", story.refinement_round},
          {"word_count", story.word_count()}};
}

nlohmann::json to_json(const Critique& critique) {
  nlohmann::json found = nlohmann::json::array();
  for (auto id : critique.techniques_found) found.push_back(playbook::to_string(id));
  return {{"techniques_found", found}, {"effectiveness", critique.effectiveness}, {"comment", critique.comment}};
}

nlohmann::json to_json(const VoteRecord& vote) {
  nlohmann::json ballots = nlohmann::json::array();
  for (const auto& b : vote.ballots) {
    ballots.push_back({{"judge", b.judge}, {"choice", b.choice}, {"rationale", b.rationale}});
  }
  return {{"ballots", ballots}, {"winner", vote.winner}, {"tie", vote.tie}};
}

nlohmann::json to_json(const RefinementPass& pass) {
  return {{"round", pass.round},
          {"attempts", pass.attempts},
          {"violations", pass.violations},
          {"applied", pass.applied},
          {"story", to_json(pass.story)}};
}

nlohmann::json to_json(const RunReport& report) {
  nlohmann::json j;
  j["premise"] = report.premise;
  j["seed"] = report.seed;
  j["selections"] = nlohmann::json::array();
  for (const auto& s : report.selections) j["selections"].push_back(playbook::to_json(s));
  j["candidates"] = nlohmann::json::array();
  for (const auto& c : report.candidates) {
    j["candidates"].push_back({{"iteration", c.iteration},
                               {"selection", playbook::to_json(c.selection)},
                               {"draft", to_json(c.draft)},
                               {"critique", to_json(c.critique)},
                               {"revised", to_json(c.revised)}});
  }
  j["vote"] = report.vote ? to_json(*report.vote) : nlohmann::json(nullptr);
  j["refinements"] = nlohmann::json::array();
  for (const auto& r : report.refinements) j["refinements"].push_back(to_json(r));
  j["final_story"] = report.final_story ? to_json(*report.final_story) : nlohmann::json(nullptr);
  j["warnings"] = report.warnings;
  j["calls"] = nlohmann::json::array();
  for (const auto& e : report.exchanges) j["calls"].push_back(llm::to_json(e));
  j["call_count"] = report.exchanges.size();
  if (report.failure) j["failure"] = *report.failure;
  return j;
}

// Prompts -----------------------------------------------------------------------

namespace prompts {

std::vector<ChatMessage> generation(const Premise& premise, const playbook::Catalog& catalog,
                                    const playbook::TechniqueSelection& selection, std::size_t target_words) {
  std::string user = text::render(
      "## Task\n"
      "Write a dramatic story told from the protagonist's point of view, grounded in the premise below. The "
      "reader will later play the protagonist and talk with every other character.\n\n"
      "## Premise\n{premise}\n\n"
      "{catalog}\n"
      "## Instructions\n"
      "1. Follow the dramatic situation's three acts and use every listed technique.\n"
      "2. Name each character concretely; no crowds or unnamed onlookers.\n"
      "3. Draft a plot outline of roughly 100 words first.\n"
      "4. Expand it into the complete story, roughly {words} words. If you use several perspectives, say whose "
      "eyes we are behind. Mark flashbacks explicitly (for example, begin with \"Flashback:\").\n\n"
      "## Output format\n"
      "### Plot Outline\n"
      "### Complete Story\n"
      "### Technique Explanation\n",
      {{"premise", premise.text},
       {"catalog", playbook::catalog_prompt_text(catalog, selection)},
       {"words", std::to_string(target_words)}});
  return {{Role::System, kWriterSystem}, {Role::User, std::move(user)}};
}

std::vector<ChatMessage> critique(const Story& story, const playbook::Catalog& catalog) {
  std::string user = text::render(
      "## Task\n"
      "Judge how well the story below uses narrative techniques, then say how to improve it.\n\n"
      "## Narrative Techniques\n{techniques}\n"
      "## Story\n{story}\n\n"
      "## Instructions\n"
      "List only the techniques from the list above that the story actually uses, at most three, one per "
      "line (write \"None\" if it uses none). Assess whether each is effective: does the twist land, does "
      "a non-linear passage stand apart as its own scene. Finish with concrete advice for the revision.\n\n"
      "## Output format\n"
      "### Techniques Used\n"
      "### Effectiveness\n"
      "### Comment\n",
      {{"techniques", playbook::techniques_prompt_text(catalog, story.selection)}, {"story", story.text()}});
  return {{Role::System, "You are a demanding drama critic."}, {Role::User, std::move(user)}};
}

std::vector<ChatMessage> revision(const Story& story, const Critique& critique) {
  std::string user = text::render(
      "## Task\n"
      "Rewrite the story so that it answers the critic's comment. You may change scenes and characters.\n\n"
      "## Story\n{story}\n\n"
      "## Comment\n{comment}\n\n"
      "## Output format\n"
      "### New Story\n"
      "### Explanation\n",
      {{"story", story.text()}, {"comment", critique.comment}});
  return {{Role::System, kWriterSystem}, {Role::User, std::move(user)}};
}

std::vector<ChatMessage> judge(const Premise& premise, const std::vector<Story>& candidates) {
  std::string stories;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    stories += "### Story " + std::to_string(i + 1) + "\n" + candidates[i].text() + "\n\n";
  }
  std::string user = text::render(
      "## Task\n"
      "Three stories were written from the same premise. Pick the one that would make the most gripping "
      "interactive drama for a reader playing the protagonist.\n\n"
      "## Premise\n{premise}\n\n"
      "{stories}"
      "## Output format\n"
      "VOTE: <story number>\n"
      "REASON: <one or two sentences>\n",
      {{"premise", premise.text}, {"stories", stories}});
  return {{Role::System, "You are an impartial judge of dramatic writing."}, {Role::User, std::move(user)}};
}

std::vector<ChatMessage> refinement(const Story& story) {
  std::string user = text::render(
      "## Task\n"
      "Refine the story below, one sentence per line, each tagged with its id.\n\n"
      "## Story\n{story}\n"
      "## Instructions\n"
      "- Coherence: where the link between two sentences is weak, rewrite a sentence or add a new one between "
      "them.\n"
      "- Detail: make vague moments specific, with no word limit; if there is suspense, draw it out.\n"
      "- Keep every existing sentence, in its current order, under its own id. You may expand its text.\n"
      "- Tag each new sentence with [+].\n\n"
      "## Output format\n"
      "### Analysis\n"
      "### Refined Story\n"
      "[s1] ...\n"
      "[+] ...\n",
      {{"story", numbered(story.sentences)}});
  return {{Role::System, kWriterSystem}, {Role::User, std::move(user)}};
}

std::vector<ChatMessage> transform(const Story& story) {
  std::string user = text::render(
      "## Task\n"
      "Turn the story below into a drama script. Do not invent anything: every plot, background, location and "
      "character setup must come from the story itself.\n\n"
      "## Story\n{story}\n\n"
      "## Instructions\n"
      "1. Split the story into 3 to 5 scenes. Any flashback or flash-forward becomes a scene of its own with "
      "\"is_flashback\": true.\n"
      "2. For each scene, turn the relevant sentences into an ordered list of plots with ids unique within the "
      "scene (p1, p2, ...).\n"
      "3. Write each scene's background and location and a setup for every character present, keyed by name.\n"
      "4. The roster lists every named character; mark the protagonist with \"is_player\": true.\n"
      "5. Use \"mode\": \"narrative\" for scenes the protagonist mostly watches and \"interactive\" otherwise.\n\n"
      "## Output format\n"
      "### Script\n"
      "{\"schema\": \"stagecraft-script/v1\", \"title\": \"...\", \"background\": \"...\",\n"
      " \"roster\": [{\"name\": \"...\", \"description\": \"...\", \"is_player\": false}],\n"
      " \"scenes\": [{\"index\": 1, \"background\": \"...\", \"location\": \"...\", \"mode\": \"interactive\",\n"
      "   \"is_flashback\": false, \"setups\": {\"<name>\": \"...\"},\n"
      "   \"plots\": [{\"id\": \"p1\", \"description\": \"...\"}]}]}\n",
      {{"story", story.text()}});
  return {{Role::System, "You convert stories into structured drama scripts and reply with JSON only under the "
                         "requested heading."},
          {Role::User, std::move(user)}};
}

}  // namespace prompts

// Generator ---------------------------------------------------------------------

StoryGenerator::StoryGenerator(llm::Gateway& gateway, const playbook::Catalog& catalog, GenerationOptions options)
    : gateway_(gateway), catalog_(catalog), options_(options) {}

std::string StoryGenerator::call(std::string purpose, std::vector<ChatMessage> messages, double temperature,
                                 std::uint64_t seed_offset) {
  llm::ChatRequest req;
  req.purpose = std::move(purpose);
  req.messages = std::move(messages);
  req.params.temperature = temperature;
  if (seed_) req.params.seed = static_cast<std::int64_t>((*seed_ + seed_offset) & 0x7fffffffffffffffULL);
  return gateway_.complete(req).text;
}

Story StoryGenerator::generate_candidate(const Premise& premise, const playbook::TechniqueSelection& selection) {
  if (premise.text.empty()) throw PreconditionError("premise is empty");
  if (premise.word_count < kPremiseMinWords || premise.word_count > kPremiseMaxWords) {
    const std::string note = "premise has " + std::to_string(premise.word_count) + " words; expected " +
                             std::to_string(kPremiseMinWords) + "-" + std::to_string(kPremiseMaxWords);
    if (std::find(warnings_.begin(), warnings_.end(), note) == warnings_.end()) warnings_.push_back(note);
  }
  const auto response =
      call("writer", prompts::generation(premise, catalog_, selection, options_.target_story_words),
           llm::kCreativeTemperature);
  const std::string where = "iteration " + std::to_string(selection.iteration);
  Story story;
  story.selection = selection;
  try {
    story.outline = extract_tagged_block(response, "Plot Outline").text;
    story.sentences = number_sentences(extract_tagged_block(response, "Complete Story").text);
  } catch (const MissingSection& e) {
    throw MissingSection(e.tag(), where + " writer response");
  }
  if (story.sentences.empty()) throw ContractError(where + ": writer returned an empty story");
  return story;
}

Critique StoryGenerator::critique_story(const Story& story) {
  if (story.sentences.empty()) throw PreconditionError("cannot critique an empty story");
  const auto response = call("critic", prompts::critique(story, catalog_), llm::kJudgingTemperature);

  Critique c;
  const auto used = extract_tagged_block(response, "Techniques Used").text;
  std::set<playbook::TechniqueId> found;
  for (auto line : text::split_lines(used)) {
    line = text::trim(line);
    while (!line.empty() && (line[0] == '-' || line[0] == '*' || std::isdigit(static_cast<unsigned char>(line[0])) ||
                             line[0] == '.' || line[0] == ' ')) {
      line.erase(0, 1);
    }
    const auto head = squash(line.substr(0, line.find(':')));
    for (auto id : story.selection.techniques) {
      const auto name = squash(catalog_.technique(id).name);
      const auto key = squash(playbook::to_string(id));
      if (!head.empty() && (head == name || head == key || head.find(name) == 0)) found.insert(id);
    }
  }
  c.techniques_found.assign(found.begin(), found.end());
  if (auto e = [&]() -> std::optional<std::string> {
        try {
          return extract_tagged_block(response, "Effectiveness").text;
        } catch (const MissingSection&) {
          return std::nullopt;
        }
      }()) {
    c.effectiveness = *e;
  }
  c.comment = extract_tagged_block(response, "Comment").text;
  if (c.comment.empty()) throw ContractError("critic returned an empty comment");
  return c;
}

Story StoryGenerator::revise_story(const Story& story, const Critique& critique) {
  if (critique.comment.empty()) throw PreconditionError("revision needs a nonempty comment");
  const auto response = call("reviser", prompts::revision(story, critique), llm::kCreativeTemperature);
  Story out = story;
  out.sentences = number_sentences(extract_tagged_block(response, "New Story").text);
  if (out.sentences.empty()) throw ContractError("reviser returned an empty story");
  ++out.revision_round;
  return out;
}

VoteRecord StoryGenerator::vote_best(const Premise& premise, const std::vector<Story>& candidates) {
  if (candidates.size() != static_cast<std::size_t>(kCandidates)) {
    throw PreconditionError("voting needs exactly 3 candidates, got " + std::to_string(candidates.size()));
  }
  VoteRecord vote;
  for (int j = 1; j <= kJudges; ++j) {
    // Each judge sees a fresh conversation; nothing is shared between them.
    // Distinct decoding seeds keep seeded live judges from echoing each other.
    const auto response =
        call("judge", prompts::judge(premise, candidates), llm::kJudgingTemperature, static_cast<std::uint64_t>(j));
    auto ballot = extract_ballot(response, kCandidates);
    vote.ballots.push_back({j, ballot.choice, ballot.rationale});
  }
  vote.winner = tally(vote.ballots, &vote.tie);
  if (vote.tie) warnings_.push_back("judges split three ways; story " + std::to_string(vote.winner) + " wins the tie");
  return vote;
}

RefinementPass StoryGenerator::refine_story(const Story& story) {
  if (story.refinement_round >= kRefinementPasses) {
    throw PreconditionError("story already refined " + std::to_string(kRefinementPasses) + " times");
  }
  RefinementPass pass;
  pass.round = story.refinement_round + 1;
  for (int attempt = 1; attempt <= 2; ++attempt) {
    pass.attempts = attempt;
    const auto response = call("refiner", prompts::refinement(story), llm::kCreativeTemperature);
    std::vector<std::string> problems;
    auto sentences =
        parse_refined(extract_tagged_block(response, "Refined Story").text, story.sentences, problems);
    for (auto& p : refinement_violations(story.sentences, sentences)) problems.push_back(std::move(p));
    if (problems.empty()) {
      pass.story = story;
      pass.story.sentences = std::move(sentences);
      pass.story.refinement_round = pass.round;
      pass.applied = true;
      return pass;
    }
    for (auto& p : problems) pass.violations.push_back("attempt " + std::to_string(attempt) + ": " + p);
  }
  warnings_.push_back("refinement pass " + std::to_string(pass.round) + " kept the previous story");
  pass.story = story;
  pass.story.refinement_round = pass.round;
  return pass;
}

bool mentions_time_shift(std::string_view story_text) {
  for (const char* marker : {"flashback", "flash-back", "flash back", "flash-forward", "flashforward",
                             "flash forward"}) {
    if (text::contains_icase(story_text, marker)) return true;
  }
  return false;
}

std::vector<std::string> untraceable_plots(const DramaScript& script, std::string_view story_text) {
  static const std::set<std::string> kStop = {"that", "this", "with", "from", "they", "their", "them", "then",
                                              "have", "into", "when", "what", "will", "were", "been", "about",
                                              "after", "before", "there", "which", "while"};
  std::set<std::string> vocabulary;
  std::string word;
  auto flush = [&](std::set<std::string>& into) {
    if (word.size() >= 4 && !kStop.contains(word)) into.insert(word);
    word.clear();
  };
  for (char c : story_text) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush(vocabulary);
    }
  }
  flush(vocabulary);

  std::vector<std::string> out;
  for (const auto& scene : script.scenes) {
    for (const auto& plot : scene.plot_chain.plots) {
      std::set<std::string> words;
      for (char c : plot.description) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
          word.push_back(static_cast<char>(std::tolower(c)));
        } else {
          flush(words);
        }
      }
      flush(words);
      if (words.empty()) continue;
      std::size_t shared = 0;
      for (const auto& w : words) shared += vocabulary.contains(w);
      if (2 * shared < words.size()) out.push_back("scene " + std::to_string(scene.index) + " " + plot.id);
    }
  }
  return out;
}

DramaScript StoryGenerator::story_to_script(const Story& story) {
  if (story.refinement_round != kRefinementPasses) {
    throw PreconditionError("story_to_script expects a story refined " + std::to_string(kRefinementPasses) +
                            " times");
  }
  const bool needs_flashback = mentions_time_shift(story.text());
  auto messages = prompts::transform(story);
  std::string last_problem;
  enum class Problem { None, Count, Flashback, Schema } kind = Problem::None;

  for (int attempt = 1; attempt <= 2; ++attempt) {
    const auto response = call("transformer", messages, llm::kJudgingTemperature);
    DramaScript script;
    kind = Problem::None;
    try {
      const auto body = strip_code_fence(extract_tagged_block(response, "Script").text);
      const auto doc = nlohmann::json::parse(body);
      const auto scenes = doc.contains("scenes") && doc["scenes"].is_array() ? doc["scenes"].size() : 0;
      if (scenes < 3 || scenes > 5) {
        kind = Problem::Count;
        last_problem = "script has " + std::to_string(scenes) + " scenes; 3 to 5 are required";
      } else {
        script = parse_script(body, ValidationLevel::Generated);
        const bool has_flashback =
            std::any_of(script.scenes.begin(), script.scenes.end(), [](const Scene& s) { return s.is_flashback; });
        if (needs_flashback && !has_flashback) {
          kind = Problem::Flashback;
          last_problem = "the story contains a flashback or flash-forward but no scene is marked is_flashback";
        }
      }
    } catch (const nlohmann::json::parse_error& e) {
      kind = Problem::Schema;
      last_problem = std::string("script is not valid JSON: ") + e.what();
    } catch (const SyntaxError& e) {
      kind = Problem::Schema;
      last_problem = e.what();
    } catch (const SchemaError& e) {
      kind = Problem::Schema;
      last_problem = e.what();
    }
    if (kind == Problem::None) {
      for (const auto& p : untraceable_plots(script, story.text())) {
        warnings_.push_back("plot " + p + " shares little wording with the story");
      }
      return script;
    }
    if (attempt == 1) {
      messages.push_back({Role::Assistant, response});
      messages.push_back({Role::User, "That script cannot be used: " + last_problem +
                                          ". Reply again in the same format with the problem fixed."});
    }
  }
  if (kind == Problem::Schema) throw SchemaError(last_problem);
  throw SegmentationError(last_problem);
}

PipelineResult StoryGenerator::run_pipeline(const Premise& premise, std::uint64_t rng_seed) {
  RunReport report;
  report.premise = premise.text;
  report.seed = rng_seed;
  seed_ = rng_seed;
  const auto first_exchange = gateway_.log().size();
  auto finish = [&] {
    auto all = gateway_.log().snapshot();
    report.exchanges.assign(all.begin() + static_cast<std::ptrdiff_t>(first_exchange), all.end());
    report.warnings = warnings_;
  };

  std::string stage = "sampling";
  try {
    report.selections = playbook::sample_selections(rng_seed);
    // Candidates run one after another so purpose-keyed mocks and the call
    // log see a fixed order.
    std::vector<Story> finalists;
    for (const auto& selection : report.selections) {
      CandidateRecord rec;
      rec.iteration = selection.iteration;
      rec.selection = selection;
      stage = "iteration " + std::to_string(selection.iteration) + " generation";
      rec.draft = generate_candidate(premise, selection);
      rec.revised = rec.draft;
      for (int round = 0; round < options_.revise_rounds; ++round) {
        stage = "iteration " + std::to_string(selection.iteration) + " critique";
        rec.critique = critique_story(rec.revised);
        stage = "iteration " + std::to_string(selection.iteration) + " revision";
        rec.revised = revise_story(rec.revised, rec.critique);
      }
      finalists.push_back(rec.revised);
      report.candidates.push_back(std::move(rec));
    }
    stage = "vote";
    report.vote = vote_best(premise, finalists);
    Story story = finalists[static_cast<std::size_t>(report.vote->winner - 1)];
    for (int pass = 1; pass <= kRefinementPasses; ++pass) {
      stage = "refinement " + std::to_string(pass);
      auto result = refine_story(story);
      story = result.story;
      report.refinements.push_back(std::move(result));
    }
    report.final_story = story;
    seed_.reset();
    finish();
    return {std::move(story), std::move(report)};
  } catch (const Error& e) {
    seed_.reset();
    report.failure = stage + ": " + e.what();
    finish();
    const std::string message = *report.failure;  // copied before the report moves
    const bool provider = dynamic_cast<const ProviderUnavailable*>(&e) || dynamic_cast<const AuthError*>(&e);
    throw PipelineError(message, std::move(report), provider);
  }
}

}  // namespace stagecraft::generation
