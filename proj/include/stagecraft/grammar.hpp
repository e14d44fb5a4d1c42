#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Parsers for structured LLM output: `###`-headed sections for generation
// responses and the line-oriented `KEY: value` grammar for live turns.
// docs/decision-grammar.md is the byte-level reference.
namespace stagecraft {

enum class InputClass { InPlot, Daily, Breaking };
enum class ReplyStrategy { Avoid, IgnoreQuestion, Associate };

std::string_view to_string(InputClass c);
std::string_view to_string(ReplyStrategy s);
// Case-insensitive; ignores '-', '_' and spaces ("in-plot", "Ignore-Question").
std::optional<InputClass> parse_input_class(std::string_view s);
std::optional<ReplyStrategy> parse_reply_strategy(std::string_view s);

struct TaggedBlock {
  std::string text;
  bool ambiguous = false;  // several sections carried the same tag
};

/// Content of the first `### <tag>` section (a heading may append a
/// parenthesised note). Throws MissingSection.
TaggedBlock extract_tagged_block(std::string_view response, std::string_view tag);

struct StructuredDecision {
  std::vector<std::string> completed;  // plot ids asserted newly complete
  std::vector<std::string> reopened;   // `!id` entries; always ignored by the runtime
  std::string speaker;
  std::string addressee;
  std::string utterance;
  std::optional<std::string> action;
  std::optional<InputClass> input_class;
  std::optional<ReplyStrategy> strategy;
};

/// Global-agent turn: COMPLETED, SPEAKER, TO, SAY required; ACTION, CLASS,
/// STRATEGY optional. Throws MalformedDecision.
StructuredDecision extract_structured_decision(std::string_view response);

struct MotivationReply {
  std::vector<std::string> completed;
  std::vector<std::string> reopened;
  std::string actor;
  std::string motivation;
  std::optional<InputClass> input_class;
  std::optional<ReplyStrategy> strategy;
};

/// Director turn: COMPLETED, ACTOR, MOTIVATION required; CLASS, STRATEGY optional.
MotivationReply extract_motivation(std::string_view response);

struct ActorReply {
  std::string addressee;
  std::string utterance;
  std::optional<std::string> action;
};

/// Actor turn: TO, SAY required; ACTION optional.
ActorReply extract_actor_reply(std::string_view response);

struct ClassificationReply {
  InputClass input_class = InputClass::InPlot;
  std::optional<ReplyStrategy> strategy;
};

/// Stand-alone classification: CLASS required, STRATEGY as for decisions.
ClassificationReply extract_classification(std::string_view response);

struct ProposedPlot {
  std::optional<std::string> id;  // nullopt for `PLOT NEW`
  std::string description;
};

/// Reflection proposal: one `PLOT <id>: text` or `PLOT NEW: text` line per
/// plot, in chain order. Throws MalformedDecision.
std::vector<ProposedPlot> extract_reflection(std::string_view response);

struct Ballot {
  int choice = 0;  // 1-based candidate index
  std::string rationale;
};

/// Judge verdict: `VOTE: <n>` (n in 1..candidates) plus optional `REASON:`.
/// Throws UnparsableBallot.
Ballot extract_ballot(std::string_view response, int candidates);

}  // namespace stagecraft
