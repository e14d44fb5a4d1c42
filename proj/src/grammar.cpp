#include "stagecraft/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <set>

#include "stagecraft/error.hpp"
#include "stagecraft/text.hpp"

namespace stagecraft {

namespace {

std::string squash(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '-' || c == '_' || c == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

using Fields = std::map<std::string, std::string, std::less<>>;

// Splits a response into KEY: value fields. Keys in `continuable` absorb the
// following lines until the next recognised key.
Fields parse_fields(std::string_view response, const std::set<std::string, std::less<>>& allowed,
                    const std::set<std::string, std::less<>>& continuable) {
  static const std::regex kKeyLine(R"(^([A-Z][A-Z_]*):(.*)$)");
  Fields fields;
  std::string current;
  for (const auto& line : text::split_lines(text::normalize_newlines(response))) {
    std::smatch m;
    if (std::regex_match(line, m, kKeyLine) && allowed.contains(m[1].str())) {
      current = m[1].str();
      if (fields.contains(current)) throw MalformedDecision("duplicate key " + current);
      fields[current] = text::trim(m[2].str());
      continue;
    }
    if (!current.empty() && continuable.contains(current)) {
      auto& v = fields[current];
      v += v.empty() ? text::trim(line) : "\n" + line;
      continue;
    }
    if (!text::trim(line).empty()) throw MalformedDecision("unexpected line: " + line);
  }
  for (auto& [key, value] : fields) value = text::trim(value);
  return fields;
}

const std::string& need(const Fields& f, std::string_view key) {
  auto it = f.find(key);
  if (it == f.end()) throw MalformedDecision("missing " + std::string(key) + " line");
  if (it->second.empty()) throw MalformedDecision(std::string(key) + " is empty");
  return it->second;
}

std::optional<std::string> maybe(const Fields& f, std::string_view key) {
  auto it = f.find(key);
  if (it == f.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

void parse_completed(const Fields& f, std::vector<std::string>& completed, std::vector<std::string>& reopened) {
  auto it = f.find("COMPLETED");
  if (it == f.end()) throw MalformedDecision("missing COMPLETED line");
  const std::string& v = it->second;
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') throw MalformedDecision("COMPLETED must be a [list]");
  std::string inner = v.substr(1, v.size() - 2);
  std::size_t start = 0;
  while (start <= inner.size()) {
    auto comma = inner.find(',', start);
    auto item = text::trim(inner.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!item.empty()) {
      if (item.front() == '!') {
        auto id = text::trim(item.substr(1));
        if (!id.empty()) reopened.push_back(id);
      } else {
        completed.push_back(item);
      }
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
}

// CLASS/STRATEGY pairing: a strategy accompanies exactly the off-plot classes.
void parse_class_strategy(const Fields& f, std::optional<InputClass>& cls, std::optional<ReplyStrategy>& strategy) {
  if (auto c = maybe(f, "CLASS")) {
    cls = parse_input_class(*c);
    if (!cls) throw MalformedDecision("unknown CLASS '" + *c + "'");
  }
  if (auto s = maybe(f, "STRATEGY")) {
    strategy = parse_reply_strategy(*s);
    if (!strategy) throw MalformedDecision("unknown STRATEGY '" + *s + "'");
  }
  const InputClass effective = cls.value_or(InputClass::InPlot);
  if (effective == InputClass::InPlot && strategy) throw MalformedDecision("STRATEGY given for an in-plot input");
  if (effective != InputClass::InPlot && !strategy) {
    throw MalformedDecision("CLASS " + std::string(to_string(effective)) + " requires a STRATEGY");
  }
}

}  // namespace

std::string_view to_string(InputClass c) {
  switch (c) {
    case InputClass::InPlot: return "InPlot";
    case InputClass::Daily: return "Daily";
    case InputClass::Breaking: return "Breaking";
  }
  return "InPlot";
}

std::string_view to_string(ReplyStrategy s) {
  switch (s) {
    case ReplyStrategy::Avoid: return "Avoid";
    case ReplyStrategy::IgnoreQuestion: return "IgnoreQuestion";
    case ReplyStrategy::Associate: return "Associate";
  }
  return "Avoid";
}

std::optional<InputClass> parse_input_class(std::string_view s) {
  const auto k = squash(s);
  if (k == "inplot") return InputClass::InPlot;
  if (k == "daily") return InputClass::Daily;
  if (k == "breaking") return InputClass::Breaking;
  return std::nullopt;
}

std::optional<ReplyStrategy> parse_reply_strategy(std::string_view s) {
  const auto k = squash(s);
  if (k == "avoid") return ReplyStrategy::Avoid;
  if (k == "ignorequestion") return ReplyStrategy::IgnoreQuestion;
  if (k == "associate") return ReplyStrategy::Associate;
  return std::nullopt;
}

TaggedBlock extract_tagged_block(std::string_view response, std::string_view tag) {
  const auto lines = text::split_lines(text::normalize_newlines(response));
  const std::string wanted = text::to_lower(text::trim(tag));

  auto heading_of = [](const std::string& line) -> std::optional<std::string> {
    if (line.rfind("###", 0) != 0) return std::nullopt;
    std::size_t i = 0;
    while (i < line.size() && line[i] == '#') ++i;
    return text::trim(std::string_view(line).substr(i));
  };
  auto matches = [&](const std::string& heading) {
    const auto h = text::to_lower(heading);
    if (h == wanted) return true;
    // "### Technique Explanation (briefly explain ...)"
    return h.size() > wanted.size() && h.compare(0, wanted.size(), wanted) == 0 &&
           (h[wanted.size()] == ' ' || h[wanted.size()] == '(' || h[wanted.size()] == ':');
  };

  std::optional<TaggedBlock> found;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto h = heading_of(lines[i]);
    if (!h || !matches(*h)) continue;
    if (found) {
      found->ambiguous = true;
      break;
    }
    std::string body;
    for (std::size_t j = i + 1; j < lines.size() && !heading_of(lines[j]); ++j) {
      body += lines[j];
      body += '\n';
    }
    found = TaggedBlock{text::trim(body), false};
  }
  if (!found) throw MissingSection(std::string(tag));
  return *found;
}

StructuredDecision extract_structured_decision(std::string_view response) {
  const auto f = parse_fields(response, {"COMPLETED", "SPEAKER", "TO", "SAY", "ACTION", "CLASS", "STRATEGY"},
                              {"SAY", "ACTION"});
  StructuredDecision d;
  parse_completed(f, d.completed, d.reopened);
  d.speaker = need(f, "SPEAKER");
  d.addressee = need(f, "TO");
  d.utterance = need(f, "SAY");
  d.action = maybe(f, "ACTION");
  parse_class_strategy(f, d.input_class, d.strategy);
  return d;
}

MotivationReply extract_motivation(std::string_view response) {
  const auto f = parse_fields(response, {"COMPLETED", "ACTOR", "MOTIVATION", "CLASS", "STRATEGY"}, {"MOTIVATION"});
  MotivationReply r;
  parse_completed(f, r.completed, r.reopened);
  r.actor = need(f, "ACTOR");
  r.motivation = need(f, "MOTIVATION");
  parse_class_strategy(f, r.input_class, r.strategy);
  return r;
}

ActorReply extract_actor_reply(std::string_view response) {
  const auto f = parse_fields(response, {"TO", "SAY", "ACTION"}, {"SAY", "ACTION"});
  return {need(f, "TO"), need(f, "SAY"), maybe(f, "ACTION")};
}

ClassificationReply extract_classification(std::string_view response) {
  const auto f = parse_fields(response, {"CLASS", "STRATEGY"}, {});
  need(f, "CLASS");
  std::optional<InputClass> cls;
  ClassificationReply r;
  parse_class_strategy(f, cls, r.strategy);
  r.input_class = *cls;
  return r;
}

std::vector<ProposedPlot> extract_reflection(std::string_view response) {
  static const std::regex kPlotLine(R"(^PLOT\s+([A-Za-z0-9_.\-]+)\s*:\s*(.*)$)");
  std::vector<ProposedPlot> out;
  for (const auto& line : text::split_lines(text::normalize_newlines(response))) {
    if (text::trim(line).empty()) continue;
    std::smatch m;
    if (!std::regex_match(line, m, kPlotLine)) throw MalformedDecision("unexpected reflection line: " + line);
    ProposedPlot p;
    if (m[1].str() != "NEW") p.id = m[1].str();
    p.description = text::trim(m[2].str());
    if (p.description.empty()) throw MalformedDecision("reflection plot without description");
    out.push_back(std::move(p));
  }
  if (out.empty()) throw MalformedDecision("reflection proposed no plots");
  return out;
}

Ballot extract_ballot(std::string_view response, int candidates) {
  static const std::regex kVote(R"(^\s*VOTE\s*:\s*(?:story|candidate)?\s*#?\s*([0-9]+)\s*$)", std::regex::icase);
  static const std::regex kReason(R"(^\s*REASON\s*:\s*(.*)$)", std::regex::icase);
  std::optional<int> choice;
  std::string rationale;
  for (const auto& line : text::split_lines(text::normalize_newlines(response))) {
    std::smatch m;
    if (!choice && std::regex_match(line, m, kVote)) {
      choice = std::stoi(m[1].str());
    } else if (rationale.empty() && std::regex_match(line, m, kReason)) {
      rationale = text::trim(m[1].str());
    }
  }
  if (!choice) throw UnparsableBallot("judge response names no candidate");
  if (*choice < 1 || *choice > candidates) {
    throw UnparsableBallot("judge voted for candidate " + std::to_string(*choice) + " of " + std::to_string(candidates));
  }
  return {*choice, rationale};
}

}  // namespace stagecraft
