// "plot-walker": a scripted stand-in for the live-session models. It reads
// the engine's own prompts back (scene turn, plot chain, characters present,
// player input) and answers in the decision grammar, so whole sessions can
// run offline and deterministically.
#include <regex>

#include "stagecraft/runtime.hpp"
#include "stagecraft/text.hpp"

namespace stagecraft::runtime {

namespace {

struct ChainLine {
  std::string id;
  bool done = false;
  std::string owner;
};

struct PromptView {
  enum class Kind { Director, Global, Actor, Reflection, Classifier } kind = Kind::Global;
  int scene_turn = 1;
  std::vector<ChainLine> chain;
  std::vector<std::string> descriptions;
  std::vector<std::string> present;
  std::string player;
  std::string self;  // actor prompts
  std::string input;
};

std::string section(const std::vector<std::string>& lines, std::string_view heading, bool prefix = false) {
  std::string out;
  bool inside = false;
  for (const auto& l : lines) {
    if (l.rfind("## ", 0) == 0) {
      if (inside) break;
      const auto h = l.substr(3);
      inside = prefix ? h.rfind(heading, 0) == 0 || h.find(heading) != std::string::npos : h == heading;
      continue;
    }
    if (inside) out += l + "\n";
  }
  return text::trim(out);
}

PromptView read_prompt(const llm::ChatRequest& request) {
  // Repairs carry the original prompt as the first user message.
  const llm::ChatMessage* prompt = nullptr;
  for (const auto& m : request.messages) {
    if (m.role == llm::Role::User) {
      prompt = &m;
      break;
    }
  }
  if (!prompt) throw ContractError("plot-walker: request has no user message");
  const auto lines = text::split_lines(prompt->content);
  const auto format = section(lines, "Output format");

  PromptView v;
  if (format.find("ACTOR:") != std::string::npos) {
    v.kind = PromptView::Kind::Director;
  } else if (format.find("SPEAKER:") != std::string::npos) {
    v.kind = PromptView::Kind::Global;
  } else if (format.find("PLOT ") != std::string::npos) {
    v.kind = PromptView::Kind::Reflection;
  } else if (format.find("SAY:") != std::string::npos) {
    v.kind = PromptView::Kind::Actor;
  } else {
    v.kind = PromptView::Kind::Classifier;
  }

  static const std::regex kTurn(R"(^Scene turn: ([0-9]+)$)");
  static const std::regex kPlot(R"(^- \[([^\]]+)\] \((done|open)\) (.*?)( \[driven by (.*)\])?$)");
  static const std::regex kPresent(R"(^- ([^:]+): .*$)");
  for (const auto& l : lines) {
    std::smatch m;
    if (std::regex_match(l, m, kTurn)) v.scene_turn = std::stoi(m[1].str());
  }
  for (const auto& l : text::split_lines(section(lines, "Plot chain"))) {
    std::smatch m;
    if (std::regex_match(l, m, kPlot)) {
      v.chain.push_back({m[1].str(), m[2].str() == "done", m[5].matched ? m[5].str() : ""});
      v.descriptions.push_back(m[3].str());
    }
  }
  for (const auto& l : text::split_lines(section(lines, "Characters present"))) {
    std::smatch m;
    if (std::regex_match(l, m, kPresent)) v.present.push_back(m[1].str());
  }
  v.player = section(lines, "Player character");
  v.self = section(lines, "You are");
  for (const auto& l : lines) {
    const std::string tail = " just said";
    if (l.rfind("## ", 0) == 0 && l.size() > 3 + tail.size() && l.compare(l.size() - tail.size(), tail.size(), tail) == 0) {
      v.player = l.substr(3, l.size() - 3 - tail.size());
    }
  }
  v.input = v.kind == PromptView::Kind::Actor ? section(lines, "just said", true) : section(lines, "Player input");
  if (v.input == "(the player says nothing)") v.input.clear();
  return v;
}

struct WalkerOptions {
  std::string complete = "per_turn";  // per_turn | scene_end | never
  int scene_turns = 10;
  std::string reflection = "identity";  // identity | rewrite | insert | overreach | garbage
  std::vector<std::pair<std::string, std::string>> classes;  // substring -> class
  std::optional<std::string> malformed;  // "director", "actor" or "global": non-repair replies are malformed
};

WalkerOptions read_options(const nlohmann::json& j) {
  WalkerOptions o;
  if (j.is_null()) return o;
  o.complete = j.value("complete", o.complete);
  o.scene_turns = j.value("scene_turns", o.scene_turns);
  o.reflection = j.value("reflection", o.reflection);
  if (j.contains("classes")) {
    for (const auto& r : j["classes"]) o.classes.emplace_back(r.at("match").get<std::string>(), r.at("class").get<std::string>());
  }
  if (j.contains("malformed")) o.malformed = j["malformed"].get<std::string>();
  return o;
}

std::string class_lines(const WalkerOptions& o, const PromptView& v) {
  std::string cls = "InPlot";
  if (text::trim(v.input).empty()) {
    cls = "Breaking";
  } else {
    for (const auto& [match, c] : o.classes) {
      if (text::contains_icase(v.input, match)) {
        cls = c;
        break;
      }
    }
  }
  if (cls == "InPlot") return "CLASS: InPlot\n";
  static const char* kStrategies[] = {"Avoid", "IgnoreQuestion", "Associate"};
  return "CLASS: " + cls + "\nSTRATEGY: " + kStrategies[v.scene_turn % 3] + "\n";
}

std::string completed_list(const WalkerOptions& o, const PromptView& v) {
  std::vector<std::string> ids;
  if (o.complete == "per_turn") {
    for (const auto& p : v.chain) {
      if (!p.done) {
        ids.push_back(p.id);
        break;
      }
    }
  } else if (o.complete == "scene_end" && v.scene_turn >= o.scene_turns) {
    for (const auto& p : v.chain) {
      if (!p.done) ids.push_back(p.id);
    }
  }
  std::string out;
  for (const auto& id : ids) out += (out.empty() ? "" : ", ") + id;
  return "COMPLETED: [" + out + "]\n";
}

// Owner of the first open plot if present, else rotate through the scene.
std::string pick_speaker(const PromptView& v) {
  for (const auto& p : v.chain) {
    if (p.done) continue;
    if (!p.owner.empty()) {
      for (const auto& n : v.present) {
        if (n == p.owner) return n;
      }
    }
    break;
  }
  if (v.present.empty()) return "nobody";
  return v.present[static_cast<std::size_t>(v.scene_turn - 1) % v.present.size()];
}

std::string reflection_reply(const WalkerOptions& o, const PromptView& v) {
  if (o.reflection == "garbage") return "I think the plan is fine.";
  std::string out;
  bool edited = false;
  bool inserted = false;
  for (std::size_t i = 0; i < v.chain.size(); ++i) {
    const auto& p = v.chain[i];
    std::string desc = v.descriptions[i];
    const bool rewrite_here = !p.done && !edited && (o.reflection == "rewrite" || o.reflection == "overreach");
    if (rewrite_here) {
      desc += " Along the way, the talk turns to what the player keeps asking about.";
      edited = true;
    }
    out += "PLOT " + p.id + ": " + desc + "\n";
    if (!p.done && !inserted && (o.reflection == "insert" || o.reflection == "overreach")) {
      out += "PLOT NEW: A quiet moment lets the player follow up on their own question.\n";
      inserted = true;
    }
  }
  return out;
}

class Walker {
 public:
  explicit Walker(WalkerOptions o) : o_(std::move(o)) {}

  std::string operator()(const llm::ChatRequest& request) {
    const auto v = read_prompt(request);
    const bool is_repair = request.purpose == "repair";
    switch (v.kind) {
      case PromptView::Kind::Reflection:
        return reflection_reply(o_, v);
      case PromptView::Kind::Classifier:
        return class_lines(o_, v);
      case PromptView::Kind::Director: {
        if (!is_repair && o_.malformed == "director") return "I would pick someone thoughtful.";
        return completed_list(o_, v) + "ACTOR: " + pick_speaker(v) +
               "\nMOTIVATION: Keep the player engaged and nudge the scene one step forward.\n" + class_lines(o_, v);
      }
      case PromptView::Kind::Actor: {
        if (!is_repair && o_.malformed == "actor") return "*shrugs*";
        return "TO: " + (v.input.empty() ? std::string("all") : v.player) +
               "\nSAY: You have my attention. Let us see where this goes.\n";
      }
      case PromptView::Kind::Global:
        if (!is_repair && o_.malformed == "global") return "Hello there!";
        return completed_list(o_, v) + "SPEAKER: " + pick_speaker(v) + "\nTO: " + v.player +
               "\nSAY: Stay close; there is more to this night than it seems.\n" + class_lines(o_, v);
    }
    return {};
  }

 private:
  WalkerOptions o_;
};

}  // namespace

llm::StubRegistry builtin_stubs() {
  llm::StubRegistry r;
  r["plot-walker"] = [](const nlohmann::json& options) -> llm::StubFn {
    return Walker(read_options(options));
  };
  return r;
}

}  // namespace stagecraft::runtime
