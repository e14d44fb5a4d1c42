#include "cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "stagecraft/generation.hpp"
#include "stagecraft/playbook.hpp"
#include "stagecraft/service.hpp"
#include "stagecraft/simulation.hpp"
#include "stagecraft/text.hpp"

namespace stagecraft::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// A bad command line found after parsing (missing file, conflicting flags).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw Error("cannot write " + path);
}

// Either a mock file or a live endpoint; never both.
struct ProviderFlags {
  std::string mock;
  std::string endpoint;
  std::string model;
  int max_attempts = 3;

  void add(CLI::App& app, const std::string& mock_help = "JSON mock file (no network)") {
    auto* m = app.add_option("--mock", mock, mock_help)->check(CLI::ExistingFile);
    auto* e = app.add_option("--endpoint", endpoint, "OpenAI-compatible base URL (default $STAGECRAFT_ENDPOINT)");
    m->excludes(e);
    app.add_option("--model", model, "model name for live calls");
    app.add_option("--max-attempts", max_attempts, "attempts per call before giving up")->check(CLI::PositiveNumber);
  }

  llm::ProviderConfig config(const std::string& mock_file) const {
    auto c = llm::ProviderConfig::from_env();
    c.retry.max_attempts = max_attempts;
    if (!mock_file.empty()) {
      c.kind = llm::ProviderConfig::Kind::Mock;
      c.endpoint.clear();
      c.mock_file = mock_file;
    } else {
      if (!endpoint.empty()) c.endpoint = endpoint;
      if (!model.empty()) c.model = model;
      if (c.endpoint.empty()) throw UsageError("no provider: pass --mock FILE or --endpoint URL");
    }
    return c;
  }

  std::unique_ptr<llm::Gateway> gateway(const std::string& mock_file) const {
    const auto c = config(mock_file);
    return std::make_unique<llm::Gateway>(llm::make_provider(c, runtime::builtin_stubs()), c.retry);
  }
  std::unique_ptr<llm::Gateway> gateway() const { return gateway(mock); }
};

// A path, or the name of a bundled script ("harrow_quay").
DramaScript load_script(const std::string& ref) {
  if (fs::exists(ref)) return parse_script(read_text(ref));
  const auto bundled = data_dir() / "scripts" / (ref + ".json");
  if (fs::exists(bundled)) return parse_script(read_text(bundled.string()));
  throw Error("no script file or bundled script named '" + ref + "'");
}

runtime::ArchitectureConfig architecture(const std::string& name, int k) {
  auto a = runtime::parse_architecture(name);
  if (!a) throw UsageError("unknown architecture '" + name + "' (director-actor, one-for-all, hybrid)");
  runtime::ArchitectureConfig c;
  c.kind = *a;
  if (k > 0) {
    c.reflection_period = k;
  } else {
    c.reflection_period.reset();
  }
  return c;
}

// generate -----------------------------------------------------------------------

struct GenerateCmd {
  std::string premise;
  std::string premise_file;
  std::uint64_t seed = 0;
  std::string out;
  std::string report;
  ProviderFlags provider;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("generate", "Write a drama script from a premise");
    auto* p = app->add_option("--premise", premise, "premise text (50 to 100 words)");
    auto* f = app->add_option("--premise-file", premise_file, "file holding the premise")->check(CLI::ExistingFile);
    p->excludes(f);
    app->add_option("--seed", seed, "sampling seed");
    app->add_option("-o,--out", out, "script output path (default stdout)");
    app->add_option("--report", report, "run report output path");
    provider.add(*app);
  }

  int run(std::ostream& out_stream, std::ostream& err) {
    if (premise.empty() && premise_file.empty()) throw UsageError("generate needs --premise or --premise-file");
    const auto text = premise.empty() ? read_text(premise_file) : premise;
    auto gateway = provider.gateway();
    const auto catalog = playbook::Catalog::load_default();
    generation::StoryGenerator gen(*gateway, catalog);
    auto write_report = [&](const generation::RunReport& r) {
      if (!report.empty()) write_text(report, to_json(r).dump(2) + "\n");
    };
    generation::PipelineResult result;
    try {
      result = gen.run_pipeline(generation::Premise::from_text(text), seed);
    } catch (const generation::PipelineError& e) {
      write_report(e.report());
      throw;
    }
    write_report(result.report);
    const auto script = gen.story_to_script(result.story);
    for (const auto& w : gen.warnings()) err << "warning: " << w << "\n";
    const auto body = serialize_script(script);
    if (out.empty()) {
      out_stream << body << "\n";
    } else {
      write_text(out, body + "\n");
      err << "wrote " << out << " (" << script.scenes.size() << " scenes)\n";
    }
    return kOk;
  }
};

// play -----------------------------------------------------------------------------

struct PlayCmd {
  std::string script = "harrow_quay";
  std::string arch = "hybrid";
  int k = 5;
  std::string log;
  std::string resume;
  ProviderFlags provider;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("play", "Play a script line by line on the terminal");
    app->add_option("--script", script, "script file or bundled script name");
    app->add_option("--arch", arch, "director-actor, one-for-all or hybrid");
    app->add_option("-k,--reflection-period", k, "reflect every k scene turns; 0 disables");
    auto* l = app->add_option("--log", log, "append the session event log here");
    auto* r = app->add_option("--resume", resume, "continue the session in this log")->check(CLI::ExistingFile);
    l->excludes(r);
    provider.add(*app);
  }

  static void print_scene(std::ostream& out, int index, const std::string& location, const std::string& background) {
    out << "\n== Scene " << index << ": " << location << " ==\n" << background << "\n\n";
  }

  int run(std::istream& in, std::ostream& out, std::ostream& err) {
    runtime::Session session;
    std::string log_path = log;
    if (!resume.empty()) {
      session = runtime::replay(runtime::read_event_log(read_text(resume)));
      log_path = resume;
    } else {
      session = runtime::start_session(load_script(script), architecture(arch, k), "cli");
      if (!log_path.empty()) write_text(log_path, runtime::started_event(session).dump() + "\n");
    }
    auto append = [&](const json& ev) {
      if (log_path.empty()) return;
      std::ofstream f(log_path, std::ios::app);
      f << ev.dump() << "\n";
    };

    auto gateway = provider.gateway();
    runtime::Engine engine(*gateway);
    const auto& player = session.script.player().name;
    out << session.script.title << "\nYou are " << player << ". Type /plots to peek at the plot chain, /quit to leave.\n";
    print_scene(out, session.scene().index, session.scene().location, session.scene().background);

    std::string line;
    while (session.status != runtime::SessionStatus::Finished) {
      out << "> " << std::flush;
      if (!std::getline(in, line)) break;
      if (line == "/quit") break;
      if (line == "/plots") {
        for (const auto& p : session.chain.plots) {
          out << "  [" << (p.completed ? "x" : " ") << "] " << p.id << " " << p.description << "\n";
        }
        continue;
      }
      try {
        const auto rec = engine.step(session, line);
        append(runtime::turn_event(session, rec));
        const auto& d = rec.decision;
        out << d.speaker << " (to " << d.addressee << "): " << d.utterance;
        if (d.action) out << " [" << *d.action << "]";
        out << "\n";
        for (const auto& w : rec.warnings) err << "warning: " << w << "\n";
        if (rec.next_scene) print_scene(out, rec.next_scene->index, rec.next_scene->location, rec.next_scene->background);
      } catch (const TurnFailed& e) {
        append(runtime::failed_event(session, line, e.what()));
        err << "turn failed: " << e.what() << " (try again)\n";
        if (e.provider_failure()) return kProviderFailure;
      }
    }
    if (session.status == runtime::SessionStatus::Finished) out << "\nThe End.\n";
    out << "(" << session.turn << " turns, " << session.lawful_calls() << " model calls)\n";
    return kOk;
  }
};

// simulate / compare ----------------------------------------------------------------

struct SimulateCmd {
  std::string script = "harrow_quay";
  std::string persona;
  std::string arch = "hybrid";
  int k = 5;
  int max_turns = simulation::kDefaultCutoff;
  std::string report;
  std::string transcript;
  std::string player_mock;
  ProviderFlags provider;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("simulate", "Let a persona-driven player agent play a script");
    app->add_option("--script", script, "script file or bundled script name");
    app->add_option("--persona", persona, "persona id or name (grumpy-guy, \"Fan Girl\", ...)")->required();
    app->add_option("--arch", arch, "director-actor, one-for-all or hybrid");
    app->add_option("-k,--reflection-period", k, "reflect every k scene turns; 0 disables");
    app->add_option("--max-turns", max_turns, "cutoff");
    app->add_option("--report", report, "report output path (default stdout)");
    app->add_option("--transcript", transcript, "session event log output path");
    app->add_option("--player-mock", player_mock, "JSON mock file for the player agent")->check(CLI::ExistingFile);
    provider.add(*app, "JSON mock file for the drama engine (no network)");
  }

  int run(std::ostream& out, std::ostream& err) {
    if (max_turns <= 0) throw UsageError("--max-turns must be positive");
    if (!provider.mock.empty() && player_mock.empty()) throw UsageError("--mock needs --player-mock as well");
    const auto catalog = simulation::PersonaCatalog::load_default();
    const auto& p = catalog.find(persona);
    auto drama = provider.gateway();
    auto player = provider.gateway(player_mock);
    auto run = simulation::run_playthrough(load_script(script), p, architecture(arch, k), {max_turns}, *drama, *player,
                                           "sim-" + p.id);
    if (!transcript.empty()) {
      std::string body;
      for (const auto& ev : run.events) body += ev.dump() + "\n";
      write_text(transcript, body);
    }
    const auto j = simulation::to_json(run.report).dump(2) + "\n";
    if (report.empty()) {
      out << j;
    } else {
      write_text(report, j);
    }
    if (run.report.failure) {
      err << "playthrough aborted: " << *run.report.failure << "\n";
      return kProviderFailure;
    }
    return kOk;
  }
};

struct CompareCmd {
  std::string script = "harrow_quay";
  std::vector<std::string> personas;
  bool all = false;
  int k = 5;
  int max_turns = simulation::kDefaultCutoff;
  std::string report;
  std::string player_mock;
  ProviderFlags provider;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("compare", "Run personas under each architecture and tabulate calls");
    app->add_option("--script", script, "script file or bundled script name");
    auto* p = app->add_option("--persona", personas, "persona id or name (repeatable)");
    auto* a = app->add_flag("--all-personas", all, "use all ten personas");
    p->excludes(a);
    app->add_option("-k,--reflection-period", k, "reflect every k scene turns")->check(CLI::PositiveNumber);
    app->add_option("--max-turns", max_turns, "cutoff per playthrough")->check(CLI::PositiveNumber);
    app->add_option("--report", report, "JSON report output path");
    app->add_option("--player-mock", player_mock, "JSON mock file for the player agent")->check(CLI::ExistingFile);
    provider.add(*app, "JSON mock file for the drama engine (no network)");
  }

  int run(std::ostream& out) {
    if (!all && personas.empty()) throw UsageError("compare needs --persona or --all-personas");
    if (!provider.mock.empty() && player_mock.empty()) throw UsageError("--mock needs --player-mock as well");
    const auto catalog = simulation::PersonaCatalog::load_default();
    std::vector<simulation::PlayerPersona> chosen;
    if (all) {
      chosen = catalog.personas();
    } else {
      for (const auto& p : personas) chosen.push_back(catalog.find(p));
    }
    const auto drama_cfg = provider.config(provider.mock);
    const auto player_cfg = provider.config(player_mock);
    const auto stubs = runtime::builtin_stubs();
    const auto c = simulation::compare_architectures(
        load_script(script), chosen, [&] { return llm::make_provider(drama_cfg, stubs); },
        [&] { return llm::make_provider(player_cfg, stubs); }, {max_turns}, k);
    out << simulation::render_table(c);
    if (!report.empty()) write_text(report, simulation::to_json(c).dump(2) + "\n");
    for (const auto& row : c.rows) {
      for (const auto& r : row.reports) {
        if (r.failure) return kProviderFailure;
      }
    }
    return kOk;
  }
};

// validate / playbook / serve --------------------------------------------------------

struct ValidateCmd {
  std::vector<std::string> files;
  bool generated = false;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("validate", "Check script files against the script schema");
    app->add_option("files", files, "script files")->required()->check(CLI::ExistingFile);
    app->add_flag("--generated", generated, "also require 3 to 5 scenes, as for generator output");
  }

  int run(std::ostream& out, std::ostream& err) {
    int rc = kOk;
    for (const auto& f : files) {
      try {
        const auto s = parse_script(read_text(f), generated ? ValidationLevel::Generated : ValidationLevel::Manual);
        out << f << ": ok (" << s.scenes.size() << " scenes, " << s.roster.size() << " characters)\n";
      } catch (const SyntaxError& e) {
        err << f << ": " << e.what() << "\n";
        rc = kValidationFailure;
      } catch (const SchemaError& e) {
        err << f << ": " << e.what() << "\n";
        rc = kValidationFailure;
      }
    }
    return rc;
  }
};

struct PlaybookCmd {
  bool as_json = false;
  CLI::App* list = nullptr;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("playbook", "Inspect the playwriting catalog");
    app->require_subcommand(1);
    list = app->add_subcommand("list", "List situations and techniques");
    list->add_flag("--json", as_json, "print the catalog as JSON");
  }

  int run(std::ostream& out) {
    const auto c = playbook::Catalog::load_default();
    if (as_json) {
      out << c.to_json().dump(2) << "\n";
      return kOk;
    }
    out << "Dramatic situations:\n";
    for (const auto& s : c.situations()) out << "  " << playbook::to_string(s.id) << "  " << s.name << "\n";
    out << "Narrative techniques:\n";
    for (const auto& t : c.techniques()) out << "  " << playbook::to_string(t.id) << "  " << t.description << "\n";
    out << "fingerprint " << c.fingerprint() << "\n";
    return kOk;
  }
};

struct ServeCmd {
  std::string config;
  int port = -1;
  std::string port_file;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("serve", "Run the HTTP service");
    app->add_option("--config", config, "service config file")->required()->check(CLI::ExistingFile);
    app->add_option("--port", port, "override the configured port (0 picks a free one)");
    app->add_option("--port-file", port_file, "write the bound port here once listening");
  }

  int run(std::ostream& out) {
    auto cfg = service::ServiceConfig::load(config);
    if (port >= 0) cfg.port = port;

    // Signals are taken by a watcher thread so stop() runs outside a handler.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    service::Service svc(cfg);
    std::thread server([&] { svc.listen(); });
    if (!svc.wait_until_listening(std::chrono::seconds(10))) {
      svc.stop();
      server.join();
      throw Error("service did not start on " + cfg.host + ":" + std::to_string(cfg.port));
    }
    out << "listening on " << cfg.host << ":" << svc.bound_port() << std::endl;
    if (!port_file.empty()) write_text(port_file, std::to_string(svc.bound_port()) + "\n");
    std::thread watcher([&] {
      int sig = 0;
      sigwait(&set, &sig);
      svc.stop();
    });
    server.join();
    // Wake the watcher if the server ended for another reason.
    pthread_kill(watcher.native_handle(), SIGTERM);
    watcher.join();
    return kOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"stagecraft: write and run LLM-driven interactive dramas"};
  app.name("stagecraft");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  GenerateCmd generate;
  PlayCmd play;
  SimulateCmd simulate;
  CompareCmd compare;
  ValidateCmd validate;
  PlaybookCmd playbook;
  ServeCmd serve;
  generate.add(app);
  play.add(app);
  simulate.add(app);
  compare.add(app);
  validate.add(app);
  playbook.add(app);
  serve.add(app);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (app.got_subcommand("generate")) return generate.run(out, err);
    if (app.got_subcommand("play")) return play.run(in, out, err);
    if (app.got_subcommand("simulate")) return simulate.run(out, err);
    if (app.got_subcommand("compare")) return compare.run(out);
    if (app.got_subcommand("validate")) return validate.run(out, err);
    if (app.got_subcommand("playbook")) return playbook.run(out);
    if (app.got_subcommand("serve")) return serve.run(out);
  } catch (const UsageError& e) {
    err << "usage: " << e.what() << "\n";
    for (const auto* sub : app.get_subcommands()) err << sub->help();
    return kUsage;
  } catch (const generation::PipelineError& e) {
    err << "error: " << e.what() << "\n";
    return e.provider_failure() ? kProviderFailure : kValidationFailure;
  } catch (const TurnFailed& e) {
    err << "error: " << e.what() << "\n";
    return e.provider_failure() ? kProviderFailure : kValidationFailure;
  } catch (const ProviderUnavailable& e) {
    err << "provider error: " << e.what() << "\n";
    return kProviderFailure;
  } catch (const AuthError& e) {
    err << "provider error: " << e.what() << "\n";
    return kProviderFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kValidationFailure;
  }
  return kUsage;
}

}  // namespace stagecraft::cli
