#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "stagecraft/llm.hpp"
#include "stagecraft/runtime.hpp"

namespace httplib {
class Server;
}

// HTTP facade over generation jobs and live sessions. State lives on disk as
// script files, per-session JSON-lines event logs and job records; a
// restarted service rebuilds every session by replaying its log.
namespace stagecraft::service {

// Flat "key = value" config with [section] prefixes ("drama.endpoint").
// Values may be quoted; '#' starts a comment.
std::map<std::string, std::string> parse_config(std::string_view text);

struct ServiceConfig {
  std::filesystem::path data_dir = "stagecraft-data";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::string> token;  // bearer token required when set
  llm::ProviderConfig drama;         // live sessions
  llm::ProviderConfig generation;    // generation jobs
  runtime::ArchitectureConfig architecture;  // default for new sessions
  std::size_t memory_window = 0;

  /// Keys: data_dir, host, port, token, token_env, [drama]/[generation]
  /// provider (mock|http), mock_file, endpoint, model, api_key_env,
  /// timeout_s, max_attempts; [runtime] architecture, reflection_period
  /// ("none" disables), reflection_budget, memory_window.
  static ServiceConfig from_map(const std::map<std::string, std::string>& kv,
                                const std::filesystem::path& base_dir = {});
  static ServiceConfig load(const std::filesystem::path& file);
};

enum class JobState { Queued, Running, Done, Failed };
std::string_view to_string(JobState s);

using ProviderFactory = std::function<std::shared_ptr<llm::ChatProvider>()>;

class Service {
 public:
  /// Providers come from the config unless factories are given.
  explicit Service(ServiceConfig config, ProviderFactory drama = nullptr, ProviderFactory generation = nullptr);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Each operation returns the JSON body of the matching HTTP endpoint.
  nlohmann::json upload_script(const nlohmann::json& doc);  // {"script_id"}
  nlohmann::json get_script(const std::string& id);
  nlohmann::json create_session(const nlohmann::json& request);  // {"script_id", "architecture"?, "reflection_period"?}
  /// One engine step. Concurrent posts to one session run first come, first
  /// served. A repeated idempotency key returns the earlier result unchanged.
  nlohmann::json post_message(const std::string& session_id, const std::string& text,
                              const std::optional<std::string>& idempotency_key = std::nullopt);
  nlohmann::json transcript(const std::string& session_id);
  nlohmann::json plots(const std::string& session_id);
  nlohmann::json submit_generation(const nlohmann::json& request);  // {"premise", "seed"?}
  nlohmann::json job(const std::string& job_id);

  /// Turn events at or after index `from` (0 = first turn); blocks up to
  /// `wait` for one to arrive. Empty when none arrived or the session ended.
  std::vector<nlohmann::json> turn_events(const std::string& session_id, std::size_t from,
                                          std::chrono::milliseconds wait);
  bool session_finished(const std::string& session_id);

  runtime::Session session_state(const std::string& session_id);
  std::filesystem::path session_log_path(const std::string& session_id) const;
  /// Blocks until no generation job is queued or running.
  void wait_for_jobs();

  /// Routes for every endpoint, with bearer-token checks when configured.
  void mount(httplib::Server& server);
  /// Binds host:port (port 0 picks one) and serves until stop().
  void listen();
  int bound_port() const { return bound_port_.load(); }
  void stop();
  bool wait_until_listening(std::chrono::milliseconds timeout);

  const ServiceConfig& config() const { return config_; }

 private:
  struct Slot;
  struct Job;

  std::shared_ptr<Slot> slot(const std::string& id);
  DramaScript load_script(const std::string& id);
  void run_job(std::shared_ptr<Job> job);
  void save_job(const Job& job);

  ServiceConfig config_;
  ProviderFactory drama_factory_;
  ProviderFactory generation_factory_;
  std::shared_ptr<llm::ChatProvider> drama_provider_;
  std::unique_ptr<llm::Gateway> drama_gateway_;

  std::mutex mutex_;  // guards the maps below
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::vector<std::thread> workers_;
  std::condition_variable jobs_cv_;

  std::unique_ptr<httplib::Server> server_;
  std::atomic<int> bound_port_{0};
};

}  // namespace stagecraft::service
