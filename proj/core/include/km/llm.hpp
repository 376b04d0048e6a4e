#pragma once

#include <string>
#include <unordered_map>

#include "km/ga.hpp"

namespace km::llm {

struct ClientConfig {
  std::string endpoint;  // full chat-completions URL, e.g. http://host:8080/v1/chat/completions
  std::string model;
  std::string api_key;
  int max_attempts = 3;  // total tries for transient failures (connect, 429, 5xx)
  int backoff_ms = 250;  // doubled after each failed attempt
  std::string replay_log_path;  // JSON-lines of every exchange; empty = no recording
  bool replay_only = false;     // serve recorded responses byte-exactly, no network
};

/// Live configuration from the environment: KM_LLM_ENDPOINT, KM_LLM_MODEL and
/// KM_LLM_API_KEY_VAR (the *name* of the variable holding the key, so the key
/// itself never appears in configs or logs). Missing pieces raise ConfigError
/// before any request is attempted.
[[nodiscard]] ClientConfig config_from_env();

/// Minimal chat-completions client (system + user message per call). Requests
/// are keyed by a content hash; successful exchanges append to the replay log
/// so any recorded run can be replayed offline. HTTPS requires a TLS-enabled
/// build; plain HTTP always works.
class LlmClient {
 public:
  explicit LlmClient(ClientConfig config);

  /// One completion. Transient failures retry with exponential backoff up to
  /// max_attempts; persistent failures raise TransportError with the status
  /// and a body excerpt.
  [[nodiscard]] std::string chat(const std::string& system_prompt, const std::string& user_prompt,
                                 double temperature);

  [[nodiscard]] const ClientConfig& config() const { return config_; }

 private:
  void load_replay();
  [[nodiscard]] std::string request_key(const std::string& system_prompt,
                                        const std::string& user_prompt,
                                        double temperature) const;

  ClientConfig config_;
  std::unordered_map<std::string, std::string> replay_;
  bool replay_loaded_ = false;
};

/// Live proposer: renders the crossover/mutation prompts (depth-restricted
/// system prompt when the config declares a limit) and parses the response.
class LlmProposer final : public ga::Proposer {
 public:
  explicit LlmProposer(LlmClient& client) : client_(&client) {}

  [[nodiscard]] ga::Proposal crossover(const grammar::KernelExpr& parent1, double fitness1,
                                       const grammar::KernelExpr& parent2, double fitness2,
                                       const ga::Config& config) override;
  [[nodiscard]] ga::Proposal mutate(const grammar::KernelExpr& kernel, double fitness,
                                    const ga::Config& config) override;

 private:
  LlmClient* client_;
};

}  // namespace km::llm
