#include "km/llm.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "km/errors.hpp"
#include "km/hash.hpp"
#include "km/io.hpp"
#include "km/prompts.hpp"

namespace km::llm {

namespace {

std::string getenv_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v == nullptr ? std::string{} : std::string{v};
}

std::string iso_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string body_excerpt(const std::string& body) {
  constexpr std::size_t kMax = 200;
  if (body.size() <= kMax) return body;
  return body.substr(0, kMax) + "...";
}

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const std::size_t scheme = url.find("://");
  if (scheme == std::string::npos) {
    throw ConfigError("llm endpoint must be a full URL (got '" + url + "')");
  }
  const std::size_t path_at = url.find('/', scheme + 3);
  if (path_at == std::string::npos) return {url, "/"};
  return {url.substr(0, path_at), url.substr(path_at)};
}

}  // namespace

ClientConfig config_from_env() {
  ClientConfig cfg;
  cfg.endpoint = getenv_or_empty("KM_LLM_ENDPOINT");
  if (cfg.endpoint.empty()) {
    throw ConfigError("KM_LLM_ENDPOINT is not set (chat-completions URL)");
  }
  cfg.model = getenv_or_empty("KM_LLM_MODEL");
  if (cfg.model.empty()) throw ConfigError("KM_LLM_MODEL is not set");
  const std::string key_var = getenv_or_empty("KM_LLM_API_KEY_VAR");
  if (key_var.empty()) {
    throw ConfigError(
        "KM_LLM_API_KEY_VAR is not set (name of the variable holding the API key)");
  }
  cfg.api_key = getenv_or_empty(key_var.c_str());
  if (cfg.api_key.empty()) {
    throw ConfigError("API key variable '" + key_var + "' is empty or unset");
  }
  return cfg;
}

LlmClient::LlmClient(ClientConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty() && !config_.replay_only) {
    throw ConfigError("llm client needs an endpoint in live mode");
  }
}

std::string LlmClient::request_key(const std::string& system_prompt,
                                   const std::string& user_prompt, double temperature) const {
  char tbuf[32];
  std::snprintf(tbuf, sizeof tbuf, "%.17g", temperature);
  std::string material = config_.model;
  material += '\x1f';
  material += tbuf;
  material += '\x1f';
  material += system_prompt;
  material += '\x1f';
  material += user_prompt;
  return hash_hex(material);
}

void LlmClient::load_replay() {
  if (replay_loaded_) return;
  replay_loaded_ = true;
  if (config_.replay_log_path.empty() || !io::file_exists(config_.replay_log_path)) return;
  const std::string text = io::read_file(config_.replay_log_path);
  std::size_t at = 0;
  while (at < text.size()) {
    std::size_t end = text.find('\n', at);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(at, end - at);
    at = end + 1;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("request_hash") || !j.contains("response")) continue;
    replay_[j.at("request_hash").get<std::string>()] = j.at("response").get<std::string>();
  }
}

std::string LlmClient::chat(const std::string& system_prompt, const std::string& user_prompt,
                            double temperature) {
  const std::string key = request_key(system_prompt, user_prompt, temperature);
  load_replay();

  if (const auto it = replay_.find(key); it != replay_.end()) return it->second;
  if (config_.replay_only) {
    throw TransportError("replay mode: no recorded response for request " + key);
  }

  const SplitUrl url = split_url(config_.endpoint);

  nlohmann::json body;
  body["model"] = config_.model;
  body["temperature"] = temperature;
  body["messages"] = nlohmann::json::array({
      nlohmann::json{{"role", "system"}, {"content", system_prompt}},
      nlohmann::json{{"role", "user"}, {"content", user_prompt}},
  });
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1) {
      const int delay = config_.backoff_ms << (attempt - 2);
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }

    httplib::Client client(url.base);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    const httplib::Result res = client.Post(url.path, headers, payload, "application/json");

    if (!res) {
      last_error = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status) + ": " + body_excerpt(res->body);
      continue;
    }
    if (res->status != 200) {
      throw TransportError("HTTP " + std::to_string(res->status) + ": " +
                           body_excerpt(res->body));
    }

    const nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty() ||
        !parsed["choices"][0].contains("message")) {
      throw TransportError("malformed chat-completion response: " + body_excerpt(res->body));
    }
    const std::string content =
        parsed["choices"][0]["message"].value("content", std::string{});

    replay_[key] = content;
    if (!config_.replay_log_path.empty()) {
      nlohmann::json record;
      record["request_hash"] = key;
      record["system"] = system_prompt;
      record["user"] = user_prompt;
      record["response"] = content;
      record["timestamp"] = iso_timestamp();
      io::append_file(config_.replay_log_path, record.dump() + "\n");
    }
    return content;
  }
  throw TransportError("llm request failed after " + std::to_string(config_.max_attempts) +
                       " attempts; last error: " + last_error);
}

namespace {

std::string system_prompt_for(const ga::Config& config) {
  if (config.max_depth) {
    prompts::Slots slots;
    slots.max_depth = *config.max_depth;
    return prompts::render_prompt(prompts::Kind::system_depth, slots);
  }
  return std::string(prompts::template_text(prompts::Kind::system_unrestricted));
}

std::string depth_constraint_for(const ga::Config& config) {
  return config.max_depth ? prompts::depth_note(*config.max_depth) : std::string{};
}

}  // namespace

ga::Proposal LlmProposer::crossover(const grammar::KernelExpr& parent1, double fitness1,
                                    const grammar::KernelExpr& parent2, double fitness2,
                                    const ga::Config& config) {
  prompts::Slots slots;
  slots.parent1 = grammar::print_expr(parent1);
  slots.parent2 = grammar::print_expr(parent2);
  slots.fitness1 = fitness1;
  slots.fitness2 = fitness2;
  slots.operators = std::string(ga::kOperatorsSlot);
  slots.depth_constraint = depth_constraint_for(config);
  const std::string user = prompts::render_prompt(prompts::Kind::crossover, slots);

  const std::string raw = client_->chat(system_prompt_for(config), user, config.temperature);
  ga::Proposal p = ga::parse_proposal(raw, config.max_depth);
  p.source = ga::ProposerKind::llm;
  return p;
}

ga::Proposal LlmProposer::mutate(const grammar::KernelExpr& kernel, double fitness,
                                 const ga::Config& config) {
  prompts::Slots slots;
  slots.kernel = grammar::print_expr(kernel);
  slots.fitness = fitness;
  slots.base_kernels = std::string(ga::kBaseKernelsSlot);
  slots.operators = std::string(ga::kOperatorsSlot);
  slots.depth_constraint = depth_constraint_for(config);
  const std::string user = prompts::render_prompt(prompts::Kind::mutation, slots);

  const std::string raw = client_->chat(system_prompt_for(config), user, config.temperature);
  ga::Proposal p = ga::parse_proposal(raw, config.max_depth);
  p.source = ga::ProposerKind::llm;
  return p;
}

}  // namespace km::llm
