#include "menter/gateway.hpp"

#include <chrono>
#include <cstdlib>
#include <random>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "menter/util.hpp"

namespace menter {

const char* role_name(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "?";
}

long long approx_tokens(std::string_view text) {
  long long count = 0;
  bool in_token = false;
  for (char c : text) {
    const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
    if (!ws && !in_token) ++count;
    in_token = !ws;
  }
  return count;
}

namespace {

void check_conversation(const std::vector<ChatMessage>& messages) {
  if (messages.empty()) {
    throw GatewayError(GatewayError::Kind::EmptyConversation, "conversation is empty");
  }
}

}  // namespace

Completion MockBackend::complete(const std::vector<ChatMessage>& messages) {
  check_conversation(messages);
  if (next_ >= script_.size()) {
    throw GatewayError(GatewayError::Kind::ScriptExhausted,
                       "mock script exhausted after " + std::to_string(script_.size()) +
                           " replies");
  }
  const MockReply& reply = script_[next_++];
  Completion out;
  out.content = reply.content;
  out.backend_id = id();
  if (reply.prompt_tokens >= 0) {
    out.usage.prompt_tokens = reply.prompt_tokens;
  } else {
    long long sum = 0;
    for (const ChatMessage& m : messages) sum += approx_tokens(m.content);
    out.usage.prompt_tokens = sum;
  }
  out.usage.completion_tokens =
      reply.completion_tokens >= 0 ? reply.completion_tokens : approx_tokens(reply.content);
  return out;
}

namespace {

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendConfig config) : config_(std::move(config)) {}

  Completion complete(const std::vector<ChatMessage>& messages) override {
    check_conversation(messages);
    nlohmann::json body;
    body["model"] = config_.model;
    body["temperature"] = config_.temperature;
    nlohmann::json msgs = nlohmann::json::array();
    for (const ChatMessage& m : messages) {
      msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    }
    body["messages"] = std::move(msgs);
    const std::string payload = body.dump();

    httplib::Client client(config_.endpoint);
    client.set_connection_timeout(std::chrono::milliseconds(
        static_cast<long long>(config_.timeout_s * 1000)));
    client.set_read_timeout(std::chrono::milliseconds(
        static_cast<long long>(config_.timeout_s * 1000)));
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    std::mt19937 jitter_rng{std::random_device{}()};
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        // Exponential backoff with +/-25% jitter.
        double ms = config_.retry_base_ms * std::pow(2.0, attempt - 1);
        std::uniform_real_distribution<double> dist(0.75, 1.25);
        ms *= dist(jitter_rng);
        std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(ms)));
      }
      auto res = client.Post("/v1/chat/completions", headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 401) {
        throw GatewayError(GatewayError::Kind::AuthError,
                           "backend rejected credentials (401)");
      }
      if (res->status >= 500) {
        last_error = "server error " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw GatewayError(GatewayError::Kind::BackendUnavailable,
                           "unexpected status " + std::to_string(res->status) + ": " +
                               res->body);
      }
      return parse_reply(res->body);
    }
    throw GatewayError(GatewayError::Kind::BackendUnavailable,
                       "backend unavailable after " + std::to_string(config_.max_retries + 1) +
                           " attempts (" + last_error + ")");
  }

  std::string id() const override { return "http:" + config_.model; }

 private:
  Completion parse_reply(const std::string& body) const {
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) {
      throw GatewayError(GatewayError::Kind::BackendUnavailable,
                         "backend returned unparsable JSON");
    }
    Completion out;
    out.backend_id = id();
    try {
      out.content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw GatewayError(GatewayError::Kind::BackendUnavailable,
                         "backend reply missing choices[0].message.content");
    }
    if (j.contains("usage")) {
      out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0ll);
      out.usage.completion_tokens = j["usage"].value("completion_tokens", 0ll);
    }
    return out;
  }

  BackendConfig config_;
};

}  // namespace

std::vector<MockReply> mock_script_from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.is_array()) {
    throw GatewayError(GatewayError::Kind::BadConfig, "mock script must be a JSON array");
  }
  std::vector<MockReply> script;
  for (const nlohmann::json& entry : j) {
    MockReply r;
    r.content = entry.at("content").get<std::string>();
    r.prompt_tokens = entry.value("prompt_tokens", -1ll);
    r.completion_tokens = entry.value("completion_tokens", -1ll);
    script.push_back(std::move(r));
  }
  return script;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  if (config.kind == BackendKind::Http) {
    if (config.endpoint.empty() || config.model.empty()) {
      throw GatewayError(GatewayError::Kind::BadConfig,
                         "http backend requires endpoint and model");
    }
    return std::make_unique<HttpBackend>(config);
  }
  if (config.mock_script.empty()) {
    throw GatewayError(GatewayError::Kind::BadConfig, "mock backend requires a script path");
  }
  auto text = read_file(config.mock_script);
  if (!text) {
    throw GatewayError(GatewayError::Kind::BadConfig,
                       "cannot read mock script '" + config.mock_script + "'");
  }
  return std::make_unique<MockBackend>(mock_script_from_json_text(*text));
}

std::vector<ChatMessage> truncate_history(const std::vector<ChatMessage>& history) {
  std::vector<const ChatMessage*> keep;
  const ChatMessage* system = nullptr;
  for (const ChatMessage& m : history) {
    if (m.role == Role::System) {
      system = &m;
      break;
    }
  }
  const ChatMessage* first = nullptr;
  for (const ChatMessage& m : history) {
    if (m.role != Role::System) {
      first = &m;
      break;
    }
  }
  const ChatMessage* last = history.empty() ? nullptr : &history.back();
  if (system) keep.push_back(system);
  if (first && first != system) keep.push_back(first);
  if (last && last != system && last != first) keep.push_back(last);
  std::vector<ChatMessage> out;
  out.reserve(keep.size());
  for (const ChatMessage* m : keep) out.push_back(*m);
  return out;
}

}  // namespace menter
