#pragma once

// Pluggable chat-completion backends. The http kind speaks the
// OpenAI-compatible /v1/chat/completions JSON shape with retry/backoff; the
// mock kind replays a scripted reply sequence and keeps everything hermetic.

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace menter {

enum class Role { System, User, Assistant };

const char* role_name(Role r);

struct ChatMessage {
  Role role = Role::User;
  std::string content;
};

struct TokenUsage {
  long long prompt_tokens = 0;
  long long completion_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
  long long total() const { return prompt_tokens + completion_tokens; }
  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct Completion {
  std::string content;
  TokenUsage usage;
  std::string backend_id;
};

enum class BackendKind { Http, Mock };

struct BackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::string endpoint;           // http kind: scheme://host[:port]
  std::string model;
  double temperature = 0.2;
  double timeout_s = 30.0;
  int max_retries = 3;
  std::string api_key_env = "MENTER_API_KEY";
  std::string mock_script;        // mock kind: script file path
  int retry_base_ms = 1000;       // backoff base; doubles per attempt
};

class GatewayError : public std::runtime_error {
 public:
  enum class Kind {
    BackendUnavailable,
    ScriptExhausted,
    AuthError,
    EmptyConversation,
    BadConfig,
  };
  GatewayError(Kind kind, const std::string& what) : std::runtime_error(what), kind(kind) {}
  Kind kind;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Requires a nonempty conversation starting with a system message.
  virtual Completion complete(const std::vector<ChatMessage>& messages) = 0;
  virtual std::string id() const = 0;
};

struct MockReply {
  std::string content;
  long long prompt_tokens = -1;      // < 0: approximate by whitespace tokens
  long long completion_tokens = -1;
};

class MockBackend : public Backend {
 public:
  explicit MockBackend(std::vector<MockReply> script) : script_(std::move(script)) {}
  Completion complete(const std::vector<ChatMessage>& messages) override;
  std::string id() const override { return "mock"; }
  size_t consumed() const { return next_; }

 private:
  std::vector<MockReply> script_;
  size_t next_ = 0;
};

/// Validates the config and constructs the backend (reads the mock script
/// file for mock kind). Throws GatewayError::BadConfig.
std::unique_ptr<Backend> make_backend(const BackendConfig& config);

std::vector<MockReply> mock_script_from_json_text(const std::string& text);

/// Context-window relief: [system (if any), first non-system, last message],
/// deduplicated when they coincide. Never longer than 3; idempotent.
std::vector<ChatMessage> truncate_history(const std::vector<ChatMessage>& history);

/// Whitespace token count; the mock backend's usage approximation.
long long approx_tokens(std::string_view text);

/// Session token totals, per agent role and overall.
struct UsageLedger {
  TokenUsage total;
  std::map<std::string, TokenUsage> by_role;

  void add(const std::string& role, const TokenUsage& usage) {
    total += usage;
    by_role[role] += usage;
  }
};

}  // namespace menter
