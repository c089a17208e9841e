#pragma once

// The multi-agent workflow state machine: task intake with retrieval, staged
// planning, iterative drafting against a chat backend, executor validation,
// the three-part testbench, repair routing with loop guarding, and knowledge
// capture on success. Drafts are plain SPICE decks validated by parsing; no
// generated code is ever executed.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "menter/ctt.hpp"
#include "menter/darag.hpp"
#include "menter/dcsim.hpp"
#include "menter/erc.hpp"
#include "menter/gateway.hpp"
#include "menter/speccheck.hpp"

namespace menter {

struct TaskDef {
  std::string task_id;
  std::string title;
  std::string prompt;
  SpecRequirement spec;
  std::optional<std::string> stage_template;
  int max_iterations = 8;
  std::optional<long long> budget;  // token ceiling (prompt + completion)
};

TaskDef task_from_json_text(const std::string& text);
std::string task_to_json_text(const TaskDef& task);

enum class Phase {
  Intake,
  CosPlanning,
  Drafting,
  ExecutorCheck,
  Testbench,
  Repair,
  Done,
  Failed,
};

const char* phase_name(Phase p);

enum class TaskStatus { Success, Failed, LoopDetected, BudgetExceeded };

const char* status_name(TaskStatus s);

struct ValidationReport {
  bool syntax_ok = false;
  ErcReport erc;
  std::optional<DCSolution> probe_op;
  bool ok = false;
  std::string message;  // first failure, "CODE: detail"
};

/// Parse -> flatten -> erc -> probe operating point. Total; never executes
/// model output.
ValidationReport executor_validate(const std::string& draft, const SolverOptions& solver = {},
                                   const ErcOptions& erc = {});

struct TestbenchReport {
  ErcReport erc;
  struct SweepSummary {
    std::string source;
    double lo = 0.0, hi = 0.0;
    int points = 0;
    int failures = 0;
    bool rails_ok = true;
  };
  std::vector<SweepSummary> sweeps;
  std::vector<CheckOutcome> outcomes;
  bool passed = false;
  std::vector<std::string> failure_messages;  // ordered: connection, sweep, functional
};

/// The three validation components: connection checker, DC sweep checker
/// (all points converge, rail bounds hold at every point), functionality
/// verifier.
TestbenchReport testbench_run(const Netlist& deck, const SpecRequirement& spec,
                              const SolverOptions& solver = {}, const ErcOptions& erc = {});

enum class GuardDecision { Continue, Terminate };

/// Terminate iff the most recent `threshold` signatures are identical.
GuardDecision loop_guard(const std::vector<std::string>& signatures, int threshold);

/// code + hash of the whitespace-collapsed, number-stripped message.
std::string error_signature(const std::string& code, const std::string& message);

struct SessionState {
  TaskDef task;
  Phase phase = Phase::Intake;
  std::vector<StageRecord> stages;
  std::vector<std::string> drafts;
  std::vector<std::string> error_signatures;
  int attempt = 0;
  UsageLedger usage;
  std::map<std::string, std::vector<ChatMessage>> transcript;  // per agent role
};

struct TaskResult {
  TaskStatus status = TaskStatus::Failed;
  std::string final_netlist;  // canonical deck on success
  int iterations = 0;         // drafting calls made
  std::vector<CheckOutcome> outcomes;
  UsageLedger usage;
  std::string ctt_entry_id;
  std::string detail;
};

class TranscriptSink {
 public:
  virtual ~TranscriptSink() = default;
  virtual void record(const std::string& agent, const std::vector<ChatMessage>& sent,
                      const Completion& reply) = 0;
};

/// JSON-lines transcript: one record per backend call with role, messages,
/// reply, usage, timestamp.
class JsonlTranscriptSink : public TranscriptSink {
 public:
  explicit JsonlTranscriptSink(std::string path) : path_(std::move(path)) {}
  void record(const std::string& agent, const std::vector<ChatMessage>& sent,
              const Completion& reply) override;

 private:
  std::string path_;
};

struct CheckpointResult {
  enum class Action { Approve, Edit, Abort } action = Action::Approve;
  std::string replacement_draft;  // Edit only
};

using CheckpointHook = std::function<CheckpointResult(Phase, SessionState&)>;

struct RunOptions {
  SolverOptions solver;
  ErcOptions erc;
  int loop_threshold = 3;  // consecutive identical signatures before bailing
  int retrieval_k = 3;
  std::map<std::string, std::vector<std::string>> stage_templates;  // merged over built-ins
  CheckpointHook checkpoint;  // unset: fully automated
  TranscriptSink* transcript = nullptr;
};

struct Stores {
  CttStore* ctt = nullptr;
  const CorpusIndex* darag = nullptr;
};

struct CosPlanResult {
  std::vector<std::string> stages;
  std::optional<Completion> completion;  // set when a backend call was made
  std::string prompt_sent;
  bool from_template = false;
};

/// Template passthrough when the task names one; otherwise one backend call,
/// parsed leniently, with a fixed four-stage fallback on unparseable output.
CosPlanResult cos_plan(const TaskDef& task, const std::vector<std::string>& retrieved,
                       Backend* backend,
                       const std::map<std::string, std::vector<std::string>>& templates);

/// Numbered/bulleted stage lines; empty when none found.
std::vector<std::string> parse_stage_list(const std::string& reply);

/// Last fenced code block, else from the first ".title" line, else the whole
/// reply.
std::string extract_netlist(const std::string& reply);

std::map<std::string, std::vector<std::string>> builtin_stage_templates();

TaskResult run_task(const TaskDef& task, Backend& backend, const Stores& stores,
                    const RunOptions& opts = {}, SessionState* session_out = nullptr);

}  // namespace menter
