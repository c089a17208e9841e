#include "menter/orchestrator.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "menter/util.hpp"

namespace menter {

namespace {

using nlohmann::json;

constexpr const char* kSystemPrompt =
    "You are a senior analog circuit designer. When asked for a circuit, reply "
    "with a complete plain SPICE netlist in a fenced code block.";

constexpr const char* kDraftRole = "circuit";
constexpr const char* kPlanRole = "circuit.cos";

}  // namespace

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Intake: return "intake";
    case Phase::CosPlanning: return "cos_planning";
    case Phase::Drafting: return "drafting";
    case Phase::ExecutorCheck: return "executor_check";
    case Phase::Testbench: return "testbench";
    case Phase::Repair: return "repair";
    case Phase::Done: return "done";
    case Phase::Failed: return "failed";
  }
  return "?";
}

const char* status_name(TaskStatus s) {
  switch (s) {
    case TaskStatus::Success: return "Success";
    case TaskStatus::Failed: return "Failed";
    case TaskStatus::LoopDetected: return "LoopDetected";
    case TaskStatus::BudgetExceeded: return "BudgetExceeded";
  }
  return "?";
}

TaskDef task_from_json_text(const std::string& text) {
  json j = json::parse(text);
  TaskDef task;
  task.task_id = j.at("task_id").get<std::string>();
  task.title = j.value("title", "");
  task.prompt = j.at("prompt").get<std::string>();
  if (task.prompt.empty()) throw std::runtime_error("task prompt must be nonempty");
  task.spec = spec_from_json_text(j.at("spec").dump());
  if (j.contains("stage_template")) {
    task.stage_template = j.at("stage_template").get<std::string>();
  }
  task.max_iterations = j.value("max_iterations", 8);
  if (task.max_iterations < 1) throw std::runtime_error("max_iterations must be >= 1");
  if (j.contains("budget")) task.budget = j.at("budget").get<long long>();
  return task;
}

std::string task_to_json_text(const TaskDef& task) {
  json j{{"task_id", task.task_id},
         {"title", task.title},
         {"prompt", task.prompt},
         {"spec", json::parse(spec_to_json_text(task.spec))},
         {"max_iterations", task.max_iterations}};
  if (task.stage_template) j["stage_template"] = *task.stage_template;
  if (task.budget) j["budget"] = *task.budget;
  return j.dump(2);
}

ValidationReport executor_validate(const std::string& draft, const SolverOptions& solver,
                                   const ErcOptions& erc) {
  ValidationReport report;
  ParseResult parsed = parse_netlist(draft);
  report.syntax_ok = parsed.syntax_ok();
  if (!report.syntax_ok) {
    report.message = "SYNTAX: " + parsed.first_error();
    return report;
  }
  FlatCircuit flat;
  try {
    flat = flatten(parsed.netlist);
  } catch (const FlattenError& e) {
    report.syntax_ok = false;
    report.message = std::string("SYNTAX: ") + e.what();
    return report;
  }
  report.erc = run_erc(flat, erc);
  if (!report.erc.passed) {
    report.message = report.erc.first_failure();
    return report;
  }
  report.probe_op = solve_op(flat, solver);
  if (!report.probe_op->converged) {
    report.message = "SIM: operating point did not converge (" +
                     report.probe_op->diagnosis + ")";
    return report;
  }
  report.ok = true;
  return report;
}

TestbenchReport testbench_run(const Netlist& deck, const SpecRequirement& spec,
                              const SolverOptions& solver, const ErcOptions& erc) {
  TestbenchReport report;
  FlatCircuit flat;
  try {
    flat = flatten(deck);
  } catch (const FlattenError& e) {
    report.failure_messages.push_back(std::string("SYNTAX: ") + e.what());
    return report;
  }

  // Connection checker.
  report.erc = run_erc(flat, erc);
  if (!report.erc.passed) {
    report.failure_messages.push_back(report.erc.first_failure());
    report.passed = false;
    // Downstream components are skipped: their inputs are not trustworthy.
    report.failure_messages.push_back(
        "SKIPPED: sweep and functional checks skipped after connection-check failure");
    return report;
  }

  // DC sweep checker: every distinct (source, range) in the spec, rail
  // bounds enforced at every point.
  std::vector<RailBoundCheck> rails;
  for (const Check& c : spec.checks) {
    if (const auto* rb = std::get_if<RailBoundCheck>(&c)) rails.push_back(*rb);
  }
  struct Range {
    std::string source;
    double lo, hi;
  };
  std::vector<Range> ranges;
  for (const Check& c : spec.checks) {
    const LinearFitCheck* lf = std::get_if<LinearFitCheck>(&c);
    const MonotoneCheck* mc = std::get_if<MonotoneCheck>(&c);
    if (!lf && !mc) continue;
    Range r{fold(lf ? lf->source : mc->source), lf ? lf->lo : mc->lo, lf ? lf->hi : mc->hi};
    const bool seen = std::any_of(ranges.begin(), ranges.end(), [&](const Range& o) {
      return o.source == r.source && o.lo == r.lo && o.hi == r.hi;
    });
    if (!seen) ranges.push_back(std::move(r));
  }
  bool sweeps_ok = true;
  for (const Range& r : ranges) {
    TestbenchReport::SweepSummary summary;
    summary.source = r.source;
    summary.lo = r.lo;
    summary.hi = r.hi;
    try {
      const double step = (r.hi - r.lo) / (kLinearFitPoints - 1);
      SweepResult sweep = dc_sweep(flat, r.source, r.lo, r.hi, step, solver);
      summary.points = static_cast<int>(sweep.points.size());
      summary.failures = static_cast<int>(sweep.failures.size());
      if (!sweep.failures.empty()) {
        sweeps_ok = false;
       report.failure_messages.push_back(
            "SWEEP: " + r.source + " failed to converge at " +
            std::to_string(sweep.failures.size()) + " of " +
            std::to_string(sweep.points.size()) + " points");
      }
      for (const auto& [value, sol] : sweep.points) {
        if (!sol.converged) continue;
        for (const RailBoundCheck& rb : rails) {
          const double v = sol.voltage(rb.node);
          if (v < rb.lo || v > rb.hi) {
            summary.rails_ok = false;
          }
        }
      }
      if (!summary.rails_ok) {
        sweeps_ok = false;
        report.failure_messages.push_back("SWEEP: rail bounds violated while sweeping " +
                                          r.source);
      }
    } catch (const SweepError& e) {
      sweeps_ok = false;
      summary.failures = -1;
      report.failure_messages.push_back(std::string("SWEEP: ") + e.what());
    }
    report.sweeps.push_back(summary);
  }

  // Functionality verifier: every check evaluated, no short-circuit.
  report.outcomes = evaluate_spec(flat, spec, solver);
  bool functional_ok = true;
  for (const CheckOutcome& o : report.outcomes) {
    if (!o.passed) {
      functional_ok = false;
      report.failure_messages.push_back(o.message);
    }
  }
  report.passed = sweeps_ok && functional_ok;
  return report;
}

GuardDecision loop_guard(const std::vector<std::string>& signatures, int threshold) {
  if (threshold < 2 || static_cast<int>(signatures.size()) < threshold) {
    return GuardDecision::Continue;
  }
  const std::string& last = signatures.back();
  for (size_t i = signatures.size() - threshold; i < signatures.size(); ++i) {
    if (signatures[i] != last) return GuardDecision::Continue;
  }
  return GuardDecision::Terminate;
}

std::string error_signature(const std::string& code, const std::string& message) {
  static const std::regex number(R"([-+]?[0-9]+(\.[0-9]*)?([eE][-+]?[0-9]+)?)");
  std::string stripped = std::regex_replace(message, number, "#");
  std::string collapsed;
  bool ws = false;
  for (char c : stripped) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ws = true;
      continue;
    }
    if (ws && !collapsed.empty()) collapsed += ' ';
    ws = false;
    collapsed += c;
  }
  return code + ":" + to_hex(fnv1a64(collapsed));
}

std::vector<std::string> parse_stage_list(const std::string& reply) {
  std::vector<std::string> stages;
  static const std::regex numbered(R"(^\s*(?:stage\s+)?[0-9]+[.):]\s*(.+)$)",
                                   std::regex::icase);
  static const std::regex bulleted(R"(^\s*[-*+]\s+(.+)$)");
  std::istringstream in(reply);
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_match(line, m, numbered) || std::regex_match(line, m, bulleted)) {
      std::string name = trim(m[1].str());
      if (!name.empty()) stages.push_back(std::move(name));
    }
  }
  return stages;
}

std::string extract_netlist(const std::string& reply) {
  // Last fenced code block wins.
  size_t fence = reply.rfind("```");
  if (fence != std::string::npos) {
    size_t open = reply.rfind("```", fence == 0 ? 0 : fence - 1);
    if (open != std::string::npos && open < fence) {
      size_t body = reply.find('\n', open);
      if (body != std::string::npos && body < fence) {
        return trim(reply.substr(body + 1, fence - body - 1));
      }
    }
  }
  // Bare deck starting at ".title".
  std::string folded = fold(reply);
  size_t title = folded.find(".title");
  if (title != std::string::npos && (title == 0 || reply[title - 1] == '\n')) {
    return trim(reply.substr(title));
  }
  return trim(reply);
}

std::map<std::string, std::vector<std::string>> builtin_stage_templates() {
  return {
      {"default", {"requirements", "topology", "parameter synthesis", "netlist"}},
      {"bgr-default",
       {"requirements analysis", "core topology selection", "parameter synthesis",
        "netlist generation"}},
  };
}

CosPlanResult cos_plan(const TaskDef& task, const std::vector<std::string>& retrieved,
                       Backend* backend,
                       const std::map<std::string, std::vector<std::string>>& templates) {
  CosPlanResult result;
  if (task.stage_template) {
    auto it = templates.find(*task.stage_template);
    if (it != templates.end()) {
      result.stages = it->second;
      result.from_template = true;
      return result;
    }
  }
  const std::vector<std::string> fallback{"requirements", "topology", "parameter synthesis",
                                          "netlist"};
  if (!backend) {
    result.stages = fallback;
    return result;
  }
  std::string prompt =
      "Design task: " + task.prompt +
      "\n\nDecompose this analog design problem into a short ordered list of design "
      "stages. The first stage gathers task-relevant requirements; include a parameter "
      "synthesis stage that proposes initial component values; the final stage produces "
      "the netlist. Reply with a numbered list only.";
  if (!retrieved.empty()) {
    prompt += "\n\nRelevant knowledge:\n";
    for (const std::string& r : retrieved) {
      prompt += "- " + r + "\n";
    }
  }
  result.prompt_sent = prompt;
  std::vector<ChatMessage> messages{{Role::System, kSystemPrompt}, {Role::User, prompt}};
  result.completion = backend->complete(messages);
  result.stages = parse_stage_list(result.completion->content);
  if (result.stages.empty()) result.stages = fallback;
  return result;
}

void JsonlTranscriptSink::record(const std::string& agent,
                                 const std::vector<ChatMessage>& sent,
                                 const Completion& reply) {
  json msgs = json::array();
  for (const ChatMessage& m : sent) {
    msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  }
  json rec{{"role", agent},
           {"messages", msgs},
           {"reply", reply.content},
           {"usage",
            {{"prompt_tokens", reply.usage.prompt_tokens},
             {"completion_tokens", reply.usage.completion_tokens}}},
           {"timestamp", iso8601_now()}};
  std::ofstream out(path_, std::ios::app);
  out << rec.dump() << "\n";
}

namespace {

/// Splits a drafting reply into markdown-heading sections; empty when the
/// reply has no headings.
std::vector<std::string> heading_sections(const std::string& reply) {
  std::vector<std::string> sections;
  std::istringstream in(reply);
  std::string line;
  std::string current;
  bool started = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') {
      if (started) sections.push_back(trim(current));
      current.clear();
      started = true;
      continue;
    }
    if (started) {
      current += line;
      current += '\n';
    }
  }
  if (started) sections.push_back(trim(current));
  return sections;
}

struct Runner {
  const TaskDef& task;
  Backend& backend;
  const Stores& stores;
  const RunOptions& opts;
  SessionState& st;
  TaskResult result;
  std::vector<ChatMessage> draft_history;
  std::vector<std::string> planned_stages;
  bool stages_recorded = false;
  std::string intake_prompt;

  bool over_budget() const {
    return task.budget && st.usage.total.total() > *task.budget;
  }

  /// Returns false when the run must stop (checkpoint abort).
  bool checkpoint(Phase phase) {
    st.phase = phase;
    if (!opts.checkpoint) return true;
    CheckpointResult cp = opts.checkpoint(phase, st);
    if (cp.action == CheckpointResult::Action::Abort) {
      result.status = TaskStatus::Failed;
      result.detail = "aborted at " + std::string(phase_name(phase)) + " checkpoint";
      return false;
    }
    if (cp.action == CheckpointResult::Action::Edit && !cp.replacement_draft.empty() &&
        !st.drafts.empty()) {
      st.drafts.back() = cp.replacement_draft;
    }
    return true;
  }

  Completion call(const std::string& role, const std::vector<ChatMessage>& messages) {
    Completion c = backend.complete(messages);
    st.usage.add(role, c.usage);
    auto& log = st.transcript[role];
    log.insert(log.end(), messages.begin(), messages.end());
    log.push_back({Role::Assistant, c.content});
    if (opts.transcript) opts.transcript->record(role, messages, c);
    return c;
  }

  void record_stages(const std::string& prompt, const std::string& reply) {
    if (stages_recorded) return;
    stages_recorded = true;
    std::vector<std::string> sections = heading_sections(reply);
    for (size_t i = 0; i < planned_stages.size(); ++i) {
      StageRecord rec;
      rec.stage_name = planned_stages[i];
      rec.prompt_sent = prompt;
      rec.index = static_cast<int>(i);
      if (i < sections.size()) {
        rec.output = sections[i];
      } else if (i + 1 == planned_stages.size() && sections.empty()) {
        rec.output = reply;  // unstructured reply is the netlist stage's output
      }
      st.stages.push_back(std::move(rec));
    }
  }

  std::string compose_intake() {
    std::string prompt = "Design task: " + task.prompt + "\n";
    std::string knowledge;
    if (stores.darag && stores.darag->size() > 0) {
      for (const auto& [chunk, score] : stores.darag->retrieve(task.prompt, opts.retrieval_k)) {
        knowledge += "- " + chunk->text + "\n";
      }
    }
    if (stores.ctt && stores.ctt->size() > 0) {
      for (const auto& [entry, score] : stores.ctt->query(task.prompt, opts.retrieval_k)) {
        knowledge += "- prior design '" + entry->circuit_name + "':\n" + entry->netlist + "\n";
      }
    }
    if (!knowledge.empty()) {
      prompt += "\nRelevant knowledge:\n" + knowledge;
    }
    return prompt;
  }

  std::string drafting_prompt() const {
    std::string prompt = intake_prompt;
    prompt += "\nWork through these design stages in order, then output the final "
              "complete SPICE netlist:\n";
    for (size_t i = 0; i < planned_stages.size(); ++i) {
      prompt += std::to_string(i + 1) + ". " + planned_stages[i] + "\n";
    }
    return prompt;
  }

  std::string repair_prompt(const std::vector<std::string>& failures) const {
    std::string prompt = "The previous netlist draft failed validation.\n\nFailures:\n";
    for (const std::string& f : failures) prompt += "- " + f + "\n";
    prompt += "\nDesign stages:\n";
    for (size_t i = 0; i < planned_stages.size(); ++i) {
      prompt += std::to_string(i + 1) + ". " + planned_stages[i] + "\n";
    }
    prompt += "\nPrevious draft:\n" + (st.drafts.empty() ? "" : st.drafts.back()) +
              "\n\nReply with the complete corrected SPICE netlist.";
    return prompt;
  }

  /// Loop guard after a failure; true means terminate.
  bool guard(const std::string& first_failure) {
    std::string code = "FAIL";
    const size_t colon = first_failure.find(':');
    if (colon != std::string::npos) code = first_failure.substr(0, colon);
    st.error_signatures.push_back(error_signature(code, first_failure));
    if (loop_guard(st.error_signatures, opts.loop_threshold) == GuardDecision::Terminate) {
      result.status = TaskStatus::LoopDetected;
      result.detail = "recurring error detected: " + first_failure;
      return true;
    }
    return false;
  }

  bool budget_stop() {
    if (over_budget()) {
      result.status = TaskStatus::BudgetExceeded;
      result.detail = "token budget " + std::to_string(*task.budget) + " exceeded";
      return true;
    }
    return false;
  }

  void succeed(const std::string& canonical) {
    result.status = TaskStatus::Success;
    result.final_netlist = canonical;
    if (stores.ctt) {
      CttEntry entry;
      entry.circuit_name = task.title.empty() ? task.task_id : task.title;
      entry.specifications = task.spec;
      entry.reasoning_stages = st.stages;
      entry.netlist = canonical;
      entry.interaction_history = task.task_id + ".transcript.jsonl";
      result.ctt_entry_id = stores.ctt->put_entry(std::move(entry));
    }
    st.phase = Phase::Done;
  }

  TaskResult run() {
    if (!checkpoint(Phase::Intake)) return finish();
    intake_prompt = compose_intake();

    if (!checkpoint(Phase::CosPlanning)) return finish();
    std::map<std::string, std::vector<std::string>> templates = builtin_stage_templates();
    for (const auto& [name, stages] : opts.stage_templates) templates[name] = stages;
    std::vector<std::string> retrieved;
    if (stores.darag && stores.darag->size() > 0) {
      for (const auto& [chunk, score] : stores.darag->retrieve(task.prompt, opts.retrieval_k)) {
        retrieved.push_back(chunk->text);
      }
    }
    try {
      CosPlanResult plan = cos_plan(task, retrieved, &backend, templates);
      if (plan.completion) {
        st.usage.add(kPlanRole, plan.completion->usage);
        auto& log = st.transcript[kPlanRole];
        log.push_back({Role::User, plan.prompt_sent});
        log.push_back({Role::Assistant, plan.completion->content});
        if (opts.transcript) {
          opts.transcript->record(kPlanRole,
                                  {{Role::System, kSystemPrompt}, {Role::User, plan.prompt_sent}},
                                  *plan.completion);
        }
      }
      planned_stages = plan.stages;
    } catch (const GatewayError& e) {
      result.status = TaskStatus::Failed;
      result.detail = std::string("backend error during planning: ") + e.what();
      return finish();
    }
    if (budget_stop()) return finish();

    draft_history.push_back({Role::System, kSystemPrompt});
    draft_history.push_back({Role::User, drafting_prompt()});

    for (int attempt = 1; attempt <= task.max_iterations; ++attempt) {
      st.attempt = attempt;
      if (!checkpoint(Phase::Drafting)) return finish();

      std::vector<ChatMessage> messages = truncate_history(draft_history);
      Completion completion;
      try {
        completion = call(kDraftRole, messages);
      } catch (const GatewayError& e) {
        result.status = TaskStatus::Failed;
        result.detail = std::string("backend error during drafting: ") + e.what();
        return finish();
      }
      ++result.iterations;
      draft_history.push_back({Role::Assistant, completion.content});
      std::string draft = extract_netlist(completion.content);
      st.drafts.push_back(draft);
      record_stages(messages.back().content, completion.content);
      if (budget_stop()) return finish();

      if (!checkpoint(Phase::ExecutorCheck)) return finish();
      draft = st.drafts.back();  // checkpoint may have edited it
      ValidationReport validation = executor_validate(draft, opts.solver, opts.erc);
      if (!validation.ok) {
        if (guard(validation.message)) return finish();
        draft_history.push_back({Role::User, repair_prompt({validation.message})});
        continue;
      }

      if (!checkpoint(Phase::Testbench)) return finish();
      ParseResult parsed = parse_netlist(draft);
      TestbenchReport bench = testbench_run(parsed.netlist, task.spec, opts.solver, opts.erc);
      result.outcomes = bench.outcomes;
      if (bench.passed) {
        succeed(emit(parsed.netlist));
        return finish();
      }
      const std::string first = bench.failure_messages.empty() ? "FAIL: unspecified"
                                                               : bench.failure_messages.front();
      if (guard(first)) return finish();
      if (!checkpoint(Phase::Repair)) return finish();
      draft_history.push_back({Role::User, repair_prompt(bench.failure_messages)});
    }

    result.status = TaskStatus::Failed;
    result.detail = "no passing netlist within " + std::to_string(task.max_iterations) +
                    " iterations";
    return finish();
  }

  TaskResult finish() {
    if (result.status != TaskStatus::Success) {
      st.phase = Phase::Failed;
    }
    result.usage = st.usage;
    return result;
  }
};

}  // namespace

TaskResult run_task(const TaskDef& task, Backend& backend, const Stores& stores,
                    const RunOptions& opts, SessionState* session_out) {
  SessionState local;
  SessionState& st = session_out ? *session_out : local;
  st = SessionState{};
  st.task = task;
  Runner runner{task, backend, stores, opts, st};
  return runner.run();
}

}  // namespace menter
