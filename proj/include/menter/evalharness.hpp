#pragma once

// pass@k evaluation, the multi-attempt suite runner, the multiple-choice
// knowledge runner, and report rendering (markdown/CSV tables with per-task
// pass rates and token columns).

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "menter/orchestrator.hpp"

namespace menter {

struct EvalStats {
  long long n = 0;  // total solutions generated
  long long c = 0;  // correct solutions
  long long k = 1;  // success threshold
};

class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

/// 1 - C(n-c, k)/C(n, k), factorial-free: exact 64-bit binomials for n <= 62,
/// a long-double ratio product beyond. Throws DomainError unless
/// 0 <= c <= n and 1 <= k <= n.
double pass_at_k(const EvalStats& stats);

struct TaskRow {
  std::string task_id;
  int n = 0;
  int c = 0;
  std::optional<double> pass1;  // fractions in [0,1]; blank when k > n
  std::optional<double> pass5;
  TokenUsage usage;
  std::vector<TaskStatus> statuses;
};

struct SuiteResult {
  std::vector<TaskRow> rows;

  std::optional<double> avg_pass1() const;
  std::optional<double> avg_pass5() const;
};

/// Fresh backend per attempt (mock scripts are consumed per run).
using BackendFactory =
    std::function<std::unique_ptr<Backend>(const TaskDef& task, int attempt)>;

struct SuiteOptions {
  int attempts = 5;
  int workers = 1;  // task-level parallelism
  RunOptions run;
  std::string transcript_dir;  // per-attempt JSONL transcripts when nonempty
};

SuiteResult run_suite(const std::vector<TaskDef>& tasks, const BackendFactory& factory,
                      const Stores& stores, const SuiteOptions& opts = {});

struct McqItem {
  std::string question;
  std::array<std::string, 4> choices;  // labeled A-D
  char answer = 'A';
};

std::vector<McqItem> mcq_from_json_text(const std::string& text);

/// First strict "ANSWER: X" tag, then lenient fallbacks ("**Answer**: X",
/// "### Answer X", "the answer is X", bare letter). '\0' when unparseable.
char parse_mcq_reply(const std::string& reply);

struct McqRecord {
  int index = 0;
  char expected = 'A';
  char parsed = 0;  // 0 = unparseable
  bool correct = false;
  std::string reason;  // "format" when unparseable
};

struct McqResult {
  double accuracy = 0.0;
  std::vector<McqRecord> records;
  TokenUsage usage;
};

McqResult run_mcq(const std::vector<McqItem>& items, Backend& backend);

enum class ReportFormat { Markdown, Csv };

/// Per-task pass@1/pass@5 percentages (one decimal), token columns, an Avg
/// row, and a prompt/completion token table.
std::string render_report(const SuiteResult& result, ReportFormat format);

}  // namespace menter
