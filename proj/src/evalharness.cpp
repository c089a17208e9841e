#include "menter/evalharness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <regex>
#include <thread>

#include "json.hpp"
#include "menter/util.hpp"

namespace menter {

namespace {

/// C(a, b) as an exact 64-bit integer; requires a <= 62 so the running
/// product never overflows.
unsigned long long binom(long long a, long long b) {
  if (b < 0 || b > a) return 0;
  if (b > a - b) b = a - b;
  unsigned long long c = 1;
  for (long long i = 1; i <= b; ++i) {
    c = c * static_cast<unsigned long long>(a - b + i) / static_cast<unsigned long long>(i);
  }
  return c;
}

}  // namespace

double pass_at_k(const EvalStats& stats) {
  const long long n = stats.n, c = stats.c, k = stats.k;
  if (c < 0 || c > n || k < 1 || k > n) {
    throw DomainError("pass@k requires 0 <= c <= n and 1 <= k <= n (n=" + std::to_string(n) +
                      " c=" + std::to_string(c) + " k=" + std::to_string(k) + ")");
  }
  if (c == 0) return 0.0;
  if (k > n - c) return 1.0;  // C(n-c, k) = 0
  if (n <= 62) {
    const long double miss =
        static_cast<long double>(binom(n - c, k)) / static_cast<long double>(binom(n, k));
    return static_cast<double>(1.0L - miss);
  }
  long double miss = 1.0L;
  for (long long i = 0; i < k; ++i) {
    miss *= static_cast<long double>(n - c - i) / static_cast<long double>(n - i);
  }
  return static_cast<double>(1.0L - miss);
}

std::optional<double> SuiteResult::avg_pass1() const {
  double sum = 0;
  int count = 0;
  for (const TaskRow& r : rows) {
    if (r.pass1) {
      sum += *r.pass1;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

std::optional<double> SuiteResult::avg_pass5() const {
  double sum = 0;
  int count = 0;
  for (const TaskRow& r : rows) {
    if (r.pass5) {
      sum += *r.pass5;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

SuiteResult run_suite(const std::vector<TaskDef>& tasks, const BackendFactory& factory,
                      const Stores& stores, const SuiteOptions& opts) {
  SuiteResult result;
  result.rows.resize(tasks.size());

  auto run_one_task = [&](size_t ti) {
    const TaskDef& task = tasks[ti];
    TaskRow row;
    row.task_id = task.task_id;
    row.n = opts.attempts;
    for (int attempt = 0; attempt < opts.attempts; ++attempt) {
      std::unique_ptr<TranscriptSink> sink;
      RunOptions run = opts.run;
      if (!opts.transcript_dir.empty()) {
        sink = std::make_unique<JsonlTranscriptSink>(opts.transcript_dir + "/" + task.task_id +
                                                     ".attempt" + std::to_string(attempt) +
                                                     ".jsonl");
        run.transcript = sink.get();
      }
      TaskStatus status = TaskStatus::Failed;
      try {
        std::unique_ptr<Backend> backend = factory(task, attempt);
        TaskResult tr = run_task(task, *backend, stores, run);
        status = tr.status;
        row.usage += tr.usage.total;
      } catch (const std::exception&) {
        status = TaskStatus::Failed;  // backend outage: failed attempt, not fatal
      }
      row.statuses.push_back(status);
      if (status == TaskStatus::Success) ++row.c;
    }
    if (row.n >= 1) row.pass1 = pass_at_k({row.n, row.c, 1});
    if (row.n >= 5) row.pass5 = pass_at_k({row.n, row.c, 5});
    result.rows[ti] = std::move(row);
  };

  const int workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(tasks.size())));
  if (workers == 1) {
    for (size_t i = 0; i < tasks.size(); ++i) run_one_task(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const size_t i = next.fetch_add(1);
          if (i >= tasks.size()) break;
          run_one_task(i);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }
  return result;
}

std::vector<McqItem> mcq_from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.is_array()) throw std::runtime_error("MCQ dataset must be a JSON array");
  std::vector<McqItem> items;
  for (const nlohmann::json& entry : j) {
    McqItem item;
    item.question = entry.at("question").get<std::string>();
    const nlohmann::json& choices = entry.at("choices");
    if (!choices.is_array() || choices.size() != 4) {
      throw std::runtime_error("MCQ item must have exactly 4 choices");
    }
    for (size_t i = 0; i < 4; ++i) item.choices[i] = choices[i].get<std::string>();
    const std::string answer = entry.at("answer").get<std::string>();
    if (answer.size() != 1 || answer[0] < 'A' || answer[0] > 'D') {
      throw std::runtime_error("MCQ answer must be one of A-D");
    }
    item.answer = answer[0];
    items.push_back(std::move(item));
  }
  return items;
}

char parse_mcq_reply(const std::string& reply) {
  std::smatch m;
  static const std::regex strict(R"(ANSWER:\s*\(?([A-Da-d])\b)");
  if (std::regex_search(reply, m, strict)) return std::toupper(m[1].str()[0]);
  // Lenient fallbacks for the formatting variants models actually emit.
  static const std::regex fallbacks[] = {
      std::regex(R"(\*\*\s*Answer\s*\*\*\s*[:\-]?\s*\(?([A-Da-d])\b)", std::regex::icase),
      std::regex(R"(#+\s*Answer\s*[:\-]?\s*\(?([A-Da-d])\b)", std::regex::icase),
      std::regex(R"(answer\s+is\s*[:\-]?\s*\(?([A-Da-d])\b)", std::regex::icase),
      std::regex(R"(answer\s*[:\-]\s*\(?([A-Da-d])\b)", std::regex::icase),
      std::regex(R"(^\s*\(?([A-Da-d])\)?\s*$)"),
  };
  for (const std::regex& re : fallbacks) {
    if (std::regex_search(reply, m, re)) return std::toupper(m[1].str()[0]);
  }
  return 0;
}

McqResult run_mcq(const std::vector<McqItem>& items, Backend& backend) {
  if (items.empty()) throw std::runtime_error("MCQ item list is empty");
  McqResult result;
  int correct = 0;
  for (size_t i = 0; i < items.size(); ++i) {
    const McqItem& item = items[i];
    std::string prompt = item.question + "\n";
    const char* labels[] = {"A", "B", "C", "D"};
    for (size_t ci = 0; ci < 4; ++ci) {
      prompt += std::string("(") + labels[ci] + ") " + item.choices[ci] + "\n";
    }
    prompt += "\nReply with exactly one line in the form \"ANSWER: <letter>\".";
    McqRecord rec;
    rec.index = static_cast<int>(i);
    rec.expected = item.answer;
    try {
      Completion c = backend.complete(
          {{Role::System, "You answer analog IC multiple-choice questions."},
           {Role::User, prompt}});
      result.usage += c.usage;
      rec.parsed = parse_mcq_reply(c.content);
      if (rec.parsed == 0) {
        rec.reason = "format";
      } else if (rec.parsed == item.answer) {
        rec.correct = true;
      }
    } catch (const GatewayError& e) {
      rec.reason = std::string("backend: ") + e.what();
    }
    if (rec.correct) ++correct;
    result.records.push_back(std::move(rec));
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
  return result;
}

namespace {

std::string pct(const std::optional<double>& fraction) {
  if (!fraction) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", *fraction * 100.0);
  return buf;
}

}  // namespace

std::string render_report(const SuiteResult& result, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::Csv) {
    out += "task,n,c,pass@1,pass@5,prompt_tokens,completion_tokens\n";
    for (const TaskRow& r : result.rows) {
      out += r.task_id + "," + std::to_string(r.n) + "," + std::to_string(r.c) + "," +
             pct(r.pass1) + "," + pct(r.pass5) + "," + std::to_string(r.usage.prompt_tokens) +
             "," + std::to_string(r.usage.completion_tokens) + "\n";
    }
    out += "Avg,,," + pct(result.avg_pass1()) + "," + pct(result.avg_pass5()) + ",,\n";
    return out;
  }

  out += "# Benchmark Report\n\n";
  out += "| Task | n | c | Pass@1 | Pass@5 | Prompt | Completion |\n";
  out += "|------|---|---|--------|--------|--------|------------|\n";
  for (const TaskRow& r : result.rows) {
    out += "| " + r.task_id + " | " + std::to_string(r.n) + " | " + std::to_string(r.c) +
           " | " + pct(r.pass1) + " | " + pct(r.pass5) + " | " +
           std::to_string(r.usage.prompt_tokens) + " | " +
           std::to_string(r.usage.completion_tokens) + " |\n";
  }
  out += "| Avg |  |  | " + pct(result.avg_pass1()) + " | " + pct(result.avg_pass5()) +
         " |  |  |\n";

  out += "\n## Token Comparison\n\n";
  out += "| Task | Prompt | Completion |\n";
  out += "|------|--------|------------|\n";
  for (const TaskRow& r : result.rows) {
    out += "| " + r.task_id + " | " + std::to_string(r.usage.prompt_tokens) + " | " +
           std::to_string(r.usage.completion_tokens) + " |\n";
  }
  return out;
}

}  // namespace menter
