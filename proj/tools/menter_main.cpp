// menter: parse/check/simulate analog netlists, run the multi-agent design
// workflow, benchmark it, and manage the knowledge stores.
//
// Exit codes: 0 success/pass, 1 check or task failure, 2 usage error.

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "menter/ctt.hpp"
#include "menter/darag.hpp"
#include "menter/dcsim.hpp"
#include "menter/erc.hpp"
#include "menter/evalharness.hpp"
#include "menter/gateway.hpp"
#include "menter/netlist.hpp"
#include "menter/orchestrator.hpp"
#include "menter/speccheck.hpp"
#include "menter/util.hpp"

#include <filesystem>

namespace {

using namespace menter;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct CliConfig {
  BackendConfig backend;
  std::string ctt_path = "ctt.jsonl";
  std::string darag_index;
  ErcOptions erc;
  SolverOptions solver;
  bool interactive = false;
  std::map<std::string, std::vector<std::string>> stage_templates;
};

/// ${VAR} in string values expands from the environment (secrets stay out of
/// config files).
std::string expand_env(const std::string& value) {
  std::string out;
  size_t pos = 0;
  while (pos < value.size()) {
    const size_t dollar = value.find("${", pos);
    if (dollar == std::string::npos) {
      out += value.substr(pos);
      break;
    }
    const size_t close = value.find('}', dollar + 2);
    if (close == std::string::npos) {
      out += value.substr(pos);
      break;
    }
    out += value.substr(pos, dollar - pos);
    const std::string name = value.substr(dollar + 2, close - dollar - 2);
    if (const char* v = std::getenv(name.c_str())) out += v;
    pos = close + 1;
  }
  return out;
}

BackendConfig backend_from_json(const json& j) {
  BackendConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") {
      const std::string kind = value.get<std::string>();
      if (kind == "http") {
        cfg.kind = BackendKind::Http;
      } else if (kind == "mock") {
        cfg.kind = BackendKind::Mock;
      } else {
        throw std::runtime_error("config: backend.kind must be \"http\" or \"mock\"");
      }
    } else if (key == "endpoint") {
      cfg.endpoint = expand_env(value.get<std::string>());
    } else if (key == "model") {
      cfg.model = value.get<std::string>();
    } else if (key == "temperature") {
      cfg.temperature = value.get<double>();
    } else if (key == "timeout_s") {
      cfg.timeout_s = value.get<double>();
    } else if (key == "max_retries") {
      cfg.max_retries = value.get<int>();
    } else if (key == "api_key_env") {
      cfg.api_key_env = value.get<std::string>();
    } else if (key == "script") {
      cfg.mock_script = expand_env(value.get<std::string>());
    } else if (key == "retry_base_ms") {
      cfg.retry_base_ms = value.get<int>();
    } else {
      throw std::runtime_error("config: unknown backend key '" + key + "'");
    }
  }
  return cfg;
}

CliConfig load_config(const std::string& path) {
  CliConfig cfg;
  auto text = read_file(path);
  if (!text) throw std::runtime_error("cannot read config file '" + path + "'");
  json j = json::parse(*text);
  for (const auto& [key, value] : j.items()) {
    if (key == "backend") {
      cfg.backend = backend_from_json(value);
    } else if (key == "ctt") {
      cfg.ctt_path = expand_env(value.get<std::string>());
    } else if (key == "darag_index") {
      cfg.darag_index = expand_env(value.get<std::string>());
    } else if (key == "erc") {
      for (const auto& [ek, ev] : value.items()) {
        if (ek == "promote_warnings") {
          cfg.erc.promote_warnings = ev.get<bool>();
        } else {
          throw std::runtime_error("config: unknown erc key '" + ek + "'");
        }
      }
    } else if (key == "solver") {
      for (const auto& [sk, sv] : value.items()) {
        if (sk == "abstol") cfg.solver.abstol = sv.get<double>();
        else if (sk == "reltol") cfg.solver.reltol = sv.get<double>();
        else if (sk == "max_iter") cfg.solver.max_iter = sv.get<int>();
        else if (sk == "gmin") cfg.solver.gmin = sv.get<double>();
        else if (sk == "damping") cfg.solver.damping = sv.get<double>();
        else throw std::runtime_error("config: unknown solver key '" + sk + "'");
      }
    } else if (key == "interactive") {
      cfg.interactive = value.get<bool>();
    } else if (key == "stage_templates") {
      for (const auto& [name, stages] : value.items()) {
        cfg.stage_templates[name] = stages.get<std::vector<std::string>>();
      }
    } else {
      throw std::runtime_error("config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

std::string slurp_or_die(const std::string& path) {
  auto text = read_file(path);
  if (!text) {
    std::cerr << "error: file not found: " << path << "\n";
    std::exit(kExitUsage);
  }
  return *text;
}

/// Plain-prompt checkpoints on stderr; non-TTY sessions auto-approve.
CheckpointResult interactive_checkpoint(Phase phase, SessionState& st) {
  if (!isatty(fileno(stdin)) || !isatty(fileno(stderr))) return {};
  std::cerr << "[checkpoint] " << phase_name(phase) << " (attempt " << st.attempt
            << "): [a]pprove / [e]dit draft from file / [q]uit > ";
  std::string line;
  if (!std::getline(std::cin, line)) return {};
  CheckpointResult r;
  if (!line.empty() && (line[0] == 'q' || line[0] == 'Q')) {
    r.action = CheckpointResult::Action::Abort;
  } else if (!line.empty() && (line[0] == 'e' || line[0] == 'E')) {
    std::cerr << "path to replacement draft > ";
    std::string path;
    if (std::getline(std::cin, path)) {
      if (auto text = read_file(trim(path))) {
        r.action = CheckpointResult::Action::Edit;
        r.replacement_draft = *text;
      } else {
        std::cerr << "cannot read '" << path << "', continuing unchanged\n";
      }
    }
  }
  return r;
}

int cmd_parse(const std::string& file, bool as_json) {
  ParseResult parsed = parse_netlist(slurp_or_die(file));
  std::cerr << diagnostics_to_json(parsed.diagnostics) << "\n";
  if (as_json) {
    json j{{"syntax_ok", parsed.syntax_ok()},
           {"title", parsed.netlist.title},
           {"elements", parsed.netlist.elements.size()},
           {"models", parsed.netlist.models.size()},
           {"subckts", parsed.netlist.subckts.size()},
           {"canonical", emit(parsed.netlist)}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << emit(parsed.netlist);
  }
  return parsed.syntax_ok() ? kExitOk : kExitFail;
}

int cmd_check(const std::string& file, bool as_json, const CliConfig& cfg) {
  ParseResult parsed = parse_netlist(slurp_or_die(file));
  if (!parsed.syntax_ok()) {
    std::cerr << diagnostics_to_json(parsed.diagnostics) << "\n";
    return kExitFail;
  }
  FlatCircuit flat;
  try {
    flat = flatten(parsed.netlist);
  } catch (const FlattenError& e) {
    std::cerr << "flatten failed: " << e.what() << "\n";
    return kExitFail;
  }
  ErcReport report = run_erc(flat, cfg.erc);
  if (as_json) {
    json arr = json::array();
    for (const RuleViolation& v : report.violations) {
      arr.push_back({{"rule", v.rule_id},
                     {"severity", v.severity == Severity::Error ? "error" : "warning"},
                     {"subject", v.subject},
                     {"message", v.message}});
    }
    std::cout << json{{"passed", report.passed}, {"violations", arr}}.dump(2) << "\n";
  } else {
    std::cout << report.to_json_lines();
    std::cout << (report.passed ? "passed" : "failed") << "\n";
  }
  return report.passed ? kExitOk : kExitFail;
}

int cmd_sim(const std::string& file, bool op, const std::vector<std::string>& sweep,
            const std::string& out_path, bool as_json, const CliConfig& cfg) {
  ParseResult parsed = parse_netlist(slurp_or_die(file));
  if (!parsed.syntax_ok()) {
    std::cerr << parsed.first_error() << "\n";
    return kExitFail;
  }
  FlatCircuit flat;
  try {
    flat = flatten(parsed.netlist);
  } catch (const FlattenError& e) {
    std::cerr << "flatten failed: " << e.what() << "\n";
    return kExitFail;
  }
  std::string output;
  bool ok = false;
  if (!sweep.empty()) {
    try {
      SweepResult result = dc_sweep(flat, sweep[0], std::stod(sweep[1]), std::stod(sweep[2]),
                                    std::stod(sweep[3]), cfg.solver);
      ok = result.failures.empty();
      output = as_json ? sweep_to_json(result, flat) : sweep_to_csv(result, flat);
    } catch (const SweepError& e) {
      std::cerr << "sweep error: " << e.what() << "\n";
      return kExitUsage;
    }
  } else {
    DCSolution sol = solve_op(flat, cfg.solver);
    ok = sol.converged;
    if (as_json) {
      output = solution_to_json(sol);
    } else {
      for (const auto& [node, v] : sol.node_voltages) {
        output += node + " = " + format_magnitude(v) + "\n";
      }
      for (const auto& [src, i] : sol.source_currents) {
        output += "I(" + src + ") = " + format_magnitude(i) + "\n";
      }
      output += std::string("converged = ") + (sol.converged ? "true" : "false") +
                " iterations = " + std::to_string(sol.iterations) + " strategy = " +
                strategy_name(sol.strategy) + "\n";
    }
  }
  (void)op;
  if (!out_path.empty()) {
    if (!write_file(out_path, output)) {
      std::cerr << "cannot write " << out_path << "\n";
      return kExitFail;
    }
  } else {
    std::cout << output;
  }
  return ok ? kExitOk : kExitFail;
}

int cmd_run(const std::string& task_file, const CliConfig& cfg, bool interactive,
            const std::string& transcript_path, bool as_json) {
  TaskDef task = task_from_json_text(slurp_or_die(task_file));
  std::unique_ptr<Backend> backend;
  try {
    backend = make_backend(cfg.backend);
  } catch (const GatewayError& e) {
    std::cerr << "backend config error: " << e.what() << "\n";
    return kExitUsage;
  }
  CttStore ctt = CttStore::open(cfg.ctt_path);
  CorpusIndex darag;
  if (!cfg.darag_index.empty()) {
    darag = CorpusIndex::from_json_text(slurp_or_die(cfg.darag_index));
  }
  RunOptions run;
  run.solver = cfg.solver;
  run.erc = cfg.erc;
  run.stage_templates = cfg.stage_templates;
  if (interactive || cfg.interactive) run.checkpoint = interactive_checkpoint;
  std::unique_ptr<JsonlTranscriptSink> sink;
  if (!transcript_path.empty()) {
    sink = std::make_unique<JsonlTranscriptSink>(transcript_path);
    run.transcript = sink.get();
  }
  Stores stores{&ctt, cfg.darag_index.empty() ? nullptr : &darag};
  SessionState session;
  TaskResult result = run_task(task, *backend, stores, run, &session);
  if (as_json) {
    json j{{"status", status_name(result.status)},
           {"iterations", result.iterations},
           {"detail", result.detail},
           {"usage",
            {{"prompt_tokens", result.usage.total.prompt_tokens},
             {"completion_tokens", result.usage.total.completion_tokens}}},
           {"ctt_entry_id", result.ctt_entry_id},
           {"final_netlist", result.final_netlist},
           {"outcomes", json::parse(outcomes_to_json(result.outcomes))}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "status: " << status_name(result.status) << " after " << result.iterations
              << " iteration(s)\n";
    if (!result.detail.empty()) std::cout << "detail: " << result.detail << "\n";
    std::cout << outcomes_to_table(result.outcomes);
    if (result.status == TaskStatus::Success) {
      std::cout << "ctt entry: " << result.ctt_entry_id << "\n" << result.final_netlist;
    }
  }
  return result.status == TaskStatus::Success ? kExitOk : kExitFail;
}

int cmd_bench(const std::string& suite_file, int attempts, int workers,
              const std::string& report_path, const CliConfig& cfg, bool as_json,
              const std::string& transcript_dir) {
  json suite = json::parse(slurp_or_die(suite_file));
  std::vector<TaskDef> tasks;
  const std::filesystem::path base = std::filesystem::path(suite_file).parent_path();
  for (const json& entry : suite.at("tasks")) {
    std::filesystem::path p = entry.get<std::string>();
    if (p.is_relative()) p = base / p;
    tasks.push_back(task_from_json_text(slurp_or_die(p.string())));
  }
  CttStore ctt = CttStore::open(cfg.ctt_path);
  CorpusIndex darag;
  if (!cfg.darag_index.empty()) {
    darag = CorpusIndex::from_json_text(slurp_or_die(cfg.darag_index));
  }
  Stores stores{&ctt, cfg.darag_index.empty() ? nullptr : &darag};
  SuiteOptions opts;
  opts.attempts = attempts;
  opts.workers = workers;
  opts.run.solver = cfg.solver;
  opts.run.erc = cfg.erc;
  opts.run.stage_templates = cfg.stage_templates;
  opts.transcript_dir = transcript_dir;
  if (!transcript_dir.empty()) std::filesystem::create_directories(transcript_dir);
  BackendConfig backend_cfg = cfg.backend;
  SuiteResult result = run_suite(
      tasks, [&](const TaskDef&, int) { return make_backend(backend_cfg); }, stores, opts);
  const std::string report = render_report(
      result, as_json || report_path.ends_with(".csv") ? ReportFormat::Csv : ReportFormat::Markdown);
  if (!report_path.empty()) {
    if (!write_file(report_path, report)) {
      std::cerr << "cannot write " << report_path << "\n";
      return kExitFail;
    }
  }
  std::cout << render_report(result, as_json ? ReportFormat::Csv : ReportFormat::Markdown);
  bool all_solved = true;
  for (const TaskRow& r : result.rows) {
    if (r.c == 0) all_solved = false;
  }
  return all_solved ? kExitOk : kExitFail;
}

int cmd_ingest(const std::string& dir, const std::string& out_path, bool describe,
               const CliConfig& cfg) {
  CorpusIndex index;
  std::unique_ptr<Backend> hook;
  if (describe) {
    hook = make_backend(cfg.backend);
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".md") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<std::string> warnings;
  size_t n_chunks = 0;
  for (const auto& path : files) {
    auto text = read_file(path.string());
    if (!text) continue;
    const std::string doc_id =
        std::filesystem::relative(path, dir).generic_string();
    auto chunks = ingest_document(doc_id, *text, hook.get(), &warnings);
    n_chunks += chunks.size();
    index.add_chunks(chunks);
  }
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
  if (!write_file(out_path, index.to_json_text())) {
    std::cerr << "cannot write " << out_path << "\n";
    return kExitFail;
  }
  std::cout << "indexed " << files.size() << " documents, " << n_chunks << " chunks -> "
            << out_path << "\n";
  return kExitOk;
}

int cmd_mcq(const std::string& data_file, const CliConfig& cfg, bool as_json) {
  std::vector<McqItem> items = mcq_from_json_text(slurp_or_die(data_file));
  std::unique_ptr<Backend> backend = make_backend(cfg.backend);
  McqResult result = run_mcq(items, *backend);
  if (as_json) {
    json records = json::array();
    for (const McqRecord& r : result.records) {
      records.push_back({{"index", r.index},
                         {"expected", std::string(1, r.expected)},
                         {"parsed", r.parsed ? std::string(1, r.parsed) : ""},
                         {"correct", r.correct},
                         {"reason", r.reason}});
    }
    std::cout << json{{"accuracy", result.accuracy}, {"records", records}}.dump(2) << "\n";
  } else {
    int correct = 0;
    for (const McqRecord& r : result.records) correct += r.correct ? 1 : 0;
    std::printf("accuracy: %.1f%% (%d/%zu)\n", result.accuracy * 100.0, correct,
                result.records.size());
    for (const McqRecord& r : result.records) {
      if (!r.correct) {
        std::printf("item %d: expected %c got %c%s\n", r.index, r.expected,
                    r.parsed ? r.parsed : '?', r.reason.empty() ? "" : (" (" + r.reason + ")").c_str());
      }
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"analog netlist design workflow"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file");

  std::string file, out_path, task_file, suite_file, report_path, dir, data_file, query_text;
  std::string ctt_flag, transcript;
  std::vector<std::string> sweep;
  bool as_json = false, op = false, interactive = false, promote = false, describe = false;
  int attempts = 5, workers = 1, topk = 5;

  auto* parse_cmd = app.add_subcommand("parse", "parse a netlist and emit the canonical deck");
  parse_cmd->add_option("file", file)->required();
  parse_cmd->add_flag("--json", as_json);

  auto* check_cmd = app.add_subcommand("check", "electrical rule check");
  check_cmd->add_option("file", file)->required();
  check_cmd->add_flag("--json", as_json);
  check_cmd->add_flag("--promote-warnings", promote);

  auto* sim_cmd = app.add_subcommand("sim", "DC operating point or sweep");
  sim_cmd->add_option("file", file)->required();
  sim_cmd->add_flag("--op", op, "operating point (default)");
  sim_cmd->add_option("--sweep", sweep, "SRC START STOP STEP")->expected(4);
  sim_cmd->add_option("--out", out_path, "write result to file");
  sim_cmd->add_flag("--json", as_json);

  auto* run_cmd = app.add_subcommand("run", "run one design task");
  run_cmd->add_option("--task", task_file)->required();
  run_cmd->add_flag("--interactive", interactive, "pause at phase checkpoints");
  run_cmd->add_option("--transcript", transcript, "JSONL transcript path");
  run_cmd->add_flag("--json", as_json);

  auto* bench_cmd = app.add_subcommand("bench", "run a task suite with pass@k reporting");
  bench_cmd->add_option("--suite", suite_file)->required();
  bench_cmd->add_option("--attempts", attempts);
  bench_cmd->add_option("--workers", workers);
  bench_cmd->add_option("--report", report_path);
  bench_cmd->add_option("--transcripts", transcript);
  bench_cmd->add_flag("--json", as_json);

  auto* ctt_cmd = app.add_subcommand("ctt", "knowledge store");
  ctt_cmd->add_option("--ctt", ctt_flag, "store path");
  auto* ctt_add = ctt_cmd->add_subcommand("add", "add an entry from a JSON file");
  ctt_add->add_option("file", file)->required();
  auto* ctt_query = ctt_cmd->add_subcommand("query", "keyword query");
  ctt_query->add_option("text", query_text)->required();
  ctt_query->add_option("-k", topk);
  ctt_query->add_flag("--json", as_json);
  auto* ctt_export = ctt_cmd->add_subcommand("export", "dump the store as JSONL");
  ctt_cmd->require_subcommand(1);

  auto* ingest_cmd = app.add_subcommand("ingest", "index a markdown corpus");
  ingest_cmd->add_option("dir", dir)->required();
  ingest_cmd->add_option("--out", out_path)->required();
  ingest_cmd->add_flag("--describe-diagrams", describe,
                       "describe figures via the configured backend");

  auto* mcq_cmd = app.add_subcommand("mcq", "multiple-choice knowledge benchmark");
  mcq_cmd->add_option("--data", data_file)->required();
  mcq_cmd->add_flag("--json", as_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    CliConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (promote) cfg.erc.promote_warnings = true;
    if (!ctt_flag.empty()) cfg.ctt_path = ctt_flag;

    if (parse_cmd->parsed()) return cmd_parse(file, as_json);
    if (check_cmd->parsed()) return cmd_check(file, as_json, cfg);
    if (sim_cmd->parsed()) return cmd_sim(file, op, sweep, out_path, as_json, cfg);
    if (run_cmd->parsed()) return cmd_run(task_file, cfg, interactive, transcript, as_json);
    if (bench_cmd->parsed())
      return cmd_bench(suite_file, attempts, workers, report_path, cfg, as_json, transcript);
    if (ctt_cmd->parsed()) {
      CttStore store = CttStore::open(cfg.ctt_path);
      if (ctt_add->parsed()) {
        json j = json::parse(slurp_or_die(file));
        CttEntry entry;
        entry.circuit_name = j.at("circuit_name").get<std::string>();
        entry.netlist = j.at("netlist").get<std::string>();
        if (j.contains("specifications")) {
          entry.specifications = spec_from_json_text(j.at("specifications").dump());
        }
        std::cout << store.put_entry(std::move(entry)) << "\n";
        return kExitOk;
      }
      if (ctt_query->parsed()) {
        auto results = store.query(query_text, topk);
        if (as_json) {
          json arr = json::array();
          for (const auto& [entry, score] : results) {
            arr.push_back({{"entry_id", entry->entry_id},
                           {"circuit_name", entry->circuit_name},
                           {"score", score}});
          }
          std::cout << arr.dump(2) << "\n";
        } else {
          for (const auto& [entry, score] : results) {
            std::printf("%s  %.4f  %s\n", entry->entry_id.c_str(), score,
                        entry->circuit_name.c_str());
          }
        }
        return kExitOk;
      }
      if (ctt_export->parsed()) {
        std::cout << store.export_jsonl();
        return kExitOk;
      }
    }
    if (ingest_cmd->parsed()) return cmd_ingest(dir, out_path, describe, cfg);
    if (mcq_cmd->parsed()) return cmd_mcq(data_file, cfg, as_json);
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
