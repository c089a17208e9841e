#include "menter/ctt.hpp"

#include <sys/file.h>
#include <unistd.h>

#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "menter/darag.hpp"
#include "menter/netlist.hpp"
#include "menter/util.hpp"

namespace menter {

namespace {

using nlohmann::json;

json entry_to_json(const CttEntry& e) {
  json stages = json::array();
  for (const StageRecord& s : e.reasoning_stages) {
    stages.push_back({{"stage_name", s.stage_name},
                      {"prompt_sent", s.prompt_sent},
                      {"output", s.output},
                      {"index", s.index}});
  }
  return json{{"entry_id", e.entry_id},
              {"circuit_name", e.circuit_name},
              {"specifications", json::parse(spec_to_json_text(e.specifications))},
              {"reasoning_stages", stages},
              {"netlist", e.netlist},
              {"interaction_history", e.interaction_history},
              {"created_at", e.created_at}};
}

CttEntry entry_from_json(const json& j) {
  CttEntry e;
  e.entry_id = j.at("entry_id").get<std::string>();
  e.circuit_name = j.at("circuit_name").get<std::string>();
  e.specifications = spec_from_json_text(j.at("specifications").dump());
  for (const json& s : j.at("reasoning_stages")) {
    e.reasoning_stages.push_back({s.at("stage_name").get<std::string>(),
                                  s.at("prompt_sent").get<std::string>(),
                                  s.at("output").get<std::string>(),
                                  s.at("index").get<int>()});
  }
  e.netlist = j.at("netlist").get<std::string>();
  e.interaction_history = j.value("interaction_history", "");
  e.created_at = j.value("created_at", "");
  return e;
}

}  // namespace

std::string CttStore::compute_entry_id(const std::string& circuit_name,
                                       const std::string& netlist) {
  return to_hex(fnv1a64(circuit_name + "\n" + netlist));
}

CttStore CttStore::open(const std::string& path) {
  CttStore store;
  store.path_ = path;
  auto text = read_file(path);
  if (!text) return store;  // fresh store
  std::istringstream in(*text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw StorageError("ctt store " + path + ": malformed JSON at line " +
                         std::to_string(lineno));
    }
    CttEntry e = entry_from_json(j);
    store.by_id_[e.entry_id] = store.entries_.size();
    store.entries_.push_back(std::move(e));
  }
  return store;
}

std::string CttStore::put_entry(CttEntry entry) {
  ParseResult parsed = parse_netlist(entry.netlist);
  if (!parsed.syntax_ok()) {
    throw InvalidNetlist("entry netlist does not parse: " + parsed.first_error());
  }
  entry.entry_id = compute_entry_id(entry.circuit_name, entry.netlist);

  std::unique_lock lock(*mutex_);
  if (auto it = by_id_.find(entry.entry_id); it != by_id_.end()) {
    return entry.entry_id;  // idempotent
  }
  if (entry.created_at.empty()) entry.created_at = iso8601_now();

  const std::string line = entry_to_json(entry).dump() + "\n";
  FILE* f = std::fopen(path_.c_str(), "ab");
  if (!f) throw StorageError("cannot open ctt store '" + path_ + "' for append");
  flock(fileno(f), LOCK_EX);
  const bool ok =
      std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0;
  flock(fileno(f), LOCK_UN);
  std::fclose(f);
  if (!ok) throw StorageError("write to ctt store '" + path_ + "' failed");

  by_id_[entry.entry_id] = entries_.size();
  entries_.push_back(std::move(entry));
  return entries_.back().entry_id;
}

const CttEntry* CttStore::get(const std::string& entry_id) const {
  std::shared_lock lock(*mutex_);
  auto it = by_id_.find(entry_id);
  return it == by_id_.end() ? nullptr : &entries_[it->second];
}

size_t CttStore::size() const {
  std::shared_lock lock(*mutex_);
  return entries_.size();
}

std::vector<std::pair<const CttEntry*, double>> CttStore::query(const std::string& text,
                                                                int k) const {
  std::shared_lock lock(*mutex_);
  std::vector<std::pair<const CttEntry*, double>> out;
  if (entries_.empty() || k < 1) return out;
  // One document per entry, scored with the shared BM25 index; doc_id is the
  // entry_id, so the index tie-break is exactly "entry_id ascending".
  CorpusIndex index;
  std::vector<Chunk> docs;
  std::map<std::string, const CttEntry*> by_id;
  for (const CttEntry& e : entries_) {
    Chunk c;
    c.doc_id = e.entry_id;
    c.chunk_id = 0;
    c.text = e.circuit_name + "\n" + spec_summary_text(e.specifications);
    docs.push_back(std::move(c));
    by_id[e.entry_id] = &e;
  }
  index.add_chunks(docs);
  for (const auto& [chunk, score] : index.retrieve(text, k)) {
    out.emplace_back(by_id[chunk->doc_id], score);
  }
  return out;
}

std::string CttStore::export_jsonl() const {
  std::shared_lock lock(*mutex_);
  std::string out;
  for (const CttEntry& e : entries_) {
    out += entry_to_json(e).dump();
    out += '\n';
  }
  return out;
}

}  // namespace menter
