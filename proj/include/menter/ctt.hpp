#pragma once

// Circuit Think Tank: append-oriented JSONL repository of solved designs.
// One entry per line; entries are immutable once written and survive
// close/reopen byte-exactly. Retrieval shares the BM25 scorer with darag.

#include <deque>
#include <map>
#include <memory>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "menter/speccheck.hpp"

namespace menter {

/// One Chain-of-Stage step: the prompt that drove it and the verbatim output.
struct StageRecord {
  std::string stage_name;
  std::string prompt_sent;
  std::string output;
  int index = 0;
};

struct CttEntry {
  std::string entry_id;  // stable hash of (circuit_name, netlist)
  std::string circuit_name;
  SpecRequirement specifications;
  std::vector<StageRecord> reasoning_stages;
  std::string netlist;  // canonical deck text; must parse cleanly
  std::string interaction_history;  // transcript file reference
  std::string created_at;
};

class StorageError : public std::runtime_error {
 public:
  explicit StorageError(const std::string& what) : std::runtime_error(what) {}
};

class InvalidNetlist : public std::runtime_error {
 public:
  explicit InvalidNetlist(const std::string& what) : std::runtime_error(what) {}
};

/// Thread model: many concurrent readers; writes serialized by an exclusive
/// append lock (in-process shared_mutex plus flock on the backing file).
/// Entries live in a deque, so pointers handed out stay valid across appends.
class CttStore {
 public:
  CttStore() : mutex_(std::make_unique<std::shared_mutex>()) {}

  /// Loads an existing store or starts an empty one at `path`.
  static CttStore open(const std::string& path);

  /// Appends durably; duplicate entry_id is a no-op returning the existing
  /// id. Throws InvalidNetlist when the deck does not parse, StorageError on
  /// I/O failure.
  std::string put_entry(CttEntry entry);

  const CttEntry* get(const std::string& entry_id) const;
  size_t size() const;

  /// Lexical ranking over circuit_name + specification text; equal scores
  /// ordered by entry_id ascending; empty store or no term overlap gives an
  /// empty result.
  std::vector<std::pair<const CttEntry*, double>> query(const std::string& text, int k) const;

  /// Full JSONL dump, byte-identical to the backing file.
  std::string export_jsonl() const;

  static std::string compute_entry_id(const std::string& circuit_name,
                                      const std::string& netlist);

 private:
  std::string path_;
  std::deque<CttEntry> entries_;
  std::map<std::string, size_t> by_id_;
  std::unique_ptr<std::shared_mutex> mutex_;
};

}  // namespace menter
