#pragma once

// Diagram-aware retrieval over markdown corpora: documents are chunked on
// heading boundaries, image references become diagram-description chunks
// (described by a backend hook when available, alt-text placeholder
// otherwise), and retrieval is lexical BM25 (k1=1.2, b=0.75).

#include <map>
#include <string>
#include <vector>

#include "menter/gateway.hpp"

namespace menter {

struct Chunk {
  std::string doc_id;
  int chunk_id = 0;
  std::string text;
  enum class Kind { Prose, DiagramDescription } kind = Kind::Prose;
  size_t span_begin = 0;  // byte range in the source document
  size_t span_end = 0;
  std::string figure_ref;  // diagram chunks: the originating image target
};

inline constexpr size_t kMaxChunkChars = 1200;

/// Total: hook failures degrade to the "figure: <alt>" placeholder with a
/// warning. Chunk spans partition [0, doc.size()).
std::vector<Chunk> ingest_document(const std::string& doc_id, const std::string& markdown,
                                   Backend* diagram_hook = nullptr,
                                   std::vector<std::string>* warnings = nullptr);

class CorpusIndex {
 public:
  void add_chunks(const std::vector<Chunk>& chunks);

  /// Top-k by BM25, ties broken by (doc_id, chunk_id); zero-score chunks
  /// never surface.
  std::vector<std::pair<const Chunk*, double>> retrieve(const std::string& query,
                                                        int k) const;

  size_t size() const { return chunks_.size(); }
  const std::vector<Chunk>& chunks() const { return chunks_; }

  double k1 = 1.2;
  double b = 0.75;

  std::string to_json_text() const;
  static CorpusIndex from_json_text(const std::string& text);

  /// Document frequency of a token; exposed so rebuild equivalence is checkable.
  long long doc_freq(const std::string& term) const;

 private:
  std::vector<Chunk> chunks_;
  std::vector<std::map<std::string, int>> term_counts_;
  std::vector<long long> lengths_;
  std::map<std::string, long long> df_;
  long long total_len_ = 0;
};

/// Case-folded [a-z0-9]+ token stream shared by all lexical retrievers.
std::vector<std::string> tokenize(std::string_view text);

}  // namespace menter
