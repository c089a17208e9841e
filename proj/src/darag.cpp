#include "menter/darag.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "json.hpp"
#include "menter/util.hpp"

namespace menter {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

struct ImageRef {
  size_t begin = 0, end = 0;  // byte range of ![alt](target)
  std::string alt;
  std::string target;
};

// Standard markdown image syntax: ![alt](target).
std::vector<ImageRef> find_images(const std::string& doc) {
  std::vector<ImageRef> out;
  size_t pos = 0;
  while ((pos = doc.find("![", pos)) != std::string::npos) {
    const size_t alt_end = doc.find(']', pos + 2);
    if (alt_end == std::string::npos) break;
    if (alt_end + 1 >= doc.size() || doc[alt_end + 1] != '(') {
      pos = alt_end + 1;
      continue;
    }
    const size_t target_end = doc.find(')', alt_end + 2);
    if (target_end == std::string::npos) break;
    ImageRef ref;
    ref.begin = pos;
    ref.end = target_end + 1;
    ref.alt = doc.substr(pos + 2, alt_end - pos - 2);
    ref.target = doc.substr(alt_end + 2, target_end - alt_end - 2);
    out.push_back(std::move(ref));
    pos = target_end + 1;
  }
  return out;
}

bool is_heading_start(const std::string& doc, size_t pos) {
  if (doc[pos] != '#') return false;
  return pos == 0 || doc[pos - 1] == '\n';
}

}  // namespace

std::vector<Chunk> ingest_document(const std::string& doc_id, const std::string& markdown,
                                   Backend* diagram_hook,
                                   std::vector<std::string>* warnings) {
  std::vector<Chunk> out;
  if (markdown.empty()) return out;

  const std::vector<ImageRef> images = find_images(markdown);

  // Cut points: document edges, heading starts, image boundaries.
  std::vector<size_t> cuts{0, markdown.size()};
  for (size_t i = 0; i < markdown.size(); ++i) {
    if (is_heading_start(markdown, i)) cuts.push_back(i);
  }
  for (const ImageRef& ref : images) {
    cuts.push_back(ref.begin);
    cuts.push_back(ref.end);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  // Oversized prose segments split further at paragraph breaks.
  std::vector<std::pair<size_t, size_t>> segments;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    size_t begin = cuts[i];
    const size_t end = cuts[i + 1];
    while (end - begin > kMaxChunkChars) {
      const size_t brk = markdown.rfind("\n\n", begin + kMaxChunkChars);
      if (brk == std::string::npos || brk <= begin) break;
      segments.emplace_back(begin, brk + 2);
      begin = brk + 2;
    }
    segments.emplace_back(begin, end);
  }

  int chunk_id = 0;
  size_t pending_gap = SIZE_MAX;
  auto image_at = [&](size_t begin, size_t end) -> const ImageRef* {
    for (const ImageRef& ref : images) {
      if (ref.begin == begin && ref.end == end) return &ref;
    }
    return nullptr;
  };

  for (const auto& [begin, end] : segments) {
    Chunk chunk;
    chunk.doc_id = doc_id;
    chunk.span_begin = begin;
    chunk.span_end = end;
    if (const ImageRef* ref = image_at(begin, end)) {
      chunk.kind = Chunk::Kind::DiagramDescription;
      chunk.figure_ref = ref->target.empty() ? ref->alt : ref->target;
      chunk.text = "figure: " + ref->alt;
      if (diagram_hook) {
        try {
          Completion c = diagram_hook->complete(
              {{Role::System, "Describe the referenced circuit diagram as plain text."},
               {Role::User, "Figure '" + ref->alt + "' (" + ref->target + ")"}});
          if (!c.content.empty()) chunk.text = c.content;
        } catch (const GatewayError& e) {
          if (warnings) {
            warnings->push_back("diagram hook failed for '" + ref->alt +
                                "': " + e.what() + "; using placeholder");
          }
        }
      }
    } else {
      chunk.text = trim(markdown.substr(begin, end - begin));
      if (chunk.text.empty()) {
        // Whitespace-only gap: keep spans partitioning by extending a neighbor.
        if (!out.empty()) {
          out.back().span_end = end;
        } else if (pending_gap == SIZE_MAX) {
          // Leading gap attaches to the upcoming chunk.
          pending_gap = begin;
        }
        continue;
      }
    }
    if (pending_gap != SIZE_MAX) {
      chunk.span_begin = pending_gap;
      pending_gap = SIZE_MAX;
    }
    chunk.chunk_id = chunk_id++;
    out.push_back(std::move(chunk));
  }
  // Trailing whitespace-only gap already merged above; a fully blank document
  // yields no chunks.
  return out;
}

void CorpusIndex::add_chunks(const std::vector<Chunk>& chunks) {
  for (const Chunk& c : chunks) {
    std::map<std::string, int> counts;
    long long len = 0;
    for (const std::string& t : tokenize(c.text)) {
      ++counts[t];
      ++len;
    }
    for (const auto& [term, n] : counts) ++df_[term];
    chunks_.push_back(c);
    term_counts_.push_back(std::move(counts));
    lengths_.push_back(len);
    total_len_ += len;
  }
}

long long CorpusIndex::doc_freq(const std::string& term) const {
  auto it = df_.find(term);
  return it == df_.end() ? 0 : it->second;
}

std::vector<std::pair<const Chunk*, double>> CorpusIndex::retrieve(const std::string& query,
                                                                   int k) const {
  std::vector<std::pair<const Chunk*, double>> out;
  if (chunks_.empty() || k < 1) return out;
  const std::vector<std::string> terms = tokenize(query);
  const double n_docs = static_cast<double>(chunks_.size());
  const double avgdl = total_len_ > 0 ? static_cast<double>(total_len_) / n_docs : 1.0;

  std::vector<std::pair<double, size_t>> scored;
  for (size_t i = 0; i < chunks_.size(); ++i) {
    double score = 0.0;
    for (const std::string& t : terms) {
      auto tc = term_counts_[i].find(t);
      if (tc == term_counts_[i].end()) continue;
      const double df = static_cast<double>(doc_freq(t));
      const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
      const double tf = static_cast<double>(tc->second);
      const double dl = static_cast<double>(lengths_[i]);
      score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
    }
    if (score > 0.0) scored.emplace_back(score, i);
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b2) {
    if (a.first != b2.first) return a.first > b2.first;
    const Chunk& ca = chunks_[a.second];
    const Chunk& cb = chunks_[b2.second];
    if (ca.doc_id != cb.doc_id) return ca.doc_id < cb.doc_id;
    return ca.chunk_id < cb.chunk_id;
  });
  for (size_t i = 0; i < scored.size() && i < static_cast<size_t>(k); ++i) {
    out.emplace_back(&chunks_[scored[i].second], scored[i].first);
  }
  return out;
}

std::string CorpusIndex::to_json_text() const {
  nlohmann::json chunks = nlohmann::json::array();
  for (const Chunk& c : chunks_) {
    chunks.push_back({{"doc_id", c.doc_id},
                      {"chunk_id", c.chunk_id},
                      {"text", c.text},
                      {"kind", c.kind == Chunk::Kind::Prose ? "prose" : "diagram_description"},
                      {"span_begin", c.span_begin},
                      {"span_end", c.span_end},
                      {"figure_ref", c.figure_ref}});
  }
  return nlohmann::json{{"k1", k1}, {"b", b}, {"chunks", chunks}}.dump(2);
}

CorpusIndex CorpusIndex::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CorpusIndex index;
  index.k1 = j.value("k1", 1.2);
  index.b = j.value("b", 0.75);
  std::vector<Chunk> chunks;
  for (const nlohmann::json& c : j.at("chunks")) {
    Chunk chunk;
    chunk.doc_id = c.at("doc_id").get<std::string>();
    chunk.chunk_id = c.at("chunk_id").get<int>();
    chunk.text = c.at("text").get<std::string>();
    chunk.kind = c.at("kind").get<std::string>() == "prose"
                     ? Chunk::Kind::Prose
                     : Chunk::Kind::DiagramDescription;
    chunk.span_begin = c.at("span_begin").get<size_t>();
    chunk.span_end = c.at("span_end").get<size_t>();
    chunk.figure_ref = c.value("figure_ref", "");
    chunks.push_back(std::move(chunk));
  }
  index.add_chunks(chunks);  // term stats rebuilt from chunk text
  return index;
}

}  // namespace menter
