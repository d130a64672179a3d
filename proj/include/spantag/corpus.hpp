#pragma once

// Annotated snippets, the technique inventory, and JSONL ingestion and
// serialization.
//
// Input line: {"id": str, "text": str, "type": "tweet"|"paragraph",
//              "labels": [{"technique": str, "start": int, "end": int, "text": str}]}
// Offsets count Unicode scalar values; start inclusive, end exclusive.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spantag/io.hpp"
#include "spantag/unicode.hpp"

namespace spantag {

using json = nlohmann::json;
using LabelId = std::uint32_t;

inline constexpr LabelId kOutside = 0;

enum class Genre { Tweet, Paragraph };

inline std::string_view genre_name(Genre g) { return g == Genre::Tweet ? "tweet" : "paragraph"; }

inline std::optional<Genre> parse_genre(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "tweet") return Genre::Tweet;
  if (lower == "paragraph") return Genre::Paragraph;
  return std::nullopt;
}

// Technique inventory with the non-technique label "O" pinned at index 0.
class LabelSet {
 public:
  LabelSet() : names_{"O"} { index_.emplace("O", kOutside); }

  explicit LabelSet(const std::vector<std::string>& techniques) : LabelSet() {
    for (const auto& t : techniques) {
      if (t == "O") throw DataError("technique name 'O' is reserved for the outside label");
      if (!index_.emplace(t, static_cast<LabelId>(names_.size())).second)
        throw DataError("duplicate technique name '" + t + "'");
      names_.push_back(t);
    }
  }

  // One technique name per line; blank lines ignored.
  static LabelSet load(const std::filesystem::path& path) {
    std::vector<std::string> techniques;
    for (std::string line : read_lines(path)) {
      while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
      std::size_t b = 0;
      while (b < line.size() && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
      line.erase(0, b);
      if (!line.empty()) techniques.push_back(std::move(line));
    }
    return LabelSet(techniques);
  }

  std::size_t size() const { return names_.size(); }
  std::size_t technique_count() const { return names_.size() - 1; }
  const std::string& name(LabelId id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<LabelId> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const LabelSet& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, LabelId> index_;
};

// Half-open character range [start, end).
struct Range {
  std::int64_t start = 0;
  std::int64_t end = 0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct TechniqueSpan {
  LabelId technique = kOutside;
  std::int64_t start = 0;
  std::int64_t end = 0;
  Text surface;

  std::int64_t length() const { return end - start; }

  friend bool operator==(const TechniqueSpan&, const TechniqueSpan&) = default;
  friend auto operator<=>(const TechniqueSpan& a, const TechniqueSpan& b) {
    return std::tie(a.start, a.end, a.technique, a.surface) <=>
           std::tie(b.start, b.end, b.technique, b.surface);
  }
};

struct Snippet {
  std::string id;
  Genre genre = Genre::Paragraph;
  Text text;
  std::vector<TechniqueSpan> gold_spans;

  friend bool operator==(const Snippet&, const Snippet&) = default;
};

using Corpus = std::vector<Snippet>;

// Substring by code-point range, or nullopt when the range is not inside text.
inline std::optional<Text> slice(const Text& text, std::int64_t start, std::int64_t end) {
  if (start < 0 || end < start || end > static_cast<std::int64_t>(text.size())) return std::nullopt;
  return text.substr(static_cast<std::size_t>(start), static_cast<std::size_t>(end - start));
}

namespace detail {

inline const json& require_field(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(where + ": missing field '" + key + "'");
  return *it;
}

inline std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require_field(obj, key, where);
  if (!v.is_string()) throw DataError(where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

inline std::int64_t require_int(const json& obj, const char* key, const std::string& where) {
  const json& v = require_field(obj, key, where);
  if (!v.is_number_integer()) throw DataError(where + ": field '" + key + "' must be an integer");
  return v.get<std::int64_t>();
}

inline Text decode_field(const std::string& s, const std::string& where) {
  try {
    return utf8_decode(s);
  } catch (const Utf8Error& e) {
    throw DataError(where + ": " + e.what());
  }
}

inline std::vector<TechniqueSpan> parse_labels(const json& obj, const LabelSet& labels,
                                               const std::string& where) {
  std::vector<TechniqueSpan> spans;
  auto it = obj.find("labels");
  if (it == obj.end() || it->is_null()) return spans;
  if (!it->is_array()) throw DataError(where + ": field 'labels' must be an array");
  for (const json& item : *it) {
    if (!item.is_object()) throw DataError(where + ": label entries must be objects");
    const std::string technique = require_string(item, "technique", where);
    auto id = labels.find(technique);
    if (!id || *id == kOutside) throw DataError(where + ": unknown technique '" + technique + "'");
    TechniqueSpan span;
    span.technique = *id;
    span.start = require_int(item, "start", where);
    span.end = require_int(item, "end", where);
    span.surface = decode_field(require_string(item, "text", where), where);
    spans.push_back(std::move(span));
  }
  return spans;
}

inline json spans_to_json(const std::vector<TechniqueSpan>& spans, const LabelSet& labels) {
  json arr = json::array();
  for (const auto& s : spans) {
    arr.push_back({{"technique", labels.name(s.technique)},
                   {"start", s.start},
                   {"end", s.end},
                   {"text", utf8_encode(s.surface)}});
  }
  return arr;
}

template <typename OnLine>
void for_each_json_line(const std::filesystem::path& path, OnLine&& on_line) {
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
    on_line(obj, where);
  }
}

}  // namespace detail

// Offsets are taken verbatim; repair happens separately. A missing "labels"
// field reads as no annotations, so unlabeled test files load too.
inline Corpus load_corpus(const std::filesystem::path& path, const LabelSet& labels) {
  Corpus corpus;
  std::unordered_set<std::string> seen;
  detail::for_each_json_line(path, [&](const json& obj, const std::string& where) {
    Snippet s;
    s.id = detail::require_string(obj, "id", where);
    if (s.id.empty()) throw DataError(where + ": empty id");
    if (!seen.insert(s.id).second) throw DataError(where + ": duplicate id '" + s.id + "'");
    const std::string type = detail::require_string(obj, "type", where);
    auto genre = parse_genre(type);
    if (!genre) throw DataError(where + ": unknown type '" + type + "'");
    s.genre = *genre;
    s.text = detail::decode_field(detail::require_string(obj, "text", where), where);
    s.gold_spans = detail::parse_labels(obj, labels, where);
    corpus.push_back(std::move(s));
  });
  return corpus;
}

// Several files concatenated in order (e.g. train followed by dev).
inline Corpus load_corpora(const std::vector<std::filesystem::path>& paths, const LabelSet& labels) {
  Corpus all;
  std::unordered_set<std::string> seen;
  for (const auto& p : paths) {
    for (auto& s : load_corpus(p, labels)) {
      if (!seen.insert(s.id).second)
        throw DataError(p.string() + ": duplicate id '" + s.id + "' across input files");
      all.push_back(std::move(s));
    }
  }
  return all;
}

inline std::string corpus_to_jsonl(const Corpus& corpus, const LabelSet& labels) {
  std::string out;
  for (const auto& s : corpus) {
    json obj = {{"id", s.id},
                {"text", utf8_encode(s.text)},
                {"type", std::string(genre_name(s.genre))},
                {"labels", detail::spans_to_json(s.gold_spans, labels)}};
    out += obj.dump();
    out += '\n';
  }
  return out;
}

inline void save_corpus(const Corpus& corpus, const LabelSet& labels, const std::filesystem::path& path) {
  write_file_atomic(path, corpus_to_jsonl(corpus, labels));
}

// Per-snippet span lists keyed by id, in file order.
struct SpanRecord {
  std::string id;
  std::vector<TechniqueSpan> spans;
};

// Reads any file carrying "id" and "labels": a prediction file or a full corpus.
inline std::vector<SpanRecord> load_span_records(const std::filesystem::path& path, const LabelSet& labels) {
  std::vector<SpanRecord> records;
  std::unordered_set<std::string> seen;
  detail::for_each_json_line(path, [&](const json& obj, const std::string& where) {
    SpanRecord r;
    r.id = detail::require_string(obj, "id", where);
    if (!seen.insert(r.id).second) throw DataError(where + ": duplicate id '" + r.id + "'");
    r.spans = detail::parse_labels(obj, labels, where);
    records.push_back(std::move(r));
  });
  return records;
}

inline std::string predictions_to_jsonl(const Corpus& snippets,
                                        const std::vector<std::vector<TechniqueSpan>>& predictions,
                                        const LabelSet& labels) {
  if (predictions.size() != snippets.size())
    throw DataError("prediction list has " + std::to_string(predictions.size()) + " entries for " +
                    std::to_string(snippets.size()) + " snippets");
  std::string out;
  for (std::size_t i = 0; i < snippets.size(); ++i) {
    auto spans = predictions[i];
    std::sort(spans.begin(), spans.end());
    json obj = {{"id", snippets[i].id}, {"labels", detail::spans_to_json(spans, labels)}};
    out += obj.dump();
    out += '\n';
  }
  return out;
}

// One object per snippet: {"id", "labels"} with labels ordered by start.
inline void save_predictions(const Corpus& snippets,
                             const std::vector<std::vector<TechniqueSpan>>& predictions,
                             const LabelSet& labels, const std::filesystem::path& path) {
  write_file_atomic(path, predictions_to_jsonl(snippets, predictions, labels));
}

struct GenreCounts {
  std::size_t tweet = 0;
  std::size_t paragraph = 0;

  std::size_t total() const { return tweet + paragraph; }
  friend bool operator==(const GenreCounts&, const GenreCounts&) = default;
};

inline GenreCounts corpus_stats(const Corpus& corpus) {
  GenreCounts c;
  for (const auto& s : corpus) (s.genre == Genre::Tweet ? c.tweet : c.paragraph)++;
  return c;
}

}  // namespace spantag
