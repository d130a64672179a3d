#pragma once

// Annotation repair: Unicode scrubbing, realignment of misreported spans by
// substring search, @USER normalization of annotation surfaces, and a
// machine-readable override ledger for cases no automatic step recovers.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spantag/corpus.hpp"

namespace spantag {

// Replaces every Cf or Co code point with U+0020; length is preserved.
inline Text scrub_unicode(const Text& text) {
  Text out = text;
  for (char32_t& c : out)
    if (is_format_char(c) || is_private_use(c)) c = U' ';
  return out;
}

inline std::size_t count_scrubbable(const Text& text) {
  std::size_t n = 0;
  for (char32_t c : text)
    if (is_format_char(c) || is_private_use(c)) ++n;
  return n;
}

// Rewrites every maximal "@" + (non-space, non-"@")+ run to "@USER".
inline Text normalize_mention_surface(const Text& surface) {
  static const Text kUser = U"@USER";
  Text out;
  out.reserve(surface.size());
  std::size_t i = 0;
  while (i < surface.size()) {
    if (surface[i] != U'@') {
      out.push_back(surface[i++]);
      continue;
    }
    std::size_t j = i + 1;
    while (j < surface.size() && surface[j] != U'@' && !is_white_space(surface[j])) ++j;
    if (j == i + 1) {
      out.push_back(U'@');
    } else {
      out += kUser;
    }
    i = j;
  }
  return out;
}

// Occurrence of surface nearest to reported_start (earlier start wins ties),
// or nullopt when surface does not occur. The reported end plays no part.
inline std::optional<Range> realign_span(const Text& text, const Text& surface, std::int64_t reported_start) {
  if (surface.empty()) return std::nullopt;
  std::optional<Range> best;
  std::int64_t best_dist = 0;
  for (std::size_t pos = text.find(surface); pos != Text::npos; pos = text.find(surface, pos + 1)) {
    const auto start = static_cast<std::int64_t>(pos);
    const std::int64_t dist = std::llabs(start - reported_start);
    if (!best || dist < best_dist) {
      best = Range{start, start + static_cast<std::int64_t>(surface.size())};
      best_dist = dist;
    }
  }
  return best;
}

struct OverrideEntry {
  std::int64_t start = 0;
  std::int64_t end = 0;
  Text surface;
};

// Manual corrections keyed by (snippet id, annotation index).
// File: JSONL of {"id": str, "ann_index": int, "start": int, "end": int, "text": str}.
class OverrideLedger {
 public:
  void add(const std::string& id, std::size_t ann_index, OverrideEntry entry) {
    entries_[{id, ann_index}] = std::move(entry);
  }

  const OverrideEntry* find(const std::string& id, std::size_t ann_index) const {
    auto it = entries_.find({id, ann_index});
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }

  static OverrideLedger load(const std::filesystem::path& path) {
    OverrideLedger ledger;
    detail::for_each_json_line(path, [&](const json& obj, const std::string& where) {
      const std::string id = detail::require_string(obj, "id", where);
      const std::int64_t idx = detail::require_int(obj, "ann_index", where);
      if (idx < 0) throw DataError(where + ": negative ann_index");
      OverrideEntry e;
      e.start = detail::require_int(obj, "start", where);
      e.end = detail::require_int(obj, "end", where);
      e.surface = detail::decode_field(detail::require_string(obj, "text", where), where);
      ledger.add(id, static_cast<std::size_t>(idx), std::move(e));
    });
    return ledger;
  }

 private:
  std::map<std::pair<std::string, std::size_t>, OverrideEntry> entries_;
};

struct RepairAction {
  enum class Kind { ScrubbedChars, Realigned, MentionNormalized, OverrideApplied, Unrepairable };

  Kind kind;
  std::int64_t ann_index = -1;  // -1 for snippet-level actions
  std::int64_t count = 0;       // ScrubbedChars
  std::int64_t old_start = 0;   // Realigned
  std::int64_t new_start = 0;   // Realigned
  std::string reason;           // Unrepairable

  friend bool operator==(const RepairAction&, const RepairAction&) = default;
};

inline std::string_view action_name(RepairAction::Kind k) {
  switch (k) {
    case RepairAction::Kind::ScrubbedChars: return "scrubbed_chars";
    case RepairAction::Kind::Realigned: return "realigned";
    case RepairAction::Kind::MentionNormalized: return "mention_normalized";
    case RepairAction::Kind::OverrideApplied: return "override_applied";
    case RepairAction::Kind::Unrepairable: return "unrepairable";
  }
  return "";
}

struct SnippetRepair {
  std::string id;
  std::vector<RepairAction> actions;
  bool excluded = false;
};

struct RepairReport {
  // One entry per input snippet, in input order.
  std::vector<SnippetRepair> snippets;

  std::size_t action_count() const {
    std::size_t n = 0;
    for (const auto& s : snippets) n += s.actions.size();
    return n;
  }

  std::size_t count(RepairAction::Kind kind) const {
    std::size_t n = 0;
    for (const auto& s : snippets)
      for (const auto& a : s.actions)
        if (a.kind == kind) ++n;
    return n;
  }

  bool any_unrepairable() const { return count(RepairAction::Kind::Unrepairable) > 0; }

  // One line per snippet that has actions.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& s : snippets) {
      if (s.actions.empty()) continue;
      json actions = json::array();
      for (const auto& a : s.actions) {
        json j = {{"action", std::string(action_name(a.kind))}};
        if (a.ann_index >= 0) j["ann_index"] = a.ann_index;
        switch (a.kind) {
          case RepairAction::Kind::ScrubbedChars: j["count"] = a.count; break;
          case RepairAction::Kind::Realigned:
            j["old_start"] = a.old_start;
            j["new_start"] = a.new_start;
            break;
          case RepairAction::Kind::Unrepairable: j["reason"] = a.reason; break;
          default: break;
        }
        actions.push_back(std::move(j));
      }
      out += json{{"id", s.id}, {"excluded", s.excluded}, {"actions", std::move(actions)}}.dump();
      out += '\n';
    }
    return out;
  }
};

struct RepairResult {
  Corpus corpus;
  RepairReport report;
};

namespace detail {

inline void repair_annotation(const Snippet& snippet, std::size_t index, const TechniqueSpan& raw,
                              const OverrideLedger& ledger, std::vector<TechniqueSpan>& kept,
                              std::vector<RepairAction>& actions) {
  using Kind = RepairAction::Kind;
  const auto ann = static_cast<std::int64_t>(index);
  const Text& text = snippet.text;
  const Text surface = scrub_unicode(raw.surface);

  auto keep = [&](std::int64_t start, std::int64_t end, const Text& s) {
    kept.push_back(TechniqueSpan{raw.technique, start, end, s});
  };
  auto realigned = [&](std::int64_t new_start) {
    actions.push_back(RepairAction{Kind::Realigned, ann, 0, raw.start, new_start, {}});
  };

  if (!surface.empty()) {
    if (slice(text, raw.start, raw.end) == surface) {
      keep(raw.start, raw.end, surface);
      return;
    }
    if (auto r = realign_span(text, surface, raw.start)) {
      realigned(r->start);
      keep(r->start, r->end, surface);
      return;
    }
    const Text normalized = normalize_mention_surface(surface);
    if (normalized != surface) {
      const std::int64_t reported_end = raw.start + static_cast<std::int64_t>(normalized.size());
      if (slice(text, raw.start, reported_end) == normalized) {
        actions.push_back(RepairAction{Kind::MentionNormalized, ann, 0, 0, 0, {}});
        keep(raw.start, reported_end, normalized);
        return;
      }
      if (auto r = realign_span(text, normalized, raw.start)) {
        actions.push_back(RepairAction{Kind::MentionNormalized, ann, 0, 0, 0, {}});
        realigned(r->start);
        keep(r->start, r->end, normalized);
        return;
      }
    }
  }
  if (const OverrideEntry* fix = ledger.find(snippet.id, index)) {
    if (fix->start < fix->end && slice(text, fix->start, fix->end) == fix->surface) {
      actions.push_back(RepairAction{Kind::OverrideApplied, ann, 0, 0, 0, {}});
      keep(fix->start, fix->end, fix->surface);
      return;
    }
    actions.push_back(RepairAction{Kind::Unrepairable, ann, 0, 0, 0,
                                   "override entry does not match the scrubbed text"});
    return;
  }
  actions.push_back(RepairAction{Kind::Unrepairable, ann, 0, 0, 0,
                                 surface.empty() ? "empty surface" : "surface not found in text"});
}

}  // namespace detail

// Runs scrub -> keep/realign -> mention-normalize + realign -> ledger per
// annotation. Snippets with any unrepairable annotation are left out of the
// returned corpus and flagged in the report.
inline RepairResult repair_corpus(const Corpus& snippets, const OverrideLedger& ledger) {
  RepairResult result;
  result.report.snippets.reserve(snippets.size());
  for (const Snippet& in : snippets) {
    SnippetRepair entry;
    entry.id = in.id;
    Snippet out;
    out.id = in.id;
    out.genre = in.genre;
    out.text = scrub_unicode(in.text);
    if (std::size_t n = count_scrubbable(in.text); n > 0)
      entry.actions.push_back(
          RepairAction{RepairAction::Kind::ScrubbedChars, -1, static_cast<std::int64_t>(n), 0, 0, {}});
    for (std::size_t i = 0; i < in.gold_spans.size(); ++i)
      detail::repair_annotation(out, i, in.gold_spans[i], ledger, out.gold_spans, entry.actions);
    for (const auto& a : entry.actions)
      if (a.kind == RepairAction::Kind::Unrepairable) entry.excluded = true;
    if (!entry.excluded) result.corpus.push_back(std::move(out));
    result.report.snippets.push_back(std::move(entry));
  }
  return result;
}

}  // namespace spantag
