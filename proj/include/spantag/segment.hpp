#pragma once

// Word segmentation, subword tokenization, and the token <-> word <->
// character alignment shared by every prediction strategy.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "spantag/corpus.hpp"

namespace spantag {

enum class UnitLevel { Token, Word };

inline std::string_view unit_level_name(UnitLevel l) { return l == UnitLevel::Token ? "token" : "word"; }

struct WordSpan {
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::size_t index = 0;
  friend bool operator==(const WordSpan&, const WordSpan&) = default;
};

struct Token {
  std::string text;           // UTF-8, without any continuation marker
  bool continuation = false;  // not the first piece of its word
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::size_t word_index = 0;

  // Vocabulary form: continuation pieces carry the "##" prefix.
  std::string piece() const { return continuation ? "##" + text : text; }

  friend bool operator==(const Token&, const Token&) = default;
};

struct TokenAlignment {
  std::vector<Token> tokens;
  std::vector<WordSpan> words;
  // word_offsets[w] is the index of word w's first token; size words + 1.
  std::vector<std::size_t> word_offsets;

  std::size_t first_token(std::size_t word) const { return word_offsets[word]; }
  std::size_t token_count(std::size_t word) const { return word_offsets[word + 1] - word_offsets[word]; }

  std::vector<Range> token_ranges() const {
    std::vector<Range> r;
    r.reserve(tokens.size());
    for (const auto& t : tokens) r.push_back({t.start, t.end});
    return r;
  }

  std::vector<Range> word_ranges() const {
    std::vector<Range> r;
    r.reserve(words.size());
    for (const auto& w : words) r.push_back({w.start, w.end});
    return r;
  }

  std::vector<Range> unit_ranges(UnitLevel level) const {
    return level == UnitLevel::Token ? token_ranges() : word_ranges();
  }
};

// Splits one whitespace-free word into pieces. The first piece is returned
// as-is; later pieces carry a "##" prefix. Stripping the prefixes and
// concatenating must give back the word.
class SubwordTokenizer {
 public:
  virtual ~SubwordTokenizer() = default;
  virtual std::vector<Text> split(const Text& word) const = 0;
};

// Every word is a single token.
class WholeWordTokenizer final : public SubwordTokenizer {
 public:
  std::vector<Text> split(const Text& word) const override { return {word}; }
};

// Greedy longest-match against a vocabulary, WordPiece style: word-initial
// pieces are plain entries, later pieces match "##"-prefixed entries. When no
// entry matches at a position the single character is emitted.
class VocabTokenizer final : public SubwordTokenizer {
 public:
  VocabTokenizer() = default;

  explicit VocabTokenizer(const std::vector<Text>& entries) {
    for (const Text& e : entries) add(e);
  }

  // One subword per line; continuation pieces prefixed "##".
  static VocabTokenizer load(const std::filesystem::path& path) {
    VocabTokenizer tok;
    for (const std::string& line : read_lines(path)) {
      if (line.empty()) continue;
      try {
        tok.add(utf8_decode(line));
      } catch (const Utf8Error& e) {
        throw DataError(path.string() + ": " + e.what());
      }
    }
    return tok;
  }

  void add(const Text& entry) {
    if (entry.size() > 2 && entry.compare(0, 2, U"##") == 0) {
      Text body = entry.substr(2);
      max_len_ = std::max(max_len_, body.size());
      continuation_.insert(std::move(body));
    } else if (!entry.empty()) {
      max_len_ = std::max(max_len_, entry.size());
      initial_.insert(entry);
    }
  }

  std::size_t size() const { return initial_.size() + continuation_.size(); }

  std::vector<Text> split(const Text& word) const override {
    std::vector<Text> pieces;
    std::size_t pos = 0;
    while (pos < word.size()) {
      const auto& table = pos == 0 ? initial_ : continuation_;
      std::size_t len = std::min(max_len_, word.size() - pos);
      for (; len > 0; --len)
        if (table.count(word.substr(pos, len))) break;
      if (len == 0) len = 1;
      Text piece = word.substr(pos, len);
      pieces.push_back(pos == 0 ? std::move(piece) : U"##" + piece);
      pos += len;
    }
    return pieces;
  }

 private:
  std::unordered_set<Text> initial_;
  std::unordered_set<Text> continuation_;
  std::size_t max_len_ = 0;
};

// Maximal runs of non-White_Space code points.
inline std::vector<WordSpan> segment_words(const Text& text) {
  std::vector<WordSpan> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_white_space(text[i])) ++i;
    if (i == text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !is_white_space(text[j])) ++j;
    words.push_back({static_cast<std::int64_t>(i), static_cast<std::int64_t>(j), words.size()});
    i = j;
  }
  return words;
}

inline TokenAlignment align(const Text& text, const SubwordTokenizer& tokenizer) {
  TokenAlignment a;
  a.words = segment_words(text);
  a.word_offsets.reserve(a.words.size() + 1);
  for (const WordSpan& w : a.words) {
    a.word_offsets.push_back(a.tokens.size());
    const Text word = text.substr(static_cast<std::size_t>(w.start), static_cast<std::size_t>(w.end - w.start));
    const std::vector<Text> pieces = tokenizer.split(word);
    std::int64_t cursor = w.start;
    for (std::size_t p = 0; p < pieces.size(); ++p) {
      Text body = pieces[p];
      const bool cont = p > 0;
      if (cont) {
        if (body.size() < 3 || body.compare(0, 2, U"##") != 0)
          throw std::logic_error("tokenizer returned a continuation piece without '##'");
        body.erase(0, 2);
      }
      const auto len = static_cast<std::int64_t>(body.size());
      if (len == 0 || cursor + len > w.end ||
          text.compare(static_cast<std::size_t>(cursor), body.size(), body) != 0)
        throw std::logic_error("tokenizer pieces do not reconstruct the word");
      a.tokens.push_back(Token{utf8_encode(body), cont, cursor, cursor + len, w.index});
      cursor += len;
    }
    if (cursor != w.end || pieces.empty())
      throw std::logic_error("tokenizer pieces do not cover the word");
  }
  a.word_offsets.push_back(a.tokens.size());
  return a;
}

// A unit takes technique t when its character range overlaps a gold span of
// t; among several overlapping spans the shortest wins, then the later start,
// then the later list position. Units overlapping nothing get O.
inline std::vector<LabelId> project_gold(const TokenAlignment& alignment,
                                         const std::vector<TechniqueSpan>& gold, UnitLevel level) {
  const std::vector<Range> units = alignment.unit_ranges(level);
  std::vector<LabelId> labels(units.size(), kOutside);
  for (std::size_t u = 0; u < units.size(); ++u) {
    const TechniqueSpan* best = nullptr;
    for (const TechniqueSpan& g : gold) {
      const std::int64_t lo = std::max(units[u].start, g.start);
      const std::int64_t hi = std::min(units[u].end, g.end);
      if (hi <= lo) continue;
      if (!best || g.length() < best->length() ||
          (g.length() == best->length() && g.start >= best->start))
        best = &g;
    }
    if (best) labels[u] = best->technique;
  }
  return labels;
}

}  // namespace spantag
