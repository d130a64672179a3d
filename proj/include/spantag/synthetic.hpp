#pragma once

// Synthetic annotated corpora whose token labels are a function of the token
// text, so a linear tagger over hash embeddings can separate them. Words are
// built from Arabic-letter subword pieces; every technique owns its own
// pieces and filler (O) words use a disjoint set.
//
// Also: damage injection mirroring the defects the repair pipeline handles
// (shifted offsets, Cf/Co code points, renamed @-mentions).

#include <algorithm>
#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "spantag/corpus.hpp"
#include "spantag/repair.hpp"
#include "spantag/rng.hpp"
#include "spantag/segment.hpp"

namespace spantag::synthetic {

inline const Text& arabic_letters() {
  static const Text letters = [] {
    Text t;
    for (char32_t c = 0x0628; c <= 0x063A; ++c) t.push_back(c);
    for (char32_t c = 0x0641; c <= 0x064A; ++c) t.push_back(c);
    return t;
  }();
  return letters;
}

struct Lexicon {
  // technique_words[t] for t in 1..L-1; index 0 unused.
  std::vector<std::vector<Text>> technique_words;
  std::vector<Text> filler_words;
  // Vocabulary file lines: word-initial pieces, then "##" pieces.
  std::vector<Text> vocab;

  VocabTokenizer tokenizer() const { return VocabTokenizer(vocab); }
};

struct LexiconOptions {
  std::size_t words_per_technique = 3;
  std::size_t filler_words = 60;
  std::size_t max_pieces = 3;
};

inline Lexicon make_lexicon(const LabelSet& labels, std::uint64_t seed, const LexiconOptions& opt = {}) {
  Rng rng(seed);
  const Text& alphabet = arabic_letters();
  std::set<Text> used;
  auto fresh_piece = [&] {
    for (;;) {
      Text p;
      for (std::size_t i = 0; i < 2; ++i) p.push_back(alphabet[rng.below(alphabet.size())]);
      if (used.insert(p).second) return p;
    }
  };

  Lexicon lex;
  std::vector<Text> initial, continuation;
  auto make_word = [&] {
    const std::size_t pieces = 1 + static_cast<std::size_t>(rng.below(opt.max_pieces));
    Text word = fresh_piece();
    initial.push_back(word);
    for (std::size_t i = 1; i < pieces; ++i) {
      Text p = fresh_piece();
      continuation.push_back(p);
      word += p;
    }
    return word;
  };
  lex.technique_words.resize(labels.size());
  for (LabelId t = 1; t < labels.size(); ++t)
    for (std::size_t i = 0; i < opt.words_per_technique; ++i) lex.technique_words[t].push_back(make_word());
  for (std::size_t i = 0; i < opt.filler_words; ++i) lex.filler_words.push_back(make_word());
  lex.vocab = initial;
  for (const Text& c : continuation) lex.vocab.push_back(U"##" + c);
  return lex;
}

struct CorpusOptions {
  std::size_t snippets = 200;
  double tweet_fraction = 0.2;
  // Probability that a span in a tweet begins with an "@USER" word.
  double mention_span_rate = 0.0;
  std::string id_prefix = "syn";
};

inline Corpus make_corpus(const Lexicon& lex, std::uint64_t seed, const CorpusOptions& opt = {}) {
  Rng rng(seed);
  const std::size_t techniques = lex.technique_words.size() - 1;
  Corpus corpus;
  corpus.reserve(opt.snippets);
  for (std::size_t n = 0; n < opt.snippets; ++n) {
    Snippet s;
    s.id = opt.id_prefix + "-" + std::to_string(n);
    s.genre = rng.uniform() < opt.tweet_fraction ? Genre::Tweet : Genre::Paragraph;
    const bool tweet = s.genre == Genre::Tweet;
    const std::size_t filler = tweet ? 6 + rng.below(9) : 16 + rng.below(19);
    const std::size_t span_count = rng.below(tweet ? 3 : 4);

    // Spans go into distinct gaps of the filler sequence, so two spans are
    // always separated by at least one filler word.
    std::vector<std::size_t> gaps = rng.permutation(filler + 1);
    gaps.resize(std::min(span_count, gaps.size()));
    std::sort(gaps.begin(), gaps.end());

    std::vector<Text> words;
    struct Pending {
      LabelId technique;
      std::size_t first_word, last_word;
    };
    std::vector<Pending> pending;
    if (tweet && rng.uniform() < 0.5) words.push_back(U"@USER");
    std::size_t next_gap = 0;
    for (std::size_t i = 0; i <= filler; ++i) {
      while (next_gap < gaps.size() && gaps[next_gap] == i) {
        const auto t = static_cast<LabelId>(1 + rng.below(techniques));
        const std::size_t first = words.size();
        if (tweet && rng.uniform() < opt.mention_span_rate) words.push_back(U"@USER");
        const std::size_t len = 1 + rng.below(3);
        for (std::size_t k = 0; k < len; ++k)
          words.push_back(lex.technique_words[t][rng.below(lex.technique_words[t].size())]);
        pending.push_back({t, first, words.size() - 1});
        ++next_gap;
      }
      if (i < filler) words.push_back(lex.filler_words[rng.below(lex.filler_words.size())]);
    }

    std::vector<std::int64_t> starts;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) s.text.push_back(U' ');
      starts.push_back(static_cast<std::int64_t>(s.text.size()));
      s.text += words[i];
    }
    for (const Pending& p : pending) {
      TechniqueSpan span;
      span.technique = p.technique;
      span.start = starts[p.first_word];
      span.end = starts[p.last_word] + static_cast<std::int64_t>(words[p.last_word].size());
      span.surface = *slice(s.text, span.start, span.end);
      s.gold_spans.push_back(std::move(span));
    }
    corpus.push_back(std::move(s));
  }
  return corpus;
}

inline constexpr std::array<char32_t, 8> kDamageChars = {0x200F, 0x202C, 0x202D, 0xFEFF,
                                                         0x200B, 0x2066, 0xE000, 0xF8FF};

struct DamageOptions {
  double shift_rate = 0.7;    // per annotation: move start by +-1..20
  double scrub_rate = 0.5;    // per snippet: replace spaces with Cf/Co
  double mention_rate = 0.9;  // per annotation containing @USER: rename it
};

// Damaged copy of a clean corpus. Text length never changes: Cf/Co code
// points only replace spaces, so scrubbing restores the clean text.
inline Corpus inject_damage(const Corpus& clean, std::uint64_t seed, const DamageOptions& opt = {}) {
  Rng rng(seed);
  auto damage_spaces = [&](Text& t) {
    std::vector<std::size_t> spaces;
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t[i] == U' ') spaces.push_back(i);
    if (spaces.empty()) return;
    const std::size_t n = 1 + rng.below(std::min<std::size_t>(3, spaces.size()));
    for (std::size_t k = 0; k < n; ++k) t[spaces[rng.below(spaces.size())]] = kDamageChars[rng.below(kDamageChars.size())];
  };
  auto random_handle = [&] {
    static const std::string chars = "abcdefghijklmnopqrstuvwxyz0123456789_";
    Text h = U"@";
    const std::size_t n = 3 + rng.below(8);
    for (std::size_t i = 0; i < n; ++i) h.push_back(static_cast<char32_t>(chars[rng.below(chars.size())]));
    if (h == U"@USER") h += U"x";
    return h;
  };

  Corpus out = clean;
  for (Snippet& s : out) {
    if (rng.uniform() < opt.scrub_rate) damage_spaces(s.text);
    for (TechniqueSpan& span : s.gold_spans) {
      if (rng.uniform() < opt.shift_rate) {
        const std::int64_t delta = static_cast<std::int64_t>(1 + rng.below(20)) * (rng.below(2) ? 1 : -1);
        const std::int64_t len = span.length();
        span.start = std::max<std::int64_t>(0, span.start + delta);
        span.end = span.start + len;
      }
      if (rng.uniform() < opt.scrub_rate / 2) damage_spaces(span.surface);
      if (span.surface.find(U"@USER") != Text::npos && rng.uniform() < opt.mention_rate) {
        for (std::size_t p = span.surface.find(U"@USER"); p != Text::npos; p = span.surface.find(U"@USER", p + 1)) {
          const Text h = random_handle();
          span.surface.replace(p, 5, h);
          p += h.size() - 1;
        }
      }
    }
  }
  return out;
}

}  // namespace spantag::synthetic
