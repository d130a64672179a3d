#include <gtest/gtest.h>

#include "spantag/rng.hpp"
#include "spantag/segment.hpp"
#include "spantag/tagger.hpp"

namespace spantag {
namespace {

std::vector<std::pair<std::int64_t, std::int64_t>> pairs(const std::vector<WordSpan>& ws) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (const auto& w : ws) out.emplace_back(w.start, w.end);
  return out;
}

using Pairs = std::vector<std::pair<std::int64_t, std::int64_t>>;

TEST(SegmentWords, Examples) {
  EXPECT_EQ(pairs(segment_words(U"ab cd")), (Pairs{{0, 2}, {3, 5}}));
  EXPECT_TRUE(segment_words(U"").empty());
  EXPECT_EQ(pairs(segment_words(U"  x  ")), (Pairs{{2, 3}}));
  // U+00A0 and U+3000 are White_Space; U+200B is not.
  EXPECT_EQ(pairs(segment_words(U"a b　c​d")), (Pairs{{0, 1}, {2, 3}, {4, 7}}));
}

TEST(VocabTokenizer, GreedyLongestMatch) {
  const VocabTokenizer tok({U"ab", U"##c"});
  EXPECT_EQ(tok.split(U"abc"), (std::vector<Text>{U"ab", U"##c"}));
  const TokenAlignment a = align(U"abc", tok);
  ASSERT_EQ(a.tokens.size(), 2u);
  EXPECT_EQ(a.tokens[0].text, "ab");
  EXPECT_EQ(a.tokens[1].piece(), "##c");
  EXPECT_EQ(a.token_ranges(), (std::vector<Range>{{0, 2}, {2, 3}}));
}

TEST(VocabTokenizer, FallsBackToSingleCharacters) {
  const VocabTokenizer tok({U"ab"});
  EXPECT_EQ(tok.split(U"xab"), (std::vector<Text>{U"x", U"##a", U"##b"}));
  EXPECT_EQ(VocabTokenizer().split(U"كتب"), (std::vector<Text>{U"ك", U"##ت", U"##ب"}));
}

TEST(Align, ThreeSubwordWord) {
  const VocabTokenizer tok({U"كت", U"##ا", U"##بون"});
  const TokenAlignment a = align(U"كتابون", tok);
  ASSERT_EQ(a.tokens.size(), 3u);
  for (const Token& t : a.tokens) EXPECT_EQ(t.word_index, 0u);
  EXPECT_EQ(a.token_count(0), 3u);
}

TEST(Align, TrivialTokenizerOneTokenPerWord) {
  const TokenAlignment a = align(U"a b c d", WholeWordTokenizer());
  EXPECT_EQ(a.tokens.size(), 4u);
  EXPECT_EQ(a.words.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.tokens[i].word_index, i);
}

class BadTokenizer final : public SubwordTokenizer {
 public:
  std::vector<Text> split(const Text& word) const override { return {word + U"x"}; }
};

TEST(Align, RejectsPiecesThatDoNotReconstructTheWord) {
  EXPECT_THROW(align(U"ab", BadTokenizer()), std::logic_error);
}

Text random_text(Rng& rng) {
  static const Text chars = U"abcd  \tكتب";
  Text t;
  for (std::size_t i = 0, n = rng.below(30); i < n; ++i) t.push_back(chars[rng.below(chars.size())]);
  return t;
}

TEST(Align, InvariantsHoldOnRandomText) {
  Rng rng(11);
  const VocabTokenizer tok({U"ab", U"abc", U"##cd", U"##d", U"كت", U"##ب"});
  for (int iter = 0; iter < 1000; ++iter) {
    const Text text = random_text(rng);
    const TokenAlignment a = align(text, tok);
    ASSERT_EQ(a.word_offsets.size(), a.words.size() + 1);
    EXPECT_GE(a.tokens.size(), a.words.size());
    std::size_t total = 0;
    for (std::size_t w = 0; w < a.words.size(); ++w) {
      EXPECT_GE(a.token_count(w), 1u);
      total += a.token_count(w);
      std::int64_t cursor = a.words[w].start;
      for (std::size_t k = a.first_token(w); k < a.first_token(w) + a.token_count(w); ++k) {
        const Token& t = a.tokens[k];
        EXPECT_EQ(t.word_index, w);
        EXPECT_EQ(t.start, cursor);
        EXPECT_LT(t.start, t.end);
        EXPECT_LE(t.end, a.words[w].end);
        EXPECT_EQ(t.continuation, k != a.first_token(w));
        EXPECT_EQ(utf8_encode(*slice(text, t.start, t.end)), t.text);
        cursor = t.end;
      }
      EXPECT_EQ(cursor, a.words[w].end);
      if (w) {
        EXPECT_LT(a.words[w - 1].end, a.words[w].start);
      }
    }
    EXPECT_EQ(total, a.tokens.size());
  }
}

TEST(ProjectGold, Examples) {
  const Text text = U"w0 w1 w2 w3 w4 w5";
  const TokenAlignment a = align(text, WholeWordTokenizer());
  EXPECT_EQ(project_gold(a, {}, UnitLevel::Word), (std::vector<LabelId>(6, kOutside)));
  const std::vector<TechniqueSpan> gold = {{3, 6, 14, U"w2 w3 w4"}};
  EXPECT_EQ(project_gold(a, gold, UnitLevel::Word), (std::vector<LabelId>{0, 0, 3, 3, 3, 0}));
}

TEST(ProjectGold, NestedSpanShortestWins) {
  const Text text = U"w0 w1 w2 w3";
  const TokenAlignment a = align(text, WholeWordTokenizer());
  const TechniqueSpan outer{1, 0, 11, *slice(text, 0, 11)};
  const TechniqueSpan inner{2, 3, 5, *slice(text, 3, 5)};
  EXPECT_EQ(project_gold(a, {outer, inner}, UnitLevel::Word), (std::vector<LabelId>{1, 2, 1, 1}));
  EXPECT_EQ(project_gold(a, {inner, outer}, UnitLevel::Word), (std::vector<LabelId>{1, 2, 1, 1}));
}

TEST(ProjectGold, EqualLengthPrefersLaterStart) {
  const Text text = U"abcdef";
  const TokenAlignment a = align(text, WholeWordTokenizer());
  const TechniqueSpan left{1, 0, 3, U"abc"};
  const TechniqueSpan right{2, 2, 5, U"cde"};
  EXPECT_EQ(project_gold(a, {left, right}, UnitLevel::Word), (std::vector<LabelId>{2}));
  EXPECT_EQ(project_gold(a, {right, left}, UnitLevel::Word), (std::vector<LabelId>{2}));
}

TEST(ProjectGold, MidWordSpanLabelsOverlappingTokens) {
  const VocabTokenizer tok({U"ab", U"##cd"});
  const TokenAlignment a = align(U"abcd x", tok);
  const std::vector<TechniqueSpan> gold = {{1, 3, 6, U"d x"}};
  EXPECT_EQ(project_gold(a, gold, UnitLevel::Token), (std::vector<LabelId>{0, 1, 1}));
  EXPECT_EQ(project_gold(a, gold, UnitLevel::Word), (std::vector<LabelId>{1, 1}));
}

struct RandomCase {
  Text text;
  TokenAlignment alignment;
  std::vector<TechniqueSpan> gold;
};

// Random text, random multi-piece words, and non-overlapping word-aligned
// spans in which adjacent spans never share a technique.
RandomCase random_word_aligned_case(Rng& rng) {
  const VocabTokenizer tok({U"ab", U"##ab", U"c"});
  RandomCase c;
  const std::size_t words = 1 + rng.below(12);
  for (std::size_t w = 0; w < words; ++w) {
    if (w) c.text += rng.below(2) ? U" " : U"  ";
    for (std::size_t k = 0, n = 1 + rng.below(5); k < n; ++k) c.text.push_back(U"abc"[rng.below(3)]);
  }
  c.alignment = align(c.text, tok);
  std::size_t w = 0;
  LabelId previous = kOutside;
  while (w < words) {
    if (rng.below(2)) {
      ++w;
      previous = kOutside;
      continue;
    }
    const std::size_t len = 1 + rng.below(std::min<std::size_t>(3, words - w));
    LabelId t;
    do t = static_cast<LabelId>(1 + rng.below(3));
    while (t == previous);
    TechniqueSpan s{t, c.alignment.words[w].start, c.alignment.words[w + len - 1].end, {}};
    s.surface = *slice(c.text, s.start, s.end);
    c.gold.push_back(s);
    previous = t;
    w += len;
  }
  return c;
}

TEST(ProjectGold, WordLevelRoundTripsThroughDecode) {
  Rng rng(12);
  for (int iter = 0; iter < 1000; ++iter) {
    const RandomCase c = random_word_aligned_case(rng);
    const auto labels = project_gold(c.alignment, c.gold, UnitLevel::Word);
    EXPECT_EQ(decode_spans(labels, c.alignment.word_ranges(), c.text), c.gold);
  }
}

TEST(ProjectGold, WordLevelEqualsFirstTokenReduction) {
  Rng rng(13);
  for (int iter = 0; iter < 1000; ++iter) {
    const RandomCase c = random_word_aligned_case(rng);
    const auto words = project_gold(c.alignment, c.gold, UnitLevel::Word);
    const auto tokens = project_gold(c.alignment, c.gold, UnitLevel::Token);
    EXPECT_EQ(aggregate_to_words(tokens, c.alignment, Aggregation::First), words);
  }
}

}  // namespace
}  // namespace spantag
