#include <gtest/gtest.h>

#include "spantag/repair.hpp"
#include "spantag/rng.hpp"
#include "spantag/synthetic.hpp"
#include "test_support.hpp"

namespace spantag {
namespace {

Text random_text(Rng& rng, std::size_t max_len) {
  static const std::vector<char32_t> alphabet = {U'a', U'b', U'@', U' ', U'\t', 0x0627, 0x0644, 0x200F, 0x202C,
                                                 0x202D, 0xFEFF, 0xE000, 0x10FFFD, 0x1F600, U'U', U'S'};
  Text t;
  const std::size_t n = rng.below(max_len + 1);
  for (std::size_t i = 0; i < n; ++i) t.push_back(alphabet[rng.below(alphabet.size())]);
  return t;
}

TEST(Utf8, RoundTripsRandomCodePoints) {
  Rng rng(1);
  for (int iter = 0; iter < 200; ++iter) {
    Text t;
    for (std::size_t i = 0, n = rng.below(20); i < n; ++i) {
      char32_t cp;
      do cp = static_cast<char32_t>(rng.below(0x110000));
      while (cp >= 0xD800 && cp <= 0xDFFF);
      t.push_back(cp);
    }
    EXPECT_EQ(utf8_decode(utf8_encode(t)), t);
  }
  EXPECT_THROW(utf8_decode("\xC0\x80"), Utf8Error);  // overlong
  EXPECT_THROW(utf8_decode("\xED\xA0\x80"), Utf8Error);  // surrogate
}

TEST(UnicodeCategories, FormatAndPrivateUse) {
  for (char32_t c : {0x200Fu, 0x202Cu, 0x202Du, 0xFEFFu, 0x00ADu, 0x061Cu, 0xE0001u}) EXPECT_TRUE(is_format_char(c)) << static_cast<unsigned>(c);
  for (char32_t c : {0x0627u, 0x0020u, 0x200Au, 0x2065u}) EXPECT_FALSE(is_format_char(c)) << static_cast<unsigned>(c);
  EXPECT_TRUE(is_private_use(0xE000));
  EXPECT_TRUE(is_private_use(0x10FFFD));
  EXPECT_FALSE(is_private_use(0xFFFE));
}

TEST(ScrubUnicode, Examples) {
  EXPECT_EQ(scrub_unicode(U"a‏b"), U"a b");
  EXPECT_EQ(scrub_unicode(U"abc"), U"abc");
  const Text dirty = U"(‬الهيروين‭)";
  const Text clean = scrub_unicode(dirty);
  EXPECT_EQ(clean.size(), dirty.size());
  EXPECT_EQ(clean, U"( الهيروين )");
}

TEST(ScrubUnicode, IdempotentAndLengthPreserving) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const Text t = random_text(rng, 30);
    const Text once = scrub_unicode(t);
    EXPECT_EQ(once.size(), t.size());
    EXPECT_EQ(scrub_unicode(once), once);
    for (std::size_t k = 0; k < t.size(); ++k)
      if (!is_format_char(t[k]) && !is_private_use(t[k])) EXPECT_EQ(once[k], t[k]);
  }
}

TEST(NormalizeMention, Examples) {
  EXPECT_EQ(normalize_mention_surface(U"@someuser said X"), U"@USER said X");
  EXPECT_EQ(normalize_mention_surface(U"@USER said X"), U"@USER said X");
  EXPECT_EQ(normalize_mention_surface(U"reply to @a and @b"), U"reply to @USER and @USER");
  EXPECT_EQ(normalize_mention_surface(U"a @ b"), U"a @ b");
  EXPECT_EQ(normalize_mention_surface(U"@x@y"), U"@USER@USER");
}

TEST(NormalizeMention, Idempotent) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const Text once = normalize_mention_surface(random_text(rng, 25));
    EXPECT_EQ(normalize_mention_surface(once), once);
  }
}

TEST(RealignSpan, Examples) {
  EXPECT_EQ(realign_span(U"xx ABC yy", U"ABC", 78), (Range{3, 6}));
  EXPECT_EQ(realign_span(U"ABC z ABC", U"ABC", 5), (Range{6, 9}));
  EXPECT_EQ(realign_span(U"ABC", U"XYZ", 0), std::nullopt);
  EXPECT_EQ(realign_span(U"ABC", U"", 0), std::nullopt);
}

TEST(RealignSpan, TiesPreferEarlierStart) {
  // Occurrences at 0 and 4, reported start 2: equal distance.
  EXPECT_EQ(realign_span(U"ab  ab", U"ab", 2), (Range{0, 2}));
}

// Nearest occurrence against an exhaustive scan of every start position.
TEST(RealignSpan, MatchesExhaustiveScan) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    Text text;
    for (std::size_t k = 0, n = rng.below(20); k < n; ++k) text.push_back(U"ab"[rng.below(2)]);
    Text surface;
    for (std::size_t k = 0, n = 1 + rng.below(3); k < n; ++k) surface.push_back(U"ab"[rng.below(2)]);
    const auto reported = static_cast<std::int64_t>(rng.below(25));
    std::optional<Range> expect;
    for (std::size_t s = 0; s + surface.size() <= text.size(); ++s) {
      if (text.substr(s, surface.size()) != surface) continue;
      const auto st = static_cast<std::int64_t>(s);
      if (!expect || std::llabs(st - reported) < std::llabs(expect->start - reported))
        expect = Range{st, st + static_cast<std::int64_t>(surface.size())};
    }
    EXPECT_EQ(realign_span(text, surface, reported), expect);
  }
}

Snippet make_snippet(std::string id, Text text, std::vector<TechniqueSpan> spans, Genre g = Genre::Paragraph) {
  return Snippet{std::move(id), g, std::move(text), std::move(spans)};
}

TEST(RepairCorpus, ReportedSpanBeyondShortText) {
  Text text(69, U'x');
  const Text surface = U"كلام فارغ";
  text.replace(10, surface.size(), surface);
  ASSERT_EQ(text.size(), 69u);
  const auto r = repair_corpus({make_snippet("s", text, {{1, 78, 88, surface}})}, {});
  ASSERT_EQ(r.corpus.size(), 1u);
  const TechniqueSpan& span = r.corpus[0].gold_spans[0];
  EXPECT_EQ(span.start, 10);
  EXPECT_EQ(span.end, 10 + static_cast<std::int64_t>(surface.size()));
  ASSERT_EQ(r.report.snippets[0].actions.size(), 1u);
  const RepairAction& a = r.report.snippets[0].actions[0];
  EXPECT_EQ(a.kind, RepairAction::Kind::Realigned);
  EXPECT_EQ(a.old_start, 78);
  EXPECT_EQ(a.new_start, 10);
}

TEST(RepairCorpus, MentionNormalizationThenSearch) {
  const Text text = U"قال @USER إنهم خونة";
  const auto r = repair_corpus({make_snippet("m", text, {{2, 0, 17, U"@ahmed_99 إنهم خونة"}}, Genre::Tweet)}, {});
  ASSERT_EQ(r.corpus.size(), 1u);
  const TechniqueSpan& span = r.corpus[0].gold_spans[0];
  EXPECT_EQ(span.surface, U"@USER إنهم خونة");
  EXPECT_EQ(slice(text, span.start, span.end), span.surface);
  EXPECT_EQ(r.report.count(RepairAction::Kind::MentionNormalized), 1u);
  EXPECT_EQ(r.report.count(RepairAction::Kind::Realigned), 1u);
}

TEST(RepairCorpus, ScrubsTextAndSurface) {
  const Text text = U"one‏two three";
  const auto r = repair_corpus({make_snippet("s", text, {{1, 0, 7, U"one‬two"}})}, {});
  ASSERT_EQ(r.corpus.size(), 1u);
  EXPECT_EQ(r.corpus[0].text, U"one two three");
  EXPECT_EQ(r.corpus[0].gold_spans[0].surface, U"one two");
  ASSERT_EQ(r.report.snippets[0].actions.size(), 1u);
  EXPECT_EQ(r.report.snippets[0].actions[0].kind, RepairAction::Kind::ScrubbedChars);
  EXPECT_EQ(r.report.snippets[0].actions[0].count, 1);
}

TEST(RepairCorpus, CleanCorpusIsFixedPoint) {
  const LabelSet labels = testing::task_labels();
  const auto lex = synthetic::make_lexicon(labels, 5);
  const Corpus clean = synthetic::make_corpus(lex, 6);
  const auto r = repair_corpus(clean, {});
  EXPECT_EQ(r.corpus, clean);
  EXPECT_EQ(r.report.action_count(), 0u);
  EXPECT_EQ(r.report.to_jsonl(), "");
}

TEST(RepairCorpus, LedgerFixesWhatSearchCannot) {
  const Text text = U"حول (الهيروين) هنا";
  // Parentheses reversed in the annotation: no substring match.
  OverrideLedger ledger;
  ledger.add("h", 0, OverrideEntry{4, 14, U"(الهيروين)"});
  const Snippet raw = make_snippet("h", text, {{1, 4, 14, U")الهيروين("}});
  const auto fixed = repair_corpus({raw}, ledger);
  ASSERT_EQ(fixed.corpus.size(), 1u);
  EXPECT_EQ(fixed.corpus[0].gold_spans[0].surface, U"(الهيروين)");
  EXPECT_EQ(fixed.report.count(RepairAction::Kind::OverrideApplied), 1u);

  const auto dropped = repair_corpus({raw}, {});
  EXPECT_TRUE(dropped.corpus.empty());
  EXPECT_TRUE(dropped.report.snippets[0].excluded);
  EXPECT_TRUE(dropped.report.any_unrepairable());

  OverrideLedger wrong;
  wrong.add("h", 0, OverrideEntry{0, 3, U"xyz"});
  EXPECT_TRUE(repair_corpus({raw}, wrong).corpus.empty());
}

TEST(RepairCorpus, IdempotentOnRepairedOutput) {
  const LabelSet labels = testing::task_labels();
  const auto lex = synthetic::make_lexicon(labels, 7);
  synthetic::CorpusOptions opt;
  opt.snippets = 100;
  opt.tweet_fraction = 0.5;
  opt.mention_span_rate = 0.5;
  const Corpus damaged = synthetic::inject_damage(synthetic::make_corpus(lex, 8, opt), 9);
  const auto first = repair_corpus(damaged, {});
  EXPECT_GT(first.report.action_count(), 0u);
  const auto second = repair_corpus(first.corpus, {});
  EXPECT_EQ(second.report.action_count(), 0u);
  EXPECT_EQ(second.corpus, first.corpus);
}

TEST(RepairCorpus, RecoversInjectedDamageForUniqueSurfaces) {
  const LabelSet labels = testing::task_labels();
  const auto lex = synthetic::make_lexicon(labels, 10);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    synthetic::CorpusOptions opt;
    opt.snippets = 60;
    opt.tweet_fraction = 0.5;
    opt.mention_span_rate = 0.5;
    const Corpus clean = synthetic::make_corpus(lex, 100 + seed, opt);
    const Corpus damaged = synthetic::inject_damage(clean, 200 + seed);
    const auto r = repair_corpus(damaged, {});
    ASSERT_EQ(r.corpus.size(), clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) {
      EXPECT_EQ(r.corpus[i].text, clean[i].text);
      for (std::size_t k = 0; k < clean[i].gold_spans.size(); ++k) {
        const TechniqueSpan& truth = clean[i].gold_spans[k];
        const TechniqueSpan& got = r.corpus[i].gold_spans[k];
        EXPECT_EQ(slice(r.corpus[i].text, got.start, got.end), got.surface);
        const std::size_t first = clean[i].text.find(truth.surface);
        if (clean[i].text.find(truth.surface, first + 1) == Text::npos) EXPECT_EQ(got, truth);
      }
    }
  }
}

TEST(OverrideLedger, LoadsJsonl) {
  auto dir = testing::fresh_dir("ledger");
  testing::write_text(dir / "l.jsonl", R"({"id": "h", "ann_index": 2, "start": 4, "end": 6, "text": "ab"})" "\n");
  const OverrideLedger l = OverrideLedger::load(dir / "l.jsonl");
  ASSERT_NE(l.find("h", 2), nullptr);
  EXPECT_EQ(l.find("h", 2)->surface, U"ab");
  EXPECT_EQ(l.find("h", 0), nullptr);
  testing::write_text(dir / "bad.jsonl", R"({"id": "h", "ann_index": -1, "start": 4, "end": 6, "text": "ab"})" "\n");
  EXPECT_THROW(OverrideLedger::load(dir / "bad.jsonl"), DataError);
}

TEST(RepairReport, SerializesActions) {
  const auto r = repair_corpus({make_snippet("s", U"xx ABC", {{1, 0, 3, U"ABC"}, {1, 0, 1, U"QQ"}})}, {});
  const json line = json::parse(r.report.to_jsonl());
  EXPECT_EQ(line["id"], "s");
  EXPECT_TRUE(line["excluded"].get<bool>());
  ASSERT_EQ(line["actions"].size(), 2u);
  EXPECT_EQ(line["actions"][0]["action"], "realigned");
  EXPECT_EQ(line["actions"][0]["new_start"], 3);
  EXPECT_EQ(line["actions"][1]["action"], "unrepairable");
  EXPECT_EQ(line["actions"][1]["ann_index"], 1);
}

}  // namespace
}  // namespace spantag
