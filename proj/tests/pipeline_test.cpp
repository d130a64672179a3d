#include <gtest/gtest.h>

#include "spantag/pipeline.hpp"
#include "spantag/synthetic.hpp"
#include "test_support.hpp"

namespace spantag {
namespace {

TEST(RunConfig, LoadResolvesPathsAgainstConfigDirectory) {
  const RunConfig c = RunConfig::load(testing::data_dir() / "synthetic" / "config.json");
  EXPECT_TRUE(std::filesystem::exists(c.labels));
  EXPECT_TRUE(std::filesystem::exists(c.vocab));
  EXPECT_EQ(c.effective_strategy(), Strategy::TokenToWordFirst);
  EXPECT_TRUE(c.effective_genre());
  EXPECT_EQ(c.embedding.dim, 768u);
  EXPECT_EQ(c.seed, 13u);
  c.validate();
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW(RunConfig::from_json(json{{"bogus", 1}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"strategy", "sideways"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"hyperparams", {{"momentum", 0.9}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"seed", "thirteen"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"strategy", "word"}, {"unit_level", "token"}}), ConfigError);
  EXPECT_NO_THROW(RunConfig::from_json(json{{"strategy", "word"}, {"unit_level", "word"}}));

  RunConfig zero_epochs = RunConfig::from_json(json{{"hyperparams", {{"epochs", 0}}}});
  zero_epochs.labels = testing::data_dir() / "techniques.txt";
  EXPECT_THROW(zero_epochs.validate(), ConfigError);

  RunConfig missing;
  missing.labels = "/nonexistent/labels.txt";
  EXPECT_THROW(missing.validate(), ConfigError);
}

TEST(RunConfig, ModelJsonHasNoPaths) {
  RunConfig a = RunConfig::load(testing::data_dir() / "synthetic" / "config.json");
  RunConfig b = a;
  b.labels = "/elsewhere/techniques.txt";
  b.vocab = "/elsewhere/vocab.txt";
  EXPECT_EQ(a.model_json(), b.model_json());
  EXPECT_NE(a.to_json(), b.to_json());
}

TEST(Seeds, SubSeedsAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (SeedStream s : {SeedStream::Init, SeedStream::Shuffle, SeedStream::Folds, SeedStream::Embedding,
                       SeedStream::GradCheck})
    seen.insert(derive_seed(13, s));
  EXPECT_EQ(seen.size(), 5u);
  EXPECT_EQ(derive_seed(13, SeedStream::Init), derive_seed(13, SeedStream::Init));
  EXPECT_NE(derive_seed(13, SeedStream::Init), derive_seed(14, SeedStream::Init));
}

TEST(FoldAssignment, BalancedDeterministicAndValidated) {
  const auto f = fold_assignment(23, 5, 7);
  std::vector<std::size_t> sizes(5, 0);
  for (std::size_t x : f) ++sizes.at(x);
  for (std::size_t s : sizes) EXPECT_TRUE(s == 4 || s == 5);
  EXPECT_EQ(f, fold_assignment(23, 5, 7));
  EXPECT_NE(f, fold_assignment(23, 5, 8));
  EXPECT_THROW(fold_assignment(23, 1, 7), ConfigError);
  EXPECT_THROW(fold_assignment(23, 0, 7), ConfigError);
  EXPECT_THROW(fold_assignment(3, 4, 7), ConfigError);
}

TEST(Grid, DefaultsAndParsing) {
  const Grid d;
  EXPECT_EQ(d.learning_rates, (std::vector<double>{1e-3, 1e-2, 1e-1}));
  EXPECT_EQ(d.batch_sizes, (std::vector<std::size_t>{16, 32}));
  EXPECT_EQ(d.epochs, (std::vector<std::size_t>{3, 10, 30}));
  const Grid g = Grid::from_json(json{{"epochs", {30, 3}}});
  EXPECT_EQ(g.epochs, (std::vector<std::size_t>{3, 30}));
  EXPECT_THROW(Grid::from_json(json{{"epochs", json::array()}}), ConfigError);
  EXPECT_THROW(Grid::from_json(json{{"learning_rate", {-1.0}}}), ConfigError);
}

struct Suite {
  RunConfig config;
  LabelSet labels;
  Corpus corpus;
  std::vector<PreparedSnippet> prepared;
};

Suite small_suite(std::size_t snippets, std::size_t dim) {
  Suite s;
  s.labels = testing::task_labels();
  s.config.labels = testing::data_dir() / "techniques.txt";
  s.config.embedding.dim = dim;
  const auto lex = synthetic::make_lexicon(s.labels, 51);
  synthetic::CorpusOptions opt;
  opt.snippets = snippets;
  s.corpus = synthetic::make_corpus(lex, 52, opt);
  const auto tok = lex.tokenizer();
  s.prepared = prepare(s.corpus, tok, HashEmbeddingProvider(s.config.embedding_seed(), dim));
  return s;
}

TEST(Tune, SingleCellIsSelected) {
  const Suite s = small_suite(30, 32);
  Grid g;
  g.learning_rates = {0.5};
  g.batch_sizes = {8};
  g.epochs = {2};
  const TuneReport r = tune(s.config, s.corpus, s.prepared, s.labels, g, 3);
  ASSERT_EQ(r.cells.size(), 1u);
  EXPECT_EQ(r.best, 0u);
  EXPECT_EQ(r.cells[0].fold_f1.size(), 3u);
  EXPECT_EQ(r.best_hyperparams(13).learning_rate, 0.5);
}

TEST(Tune, SeparatingCellBeatsStalledAndDivergingCells) {
  const Suite s = small_suite(80, 128);
  Grid g;
  g.learning_rates = {1e-3, 200.0, 1e308};
  g.batch_sizes = {16};
  g.epochs = {30};
  const TuneReport r = tune(s.config, s.corpus, s.prepared, s.labels, g, 2);
  ASSERT_EQ(r.cells.size(), 3u);
  EXPECT_EQ(r.cells[r.best].learning_rate, 200.0);
  EXPECT_GT(r.cells[r.best].mean_f1, 0.4);
  EXPECT_TRUE(r.cells[2].diverged);
  EXPECT_EQ(r.cells[2].mean_f1, 0.0);
  EXPECT_LT(r.cells[0].mean_f1, r.cells[r.best].mean_f1);
}

// Scoring after epoch e inside a longer run must equal a fresh e-epoch run.
TEST(Tune, SharedRunsMatchIndependentRuns) {
  const Suite s = small_suite(24, 32);
  Grid g;
  g.learning_rates = {20.0};
  g.batch_sizes = {4};
  g.epochs = {1, 3};
  const TuneReport shared = tune(s.config, s.corpus, s.prepared, s.labels, g, 2);
  for (std::size_t e : g.epochs) {
    Grid one = g;
    one.epochs = {e};
    const TuneReport alone = tune(s.config, s.corpus, s.prepared, s.labels, one, 2);
    const auto& cell = shared.cells[e == 1 ? 0 : 1];
    EXPECT_EQ(cell.fold_f1, alone.cells[0].fold_f1);
  }
  EXPECT_EQ(tune(s.config, s.corpus, s.prepared, s.labels, g, 2).to_json(), shared.to_json());
}

TEST(Tune, TiesKeepTheFirstCell) {
  const Suite s = small_suite(12, 16);
  Grid g;
  g.learning_rates = {1e-9, 2e-9};
  g.batch_sizes = {4};
  g.epochs = {1};
  const TuneReport r = tune(s.config, s.corpus, s.prepared, s.labels, g, 2);
  EXPECT_EQ(r.cells[0].mean_f1, r.cells[1].mean_f1);
  EXPECT_EQ(r.best, 0u);
}

TEST(Ablate, SingleStrategyGivesTwoCells) {
  Suite s = small_suite(40, 64);
  s.config.hyperparams.epochs = 5;
  const AblationResult r =
      ablate(s.config, s.corpus, s.prepared, s.corpus, s.prepared, s.labels, {Strategy::WordToWord});
  ASSERT_EQ(r.runs.size(), 2u);
  const std::string table = r.table();
  EXPECT_NE(table.find("| Approach | with Genre | without Genre |"), std::string::npos);
  EXPECT_NE(table.find("Word-to-Word"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
  for (const auto& run : r.runs) EXPECT_EQ(run.loss_history.size(), 5u);
  const json curves = r.curves_json();
  EXPECT_EQ(curves.size(), 2u);
  EXPECT_TRUE(curves[0].contains("epochs_to_converge"));
}

TEST(Ablate, FailingCellIsNamed) {
  Suite s = small_suite(10, 16);
  s.config.class_weights = {1.0};  // wrong length
  try {
    ablate(s.config, s.corpus, s.prepared, s.corpus, s.prepared, s.labels, {Strategy::TokenToToken});
    FAIL() << "expected AblationCellFailed";
  } catch (const AblationCellFailed& e) {
    EXPECT_NE(std::string(e.what()).find("token, with genre"), std::string::npos) << e.what();
  }
}

TEST(Ablate, EpochsToConverge) {
  EXPECT_EQ(AblationResult::epochs_to_converge({}), 0u);
  EXPECT_EQ(AblationResult::epochs_to_converge({1.0}), 1u);
  EXPECT_EQ(AblationResult::epochs_to_converge({2.0, 1.0, 0.1, 0.05, 0.0}), 3u);
  EXPECT_EQ(AblationResult::epochs_to_converge({2.0, 0.0, 0.0}), 2u);
}

}  // namespace
}  // namespace spantag
