#pragma once

// End-to-end wiring: run configuration, corpus preparation (alignment and
// embeddings), training, prediction, k-fold grid search and the
// strategy x genre ablation.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "spantag/corpus.hpp"
#include "spantag/embed.hpp"
#include "spantag/repair.hpp"
#include "spantag/rng.hpp"
#include "spantag/score.hpp"
#include "spantag/segment.hpp"
#include "spantag/tagger.hpp"

namespace spantag {

struct EmbeddingSource {
  enum class Kind { Hash, File };
  Kind kind = Kind::Hash;
  std::optional<std::uint64_t> seed;  // hash only; derived from the global seed when unset
  std::size_t dim = 768;              // hash only
  std::filesystem::path path;         // file only
};

// Unset optionals fall back to defaults at resolution time; `predict` also
// uses them to tell explicit settings from defaults when checking a model.
struct RunConfig {
  std::filesystem::path labels;
  std::filesystem::path vocab;  // empty: every word is one token
  EmbeddingSource embedding;
  std::optional<Strategy> strategy;
  std::optional<bool> use_genre;
  std::optional<Combine> combine;
  Hyperparams hyperparams;
  bool bias = false;
  ClassWeights class_weights;
  std::filesystem::path ledger;
  std::uint64_t seed = 13;

  Strategy effective_strategy() const { return strategy.value_or(Strategy::TokenToWordFirst); }
  bool effective_genre() const { return use_genre.value_or(true); }
  Combine effective_combine() const { return combine.value_or(Combine::Concat); }
  UnitLevel unit_level() const { return strategy_level(effective_strategy()); }

  std::uint64_t embedding_seed() const {
    return embedding.seed.value_or(derive_seed(seed, SeedStream::Embedding));
  }

  // Hyperparameters with the global seed filled in.
  Hyperparams effective_hyperparams() const {
    Hyperparams hp = hyperparams;
    hp.seed = seed;
    return hp;
  }

  TaggerConfig tagger_config() const { return {unit_level(), effective_genre(), effective_combine(), bias}; }

  void validate() const {
    hyperparams.validate();
    if (labels.empty()) throw ConfigError("no label file given (--labels or \"labels\" in the config)");
    auto must_exist = [](const std::filesystem::path& p, const char* what) {
      if (!p.empty() && !std::filesystem::exists(p))
        throw ConfigError(std::string(what) + " file does not exist: " + p.string());
    };
    must_exist(labels, "label");
    must_exist(vocab, "vocabulary");
    must_exist(ledger, "override ledger");
    if (embedding.kind == EmbeddingSource::Kind::File) {
      if (embedding.path.empty()) throw ConfigError("file embedding source needs a path");
      must_exist(embedding.path, "embedding");
    } else if (embedding.dim == 0) {
      throw ConfigError("embedding dimension must be at least 1");
    }
  }

  // Everything that determines a trained model; file paths are left out so
  // the same run in another directory produces the same bytes.
  json model_json() const {
    json emb = embedding.kind == EmbeddingSource::Kind::Hash
                   ? json{{"source", "hash"}, {"seed", embedding_seed()}, {"dim", embedding.dim}}
                   : json{{"source", "file"}};
    return {{"strategy", std::string(strategy_name(effective_strategy()))},
            {"unit_level", std::string(unit_level_name(unit_level()))},
            {"use_genre", effective_genre()},
            {"combine", std::string(combine_name(effective_combine()))},
            {"bias", bias},
            {"class_weights", class_weights},
            {"embedding", emb},
            {"hyperparams",
             {{"learning_rate", hyperparams.learning_rate},
              {"batch_size", hyperparams.batch_size},
              {"epochs", hyperparams.epochs}}},
            {"seed", seed}};
  }

  json to_json() const {
    json j = model_json();
    j["labels"] = labels.string();
    j["vocab"] = vocab.string();
    j["ledger"] = ledger.string();
    if (embedding.kind == EmbeddingSource::Kind::File) j["embedding"]["path"] = embedding.path.string();
    return j;
  }

  // Relative paths resolve against base_dir.
  static RunConfig from_json(const json& j, const std::filesystem::path& base_dir = {}) {
    RunConfig c;
    c.merge_json(j, base_dir);
    return c;
  }

  void merge_json(const json& j, const std::filesystem::path& base_dir = {}) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    auto path_of = [&](const json& v) {
      std::filesystem::path p = v.get<std::string>();
      return p.empty() || p.is_absolute() ? p : base_dir / p;
    };
    try {
      for (const auto& [key, v] : j.items()) {
        if (key == "labels") labels = path_of(v);
        else if (key == "vocab") vocab = path_of(v);
        else if (key == "ledger") ledger = path_of(v);
        else if (key == "seed") seed = v.get<std::uint64_t>();
        else if (key == "use_genre") use_genre = v.get<bool>();
        else if (key == "bias") bias = v.get<bool>();
        else if (key == "class_weights") class_weights = v.get<std::vector<double>>();
        else if (key == "strategy") {
          auto s = parse_strategy(v.get<std::string>());
          if (!s) throw ConfigError("unknown strategy '" + v.get<std::string>() + "'");
          strategy = *s;
        } else if (key == "combine") {
          auto cb = parse_combine(v.get<std::string>());
          if (!cb) throw ConfigError("unknown combine mode '" + v.get<std::string>() + "'");
          combine = *cb;
        } else if (key == "unit_level") {
          // Derived from the strategy; accepted only when consistent with it.
          const std::string lvl = v.get<std::string>();
          if (lvl != "token" && lvl != "word") throw ConfigError("unknown unit_level '" + lvl + "'");
          pending_unit_level = lvl;
        } else if (key == "hyperparams") {
          for (const auto& [hk, hv] : v.items()) {
            if (hk == "learning_rate") hyperparams.learning_rate = hv.get<double>();
            else if (hk == "batch_size") hyperparams.batch_size = hv.get<std::size_t>();
            else if (hk == "epochs") hyperparams.epochs = hv.get<std::size_t>();
            else throw ConfigError("unknown hyperparams key '" + hk + "'");
          }
        } else if (key == "embedding") {
          const std::string source = v.value("source", std::string("hash"));
          if (source == "hash") {
            embedding.kind = EmbeddingSource::Kind::Hash;
            if (v.contains("seed")) embedding.seed = v["seed"].get<std::uint64_t>();
            if (v.contains("dim")) embedding.dim = v["dim"].get<std::size_t>();
          } else if (source == "file") {
            embedding.kind = EmbeddingSource::Kind::File;
            if (v.contains("path")) embedding.path = path_of(v["path"]);
          } else {
            throw ConfigError("unknown embedding source '" + source + "'");
          }
        } else {
          throw ConfigError("unknown config key '" + key + "'");
        }
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad config value: ") + e.what());
    }
    check_unit_level();
  }

  static RunConfig load(const std::filesystem::path& path) {
    json j;
    try {
      j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    return from_json(j, path.parent_path());
  }

  // Called again after flag overrides are applied.
  void check_unit_level() const {
    if (pending_unit_level.empty()) return;
    if (pending_unit_level != unit_level_name(unit_level()))
      throw ConfigError("unit_level '" + pending_unit_level + "' is incompatible with strategy '" +
                        std::string(strategy_name(effective_strategy())) + "'");
  }

  std::string pending_unit_level;
};

struct Resources {
  LabelSet labels;
  std::unique_ptr<SubwordTokenizer> tokenizer;
};

inline Resources load_resources(const RunConfig& config) {
  Resources r;
  r.labels = LabelSet::load(config.labels);
  if (config.vocab.empty()) {
    r.tokenizer = std::make_unique<WholeWordTokenizer>();
  } else {
    r.tokenizer = std::make_unique<VocabTokenizer>(VocabTokenizer::load(config.vocab));
  }
  return r;
}

inline std::unique_ptr<EmbeddingProvider> make_provider(const RunConfig& config, const Corpus& corpus) {
  if (config.embedding.kind == EmbeddingSource::Kind::File)
    return std::make_unique<StoredEmbeddingProvider>(load_embeddings(config.embedding.path, corpus));
  return std::make_unique<HashEmbeddingProvider>(config.embedding_seed(), config.embedding.dim);
}

struct PreparedSnippet {
  TokenAlignment alignment;
  EmbeddedSequence sequence;
};

inline std::vector<PreparedSnippet> prepare(const Corpus& corpus, const SubwordTokenizer& tokenizer,
                                            const EmbeddingProvider& provider) {
  std::vector<PreparedSnippet> out;
  out.reserve(corpus.size());
  for (const Snippet& s : corpus) {
    PreparedSnippet p;
    p.alignment = align(s.text, tokenizer);
    p.sequence = provider.embed(s, p.alignment);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<TrainingExample> make_examples(const Corpus& corpus, const std::vector<PreparedSnippet>& prepared,
                                                  const TaggerConfig& tc, const std::vector<std::size_t>* subset = nullptr) {
  std::vector<TrainingExample> out;
  auto add = [&](std::size_t i) {
    TrainingExample ex;
    ex.features = build_features(prepared[i].sequence, prepared[i].alignment, corpus[i].genre, tc.unit_level,
                                 tc.use_genre, tc.combine);
    ex.labels = project_gold(prepared[i].alignment, corpus[i].gold_spans, tc.unit_level);
    out.push_back(std::move(ex));
  };
  if (subset) {
    for (std::size_t i : *subset) add(i);
  } else {
    for (std::size_t i = 0; i < corpus.size(); ++i) add(i);
  }
  return out;
}

inline std::vector<std::vector<TechniqueSpan>> predict_corpus(const LinearTagger& tagger, const Corpus& corpus,
                                                              const std::vector<PreparedSnippet>& prepared,
                                                              Strategy strategy,
                                                              const std::vector<std::size_t>* subset = nullptr) {
  std::vector<std::vector<TechniqueSpan>> out;
  auto add = [&](std::size_t i) {
    out.push_back(predict_spans(tagger, corpus[i], prepared[i].alignment, prepared[i].sequence, strategy));
  };
  if (subset) {
    for (std::size_t i : *subset) add(i);
  } else {
    for (std::size_t i = 0; i < corpus.size(); ++i) add(i);
  }
  return out;
}

inline std::vector<SpanRecord> gold_records(const Corpus& corpus, const std::vector<std::size_t>* subset = nullptr) {
  std::vector<SpanRecord> out;
  auto add = [&](std::size_t i) { out.push_back({corpus[i].id, corpus[i].gold_spans}); };
  if (subset) {
    for (std::size_t i : *subset) add(i);
  } else {
    for (std::size_t i = 0; i < corpus.size(); ++i) add(i);
  }
  return out;
}

inline std::vector<SpanRecord> prediction_records(const Corpus& corpus,
                                                  const std::vector<std::vector<TechniqueSpan>>& predictions,
                                                  const std::vector<std::size_t>* subset = nullptr) {
  std::vector<SpanRecord> out;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const std::size_t i = subset ? (*subset)[k] : k;
    out.push_back({corpus[i].id, predictions[k]});
  }
  return out;
}

// Fold index per snippet: a seeded permutation dealt round-robin.
inline std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (folds > n) throw ConfigError("more folds (" + std::to_string(folds) + ") than snippets (" + std::to_string(n) + ")");
  Rng rng(seed);
  const std::vector<std::size_t> perm = rng.permutation(n);
  std::vector<std::size_t> fold(n);
  for (std::size_t k = 0; k < n; ++k) fold[perm[k]] = k % folds;
  return fold;
}

struct Grid {
  std::vector<double> learning_rates = {1e-3, 1e-2, 1e-1};
  std::vector<std::size_t> batch_sizes = {16, 32};
  std::vector<std::size_t> epochs = {3, 10, 30};

  static Grid from_json(const json& j) {
    Grid g;
    try {
      if (j.contains("learning_rate")) g.learning_rates = j["learning_rate"].get<std::vector<double>>();
      if (j.contains("batch_size")) g.batch_sizes = j["batch_size"].get<std::vector<std::size_t>>();
      if (j.contains("epochs")) g.epochs = j["epochs"].get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad grid file: ") + e.what());
    }
    if (g.learning_rates.empty() || g.batch_sizes.empty() || g.epochs.empty())
      throw ConfigError("grid axes must be non-empty");
    std::sort(g.learning_rates.begin(), g.learning_rates.end());
    std::sort(g.batch_sizes.begin(), g.batch_sizes.end());
    std::sort(g.epochs.begin(), g.epochs.end());
    for (double lr : g.learning_rates)
      if (!(lr > 0.0)) throw ConfigError("grid learning rates must be positive");
    for (std::size_t b : g.batch_sizes)
      if (b == 0) throw ConfigError("grid batch sizes must be positive");
    for (std::size_t e : g.epochs)
      if (e == 0) throw ConfigError("grid epochs must be positive");
    return g;
  }
};

struct GridCell {
  double learning_rate;
  std::size_t batch_size;
  std::size_t epochs;
  std::vector<double> fold_f1;
  double mean_f1 = 0.0;
  bool diverged = false;
};

struct TuneReport {
  std::vector<GridCell> cells;  // lexicographic (learning_rate, batch_size, epochs)
  std::size_t best = 0;

  Hyperparams best_hyperparams(std::uint64_t seed) const {
    const GridCell& c = cells[best];
    return {c.learning_rate, c.batch_size, c.epochs, seed};
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& c : cells)
      arr.push_back({{"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"fold_f1", c.fold_f1},
                     {"mean_f1", c.mean_f1},
                     {"diverged", c.diverged}});
    const GridCell& b = cells[best];
    return {{"cells", arr},
            {"best", {{"learning_rate", b.learning_rate}, {"batch_size", b.batch_size}, {"epochs", b.epochs},
                      {"mean_f1", b.mean_f1}}}};
  }

  std::string render() const {
    std::string out = "learning_rate  batch_size  epochs  mean_F1\n";
    char buf[128];
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const GridCell& c = cells[i];
      std::snprintf(buf, sizeof buf, "%13g  %10zu  %6zu  %7.2f%s%s\n", c.learning_rate, c.batch_size, c.epochs,
                    c.mean_f1 * 100.0, c.diverged ? "  (diverged)" : "", i == best ? "  <- best" : "");
      out += buf;
    }
    return out;
  }
};

// k-fold cross-validation over every grid cell. Runs for different epoch
// counts share one training run per (learning rate, batch size, fold): the
// model is scored after each listed epoch, which equals training from
// scratch for that many epochs. Highest mean micro-F1 wins; ties keep the
// lexicographically first cell.
inline TuneReport tune(const RunConfig& config, const Corpus& corpus, const std::vector<PreparedSnippet>& prepared,
                       const LabelSet& labels, const Grid& grid, std::size_t folds) {
  const std::vector<std::size_t> fold_of = fold_assignment(corpus.size(), folds, derive_seed(config.seed, SeedStream::Folds));
  const TaggerConfig tc = config.tagger_config();
  const Strategy strategy = config.effective_strategy();

  TuneReport report;
  for (double lr : grid.learning_rates)
    for (std::size_t bs : grid.batch_sizes)
      for (std::size_t ep : grid.epochs) report.cells.push_back({lr, bs, ep, {}, 0.0, false});

  std::size_t cell_base = 0;
  for (double lr : grid.learning_rates) {
    for (std::size_t bs : grid.batch_sizes) {
      for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::size_t> train_idx, held_idx;
        for (std::size_t i = 0; i < corpus.size(); ++i) (fold_of[i] == f ? held_idx : train_idx).push_back(i);
        const auto examples = make_examples(corpus, prepared, tc, &train_idx);
        const auto gold = gold_records(corpus, &held_idx);

        Hyperparams hp{lr, bs, grid.epochs.back(), config.seed};
        TrainOptions opts;
        opts.tagger = tc;
        opts.class_weights = config.class_weights;
        std::size_t next = 0;
        opts.on_epoch = [&](std::size_t epoch, const LinearTagger& t) {
          while (next < grid.epochs.size() && grid.epochs[next] == epoch) {
            const auto preds = predict_corpus(t, corpus, prepared, strategy, &held_idx);
            const double f1 = micro_f1(gold, prediction_records(corpus, preds, &held_idx), labels).micro_f1;
            report.cells[cell_base + next].fold_f1.push_back(f1);
            ++next;
          }
        };
        try {
          train(examples, labels, hp, opts);
        } catch (const TrainingDiverged&) {
          for (; next < grid.epochs.size(); ++next) {
            report.cells[cell_base + next].fold_f1.push_back(0.0);
            report.cells[cell_base + next].diverged = true;
          }
        }
      }
      cell_base += grid.epochs.size();
    }
  }
  for (std::size_t i = 0; i < report.cells.size(); ++i) {
    GridCell& c = report.cells[i];
    double sum = 0.0;
    for (double v : c.fold_f1) sum += v;
    c.mean_f1 = sum / static_cast<double>(c.fold_f1.size());
    if (c.mean_f1 > report.cells[report.best].mean_f1) report.best = i;
  }
  return report;
}

struct AblationRun {
  Strategy strategy;
  bool use_genre;
  ScoreReport score;
  std::vector<double> loss_history;
};

struct AblationResult {
  std::vector<AblationRun> runs;

  AblationCells cells() const {
    AblationCells c;
    for (const auto& r : runs) c[{r.strategy, r.use_genre}] = r.score.micro_f1;
    return c;
  }

  std::string table() const { return ablation_table(cells()); }

  json curves_json() const {
    json arr = json::array();
    for (const auto& r : runs)
      arr.push_back({{"strategy", std::string(strategy_name(r.strategy))},
                     {"use_genre", r.use_genre},
                     {"micro_f1", r.score.micro_f1},
                     {"loss", r.loss_history},
                     {"epochs_to_converge", epochs_to_converge(r.loss_history)}});
    return arr;
  }

  // First epoch that has closed 95% of the gap between the first and the
  // final epoch loss.
  static std::size_t epochs_to_converge(const std::vector<double>& loss) {
    if (loss.empty()) return 0;
    const double target = loss.back() + 0.05 * (loss.front() - loss.back());
    for (std::size_t e = 0; e < loss.size(); ++e)
      if (loss[e] <= target) return e + 1;
    return loss.size();
  }
};

class AblationCellFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trains and scores every (strategy, genre on/off) cell. Alignments and
// embeddings are shared across cells since neither depends on them.
inline AblationResult ablate(const RunConfig& base, const Corpus& train_corpus,
                             const std::vector<PreparedSnippet>& train_prepared, const Corpus& eval_corpus,
                             const std::vector<PreparedSnippet>& eval_prepared, const LabelSet& labels,
                             const std::vector<Strategy>& strategies) {
  AblationResult result;
  const auto gold = gold_records(eval_corpus);
  for (Strategy s : strategies) {
    for (bool genre : {true, false}) {
      RunConfig cfg = base;
      cfg.strategy = s;
      cfg.use_genre = genre;
      try {
        TrainOptions opts;
        opts.tagger = cfg.tagger_config();
        opts.class_weights = cfg.class_weights;
        TrainResult tr = train(make_examples(train_corpus, train_prepared, opts.tagger), labels,
                               cfg.effective_hyperparams(), opts);
        const auto preds = predict_corpus(tr.tagger, eval_corpus, eval_prepared, s);
        result.runs.push_back(
            {s, genre, micro_f1(gold, prediction_records(eval_corpus, preds), labels), std::move(tr.loss_history)});
      } catch (const std::exception& e) {
        throw AblationCellFailed("ablation cell (" + std::string(strategy_name(s)) + ", " +
                                 (genre ? "with" : "without") + " genre) failed: " + e.what());
      }
    }
  }
  return result;
}

}  // namespace spantag
