// spantag: batch command-line front end.
//
// Exit codes: 0 ok, 1 usage/config, 2 data error, 3 internal.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spantag/corpus.hpp"
#include "spantag/pipeline.hpp"
#include "spantag/repair.hpp"
#include "spantag/score.hpp"
#include "spantag/synthetic.hpp"
#include "spantag/tagger.hpp"

namespace fs = std::filesystem;
using namespace spantag;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

// Flags shared by every pipeline subcommand; each one overrides the config file.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string labels;
  std::string vocab;
  std::optional<bool> genre;
  std::string strategy;
  std::string combine;
  std::string embeddings;
  std::optional<std::size_t> dim;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> epochs;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON run configuration");
    app->add_option("--seed", seed, "global seed");
    app->add_option("--labels", labels, "technique inventory, one name per line");
    app->add_option("--vocab", vocab, "subword vocabulary, one piece per line");
    app->add_flag("--genre,!--no-genre", genre, "append the genre one-hot to every feature row");
    app->add_option("--strategy", strategy, "token | majority | first | word");
    app->add_option("--combine", combine, "concat | add | token-only");
    app->add_option("--embeddings", embeddings, "precomputed embedding file (JSONL or binary)");
    app->add_option("--dim", dim, "hash embedding dimension");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--batch-size", batch_size, "snippets per mini-batch");
    app->add_option("--epochs", epochs, "training epochs");
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : RunConfig::load(config);
    if (seed) c.seed = *seed;
    if (!labels.empty()) c.labels = labels;
    if (!vocab.empty()) c.vocab = vocab;
    if (genre) c.use_genre = *genre;
    if (!strategy.empty()) {
      auto s = parse_strategy(strategy);
      if (!s) throw ConfigError("unknown strategy '" + strategy + "'");
      c.strategy = *s;
    }
    if (!combine.empty()) {
      auto cb = parse_combine(combine);
      if (!cb) throw ConfigError("unknown combine mode '" + combine + "'");
      c.combine = *cb;
    }
    if (!embeddings.empty()) {
      c.embedding.kind = EmbeddingSource::Kind::File;
      c.embedding.path = embeddings;
    }
    if (dim) c.embedding.dim = *dim;
    if (lr) c.hyperparams.learning_rate = *lr;
    if (batch_size) c.hyperparams.batch_size = *batch_size;
    if (epochs) c.hyperparams.epochs = *epochs;
    c.check_unit_level();
    c.validate();
    return c;
  }
};

std::vector<fs::path> to_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// ---- repair ----------------------------------------------------------------

struct RepairArgs {
  std::string input, ledger, output, report, labels, config;
  bool strict = false;
};

int run_repair(const RepairArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (!a.labels.empty()) cfg.labels = a.labels;
  if (!a.ledger.empty()) cfg.ledger = a.ledger;
  if (cfg.labels.empty()) throw ConfigError("repair needs --labels");
  const LabelSet labels = LabelSet::load(cfg.labels);
  const Corpus corpus = load_corpus(a.input, labels);
  const OverrideLedger ledger = cfg.ledger.empty() ? OverrideLedger{} : OverrideLedger::load(cfg.ledger);
  const RepairResult result = repair_corpus(corpus, ledger);
  save_corpus(result.corpus, labels, a.output);
  if (!a.report.empty()) write_file_atomic(a.report, result.report.to_jsonl());

  using K = RepairAction::Kind;
  std::printf("repaired %zu of %zu snippets: %zu scrubbed, %zu realigned, %zu mention-normalized, %zu overrides, "
              "%zu unrepairable\n",
              result.corpus.size(), corpus.size(), result.report.count(K::ScrubbedChars),
              result.report.count(K::Realigned), result.report.count(K::MentionNormalized),
              result.report.count(K::OverrideApplied), result.report.count(K::Unrepairable));
  if (a.strict && result.report.any_unrepairable()) {
    std::fprintf(stderr, "error: unrepairable annotations present (--strict)\n");
    return kExitData;
  }
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  CommonFlags common;
  std::vector<std::string> inputs;
  std::string model, log;
};

int run_train(const TrainArgs& a) {
  const RunConfig cfg = a.common.resolve();
  const Resources res = load_resources(cfg);
  const Corpus corpus = load_corpora(to_paths(a.inputs), res.labels);
  const auto provider = make_provider(cfg, corpus);
  const auto start = std::chrono::steady_clock::now();
  const auto prepared = prepare(corpus, *res.tokenizer, *provider);

  TrainOptions opts;
  opts.tagger = cfg.tagger_config();
  opts.class_weights = cfg.class_weights;
  std::vector<double> epoch_seconds;
  opts.on_epoch = [&](std::size_t, const LinearTagger&) {
    epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  };
  const auto examples = make_examples(corpus, prepared, opts.tagger);
  const TrainResult tr = train(examples, res.labels, cfg.effective_hyperparams(), opts);
  save_model(tr.tagger, cfg.model_json().dump(), a.model);

  json epochs = json::array();
  for (std::size_t e = 0; e < tr.loss_history.size(); ++e)
    epochs.push_back({{"epoch", e + 1}, {"loss", tr.loss_history[e]}, {"elapsed_seconds", epoch_seconds[e]}});
  std::size_t units = 0;
  for (const auto& ex : examples) units += ex.features.rows;
  const json log = {{"config", cfg.to_json()},
                    {"snippets", corpus.size()},
                    {"units", units},
                    {"input_width", tr.tagger.input_width},
                    {"labels", tr.tagger.label_count()},
                    {"parameters", tr.tagger.parameter_count()},
                    {"epochs", epochs},
                    {"wall_seconds", epoch_seconds.empty() ? 0.0 : epoch_seconds.back()}};
  write_json(a.log.empty() ? fs::path(a.model + ".log.json") : fs::path(a.log), log);
  std::printf("trained %s-level tagger on %zu snippets (%zu units): input width %zu, %zu labels, %zu parameters, "
              "final loss %.6f\n",
              std::string(unit_level_name(tr.tagger.config.unit_level)).c_str(), corpus.size(), units,
              tr.tagger.input_width, tr.tagger.label_count(), tr.tagger.parameter_count(), tr.loss_history.back());
  return kExitOk;
}

// ---- predict ---------------------------------------------------------------

struct PredictArgs {
  CommonFlags common;
  std::string model, input, output;
};

int run_predict(const PredictArgs& a) {
  RunConfig cfg = a.common.resolve();
  const Resources res = load_resources(cfg);
  const LoadedModel model = load_model(a.model, res.labels);
  const LinearTagger& tagger = model.tagger;

  json recorded = json::object();
  try {
    recorded = json::parse(model.config_json);
  } catch (const json::parse_error&) {
  }
  if (cfg.use_genre && *cfg.use_genre != tagger.config.use_genre)
    throw ConfigError(std::string("genre setting mismatch: model was trained ") +
                      (tagger.config.use_genre ? "with" : "without") + " genre features, configuration asks for " +
                      (*cfg.use_genre ? "genre" : "no genre"));
  if (cfg.combine && *cfg.combine != tagger.config.combine)
    throw ConfigError("combine mode mismatch between model and configuration");
  if (!cfg.strategy && recorded.contains("strategy"))
    cfg.strategy = parse_strategy(recorded["strategy"].get<std::string>());
  if (!cfg.strategy)
    cfg.strategy = tagger.config.unit_level == UnitLevel::Word ? Strategy::WordToWord : Strategy::TokenToWordFirst;
  check_strategy(tagger, *cfg.strategy);

  const Corpus corpus = load_corpus(a.input, res.labels);
  const auto provider = make_provider(cfg, corpus);
  const std::size_t width = feature_width(provider->dim(), tagger.config.use_genre, tagger.config.combine);
  if (width != tagger.input_width)
    throw ConfigError("dimension mismatch: model expects input width " + std::to_string(tagger.input_width) +
                      ", configuration produces width " + std::to_string(width));
  const auto prepared = prepare(corpus, *res.tokenizer, *provider);
  const auto preds = predict_corpus(tagger, corpus, prepared, *cfg.strategy);
  save_predictions(corpus, preds, res.labels, a.output);
  std::size_t spans = 0;
  for (const auto& p : preds) spans += p.size();
  std::printf("predicted %zu spans over %zu snippets (strategy %s)\n", spans, corpus.size(),
              std::string(strategy_name(*cfg.strategy)).c_str());
  return kExitOk;
}

// ---- score -----------------------------------------------------------------

struct ScoreArgs {
  std::string gold, pred, labels, config, json_out;
  bool cap = false;
};

int run_score(const ScoreArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (!a.labels.empty()) cfg.labels = a.labels;
  if (cfg.labels.empty()) throw ConfigError("score needs --labels");
  const LabelSet labels = LabelSet::load(cfg.labels);
  const auto gold = load_span_records(a.gold, labels);
  const auto pred = load_span_records(a.pred, labels);
  const ScoreReport report = micro_f1(gold, pred, labels, ScoreOptions{a.cap});
  std::fputs(report.render().c_str(), stdout);
  if (!a.json_out.empty()) write_json(a.json_out, report.to_json());
  return kExitOk;
}

// ---- tune ------------------------------------------------------------------

struct TuneArgs {
  CommonFlags common;
  std::vector<std::string> inputs;
  std::string grid, json_out;
  std::size_t folds = 5;
};

int run_tune(const TuneArgs& a) {
  const RunConfig cfg = a.common.resolve();
  if (a.folds < 2) throw ConfigError("--folds must be at least 2");
  const Grid grid = a.grid.empty() ? Grid{} : Grid::from_json([&] {
    try {
      return json::parse(read_file(a.grid));
    } catch (const json::parse_error& e) {
      throw ConfigError(a.grid + ": " + e.what());
    }
  }());
  const Resources res = load_resources(cfg);
  const Corpus corpus = load_corpora(to_paths(a.inputs), res.labels);
  const auto provider = make_provider(cfg, corpus);
  const auto prepared = prepare(corpus, *res.tokenizer, *provider);
  const TuneReport report = tune(cfg, corpus, prepared, res.labels, grid, a.folds);
  std::fputs(report.render().c_str(), stdout);
  if (!a.json_out.empty()) {
    json j = report.to_json();
    j["config"] = cfg.to_json();
    j["folds"] = a.folds;
    write_json(a.json_out, j);
  }
  return kExitOk;
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  CommonFlags common;
  std::vector<std::string> train_inputs;
  std::string eval_input, json_out, curves;
};

int run_ablate(const AblateArgs& a) {
  RunConfig cfg = a.common.resolve();
  std::vector<Strategy> strategies;
  if (!a.common.strategy.empty()) {
    strategies.push_back(cfg.effective_strategy());
  } else {
    strategies.assign(kAllStrategies.begin(), kAllStrategies.end());
  }
  const Resources res = load_resources(cfg);
  const Corpus train_corpus = load_corpora(to_paths(a.train_inputs), res.labels);
  const Corpus eval_corpus = load_corpus(a.eval_input, res.labels);
  Corpus all = train_corpus;
  all.insert(all.end(), eval_corpus.begin(), eval_corpus.end());
  const auto provider = make_provider(cfg, all);
  const auto train_prepared = prepare(train_corpus, *res.tokenizer, *provider);
  const auto eval_prepared = prepare(eval_corpus, *res.tokenizer, *provider);
  const AblationResult result =
      ablate(cfg, train_corpus, train_prepared, eval_corpus, eval_prepared, res.labels, strategies);

  std::fputs(result.table().c_str(), stdout);
  std::printf("\nconvergence (first epoch closing 95%% of the first-to-final loss gap):\n");
  for (const auto& r : result.runs)
    std::printf("  %-8s %-13s %3zu of %zu epochs, final loss %.6f\n", std::string(strategy_name(r.strategy)).c_str(),
                r.use_genre ? "with genre" : "without genre", AblationResult::epochs_to_converge(r.loss_history),
                r.loss_history.size(), r.loss_history.empty() ? 0.0 : r.loss_history.back());
  if (!a.curves.empty()) write_json(a.curves, result.curves_json());
  if (!a.json_out.empty()) {
    json cells = json::array();
    for (const auto& r : result.runs)
      cells.push_back({{"strategy", std::string(strategy_name(r.strategy))},
                       {"use_genre", r.use_genre},
                       {"score", r.score.to_json()}});
    write_json(a.json_out, {{"config", cfg.to_json()}, {"cells", cells}, {"table", result.table()}});
  }
  return kExitOk;
}

// ---- stats -----------------------------------------------------------------

struct StatsArgs {
  std::vector<std::string> inputs;
  std::string labels, config;
};

int run_stats(const StatsArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (!a.labels.empty()) cfg.labels = a.labels;
  if (cfg.labels.empty()) throw ConfigError("stats needs --labels");
  const LabelSet labels = LabelSet::load(cfg.labels);
  std::vector<std::string> names;
  std::vector<GenreCounts> counts;
  GenreCounts total;
  for (const auto& in : a.inputs) {
    const GenreCounts c = corpus_stats(load_corpus(in, labels));
    names.push_back(fs::path(in).stem().string());
    counts.push_back(c);
    total.tweet += c.tweet;
    total.paragraph += c.paragraph;
  }
  std::printf("%-10s", "Type");
  for (const auto& n : names) std::printf(" %10s", n.c_str());
  std::printf(" %10s\n", "Total");
  auto row = [&](const char* label, auto get) {
    std::printf("%-10s", label);
    for (const auto& c : counts) std::printf(" %10zu", get(c));
    std::printf(" %10zu\n", get(total));
  };
  row("Tweet", [](const GenreCounts& c) { return c.tweet; });
  row("Paragraph", [](const GenreCounts& c) { return c.paragraph; });
  return kExitOk;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  std::string labels;
  std::uint64_t seed = 13;
  std::size_t train = 200, dev = 50, test = 60, damaged = 40;
};

int run_synth(const SynthArgs& a) {
  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  const LabelSet labels = LabelSet::load(a.labels);
  const synthetic::Lexicon lex = synthetic::make_lexicon(labels, splitmix64(a.seed));
  std::string vocab;
  for (const Text& v : lex.vocab) vocab += utf8_encode(v) + "\n";
  write_file_atomic(dir / "vocab.txt", vocab);

  auto split = [&](const char* name, std::size_t n, std::uint64_t salt) {
    synthetic::CorpusOptions opt;
    opt.snippets = n;
    opt.id_prefix = name;
    const Corpus c = synthetic::make_corpus(lex, splitmix64(a.seed ^ salt), opt);
    save_corpus(c, labels, dir / (std::string(name) + ".jsonl"));
    return c;
  };
  split("train", a.train, 1);
  split("dev", a.dev, 2);
  split("test", a.test, 3);

  // A damaged corpus for the repair command, plus one annotation only the
  // override ledger can fix.
  synthetic::CorpusOptions dopt;
  dopt.snippets = a.damaged;
  dopt.id_prefix = "raw";
  dopt.tweet_fraction = 0.5;
  dopt.mention_span_rate = 0.5;
  const Corpus clean = synthetic::make_corpus(lex, splitmix64(a.seed ^ 4), dopt);
  Corpus damaged = synthetic::inject_damage(clean, splitmix64(a.seed ^ 5));
  std::string ledger;
  for (std::size_t i = 0; i < damaged.size(); ++i) {
    if (damaged[i].gold_spans.empty()) continue;
    TechniqueSpan& span = damaged[i].gold_spans.front();
    const TechniqueSpan& truth = clean[i].gold_spans.front();
    span.surface = U"(" + truth.surface + U")";
    ledger += json{{"id", damaged[i].id},
                   {"ann_index", 0},
                   {"start", truth.start},
                   {"end", truth.end},
                   {"text", utf8_encode(truth.surface)}}
                  .dump() +
              "\n";
    break;
  }
  save_corpus(damaged, labels, dir / "raw.jsonl");
  save_corpus(clean, labels, dir / "raw_clean.jsonl");
  write_file_atomic(dir / "ledger.jsonl", ledger);
  std::printf("wrote synthetic suite to %s\n", dir.string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spantag: span-level technique tagging over contextual embeddings"};
  app.require_subcommand(1);

  RepairArgs repair;
  auto* c_repair = app.add_subcommand("repair", "scrub, realign and normalize annotations");
  c_repair->add_option("--input", repair.input, "raw corpus JSONL")->required();
  c_repair->add_option("--output", repair.output, "repaired corpus JSONL")->required();
  c_repair->add_option("--ledger", repair.ledger, "override ledger JSONL");
  c_repair->add_option("--report", repair.report, "repair report JSONL");
  c_repair->add_option("--labels", repair.labels, "technique inventory");
  c_repair->add_option("--config", repair.config, "JSON run configuration");
  c_repair->add_flag("--strict", repair.strict, "exit 2 when any annotation is unrepairable");

  TrainArgs trn;
  auto* c_train = app.add_subcommand("train", "train a tagger (inputs are concatenated in order)");
  trn.common.attach(c_train);
  c_train->add_option("--input", trn.inputs, "training corpus JSONL (repeatable)")->required();
  c_train->add_option("--model", trn.model, "model output path")->required();
  c_train->add_option("--log", trn.log, "training log JSON (default: <model>.log.json)");

  PredictArgs pred;
  auto* c_predict = app.add_subcommand("predict", "predict technique spans");
  pred.common.attach(c_predict);
  c_predict->add_option("--model", pred.model, "model file")->required();
  c_predict->add_option("--input", pred.input, "corpus JSONL")->required();
  c_predict->add_option("--output", pred.output, "predictions JSONL")->required();

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "span-level micro F1");
  c_score->add_option("--gold", score.gold, "gold corpus JSONL")->required();
  c_score->add_option("--pred", score.pred, "predictions JSONL")->required();
  c_score->add_option("--labels", score.labels, "technique inventory");
  c_score->add_option("--config", score.config, "JSON run configuration");
  c_score->add_option("--json", score.json_out, "write the report as JSON");
  c_score->add_flag("--cap-per-span", score.cap, "cap each span's overlap credit at 1");

  TuneArgs tn;
  auto* c_tune = app.add_subcommand("tune", "grid search with k-fold cross-validation");
  tn.common.attach(c_tune);
  c_tune->add_option("--input", tn.inputs, "training corpus JSONL (repeatable)")->required();
  c_tune->add_option("--grid", tn.grid, "grid JSON {learning_rate, batch_size, epochs}");
  c_tune->add_option("--folds", tn.folds, "number of folds")->capture_default_str();
  c_tune->add_option("--json", tn.json_out, "write the grid report as JSON");

  AblateArgs abl;
  auto* c_ablate = app.add_subcommand("ablate", "strategy x genre ablation grid");
  abl.common.attach(c_ablate);
  c_ablate->add_option("--train", abl.train_inputs, "training corpus JSONL (repeatable)")->required();
  c_ablate->add_option("--eval", abl.eval_input, "evaluation corpus JSONL")->required();
  c_ablate->add_option("--json", abl.json_out, "write all cell reports as JSON");
  c_ablate->add_option("--curves", abl.curves, "write per-epoch loss curves as JSON");

  StatsArgs st;
  auto* c_stats = app.add_subcommand("stats", "snippet counts per genre and split");
  c_stats->add_option("--input", st.inputs, "corpus JSONL (repeatable, one column each)")->required();
  c_stats->add_option("--labels", st.labels, "technique inventory");
  c_stats->add_option("--config", st.config, "JSON run configuration");

  SynthArgs syn;
  auto* c_synth = app.add_subcommand("synth", "generate the synthetic fixture suite");
  c_synth->add_option("--out-dir", syn.out_dir, "output directory")->required();
  c_synth->add_option("--labels", syn.labels, "technique inventory")->required();
  c_synth->add_option("--seed", syn.seed, "generator seed")->capture_default_str();
  c_synth->add_option("--train", syn.train, "training snippets")->capture_default_str();
  c_synth->add_option("--dev", syn.dev, "development snippets")->capture_default_str();
  c_synth->add_option("--test", syn.test, "test snippets")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_repair) return run_repair(repair);
    if (*c_train) return run_train(trn);
    if (*c_predict) return run_predict(pred);
    if (*c_score) return run_score(score);
    if (*c_tune) return run_tune(tn);
    if (*c_ablate) return run_ablate(abl);
    if (*c_stats) return run_stats(st);
    if (*c_synth) return run_synth(syn);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kExitData;
  } catch (const AblationCellFailed& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitUsage;
}
