#pragma once

// Zero-hidden-layer softmax tagger: one weight matrix of shape
// (input_width, L), trained by mini-batch gradient descent on mean
// cross-entropy, plus the four span prediction strategies.
//
// Model file (little-endian):
//   magic        8 bytes "SPANTAG1"
//   version      u32 (1)
//   input_width  u32
//   labels       u32 (L)
//   unit_level   u8  (0 token, 1 word)
//   use_genre    u8
//   combine      u8  (0 concat, 1 add, 2 token-only)
//   has_bias     u8
//   config       u32 length + UTF-8 JSON of the effective configuration
//   label names  L x (u32 length + UTF-8)
//   weights      input_width x L f32, row-major
//   bias         L f32, only when has_bias

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spantag/binary.hpp"
#include "spantag/corpus.hpp"
#include "spantag/embed.hpp"
#include "spantag/rng.hpp"
#include "spantag/segment.hpp"

namespace spantag {

enum class Strategy { TokenToToken, TokenToWordMajority, TokenToWordFirst, WordToWord };

inline constexpr std::array<Strategy, 4> kAllStrategies = {
    Strategy::TokenToToken, Strategy::TokenToWordMajority, Strategy::TokenToWordFirst, Strategy::WordToWord};

// Short names used on the command line.
inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::TokenToToken: return "token";
    case Strategy::TokenToWordMajority: return "majority";
    case Strategy::TokenToWordFirst: return "first";
    case Strategy::WordToWord: return "word";
  }
  return "";
}

inline std::optional<Strategy> parse_strategy(std::string_view s) {
  for (Strategy st : kAllStrategies)
    if (strategy_name(st) == s) return st;
  return std::nullopt;
}

inline UnitLevel strategy_level(Strategy s) {
  return s == Strategy::WordToWord ? UnitLevel::Word : UnitLevel::Token;
}

struct Hyperparams {
  double learning_rate = 50.0;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be a positive finite number");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
  }
};

// Layout and options that travel with the weights.
struct TaggerConfig {
  UnitLevel unit_level = UnitLevel::Token;
  bool use_genre = true;
  Combine combine = Combine::Concat;
  bool bias = false;
};

struct LinearTagger {
  LabelSet label_set;
  std::size_t input_width = 0;
  TaggerConfig config;
  std::vector<double> weights;  // input_width x L, row-major
  std::vector<double> bias;     // L entries when config.bias, else empty

  std::size_t label_count() const { return label_set.size(); }
  std::size_t parameter_count() const { return weights.size() + bias.size(); }

  double& weight(std::size_t feature, std::size_t label) { return weights[feature * label_count() + label]; }
  double weight(std::size_t feature, std::size_t label) const { return weights[feature * label_count() + label]; }

  bool finite() const {
    for (double w : weights)
      if (!std::isfinite(w)) return false;
    for (double b : bias)
      if (!std::isfinite(b)) return false;
    return true;
  }
};

// Weights uniform in [-1/sqrt(input_width), 1/sqrt(input_width)]; bias zero.
inline LinearTagger init_tagger(std::size_t input_width, const LabelSet& label_set, std::uint64_t seed,
                                TaggerConfig config = {}) {
  if (input_width == 0) throw ConfigError("input width must be at least 1");
  LinearTagger t;
  t.label_set = label_set;
  t.input_width = input_width;
  t.config = config;
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_width));
  Rng rng(seed);
  t.weights.resize(input_width * label_set.size());
  for (double& w : t.weights) w = rng.uniform(-bound, bound);
  if (config.bias) t.bias.assign(label_set.size(), 0.0);
  return t;
}

namespace detail {

inline void check_width(const LinearTagger& t, std::size_t width) {
  if (width != t.input_width)
    throw DataError("feature width mismatch: tagger expects " + std::to_string(t.input_width) + ", features have " +
                    std::to_string(width));
}

inline void logits_into(const LinearTagger& t, std::span<const float> x, std::span<double> z) {
  const std::size_t L = t.label_count();
  if (t.bias.empty()) {
    std::fill(z.begin(), z.end(), 0.0);
  } else {
    std::copy(t.bias.begin(), t.bias.end(), z.begin());
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double xj = x[j];
    if (xj == 0.0) continue;
    const double* w = t.weights.data() + j * L;
    for (std::size_t c = 0; c < L; ++c) z[c] += xj * w[c];
  }
}

// In-place softmax; returns log-sum-exp of the input logits.
inline double softmax_inplace(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : z) v /= s;
  return m + std::log(s);
}

}  // namespace detail

struct Probabilities {
  std::size_t rows = 0;
  std::size_t labels = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return {data.data() + i * labels, labels}; }
};

inline Probabilities forward(const LinearTagger& tagger, const FeatureMatrix& features) {
  detail::check_width(tagger, features.width);
  Probabilities p;
  p.rows = features.rows;
  p.labels = tagger.label_count();
  p.data.resize(p.rows * p.labels);
  for (std::size_t i = 0; i < p.rows; ++i) {
    std::span<double> z(p.data.data() + i * p.labels, p.labels);
    detail::logits_into(tagger, features.row(i), z);
    detail::softmax_inplace(z);
  }
  return p;
}

// Per-row argmax; ties go to the smallest label index.
inline std::vector<LabelId> predict_units(const LinearTagger& tagger, const FeatureMatrix& features) {
  detail::check_width(tagger, features.width);
  std::vector<LabelId> out(features.rows);
  std::vector<double> z(tagger.label_count());
  for (std::size_t i = 0; i < features.rows; ++i) {
    detail::logits_into(tagger, features.row(i), z);
    out[i] = static_cast<LabelId>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

// One labelled unit, borrowed from a feature matrix.
struct LabeledRow {
  std::span<const float> x;
  LabelId label;
};

// Per-unit loss weights by gold label; empty means all ones.
using ClassWeights = std::vector<double>;

inline double class_weight(const ClassWeights& w, LabelId y) { return w.empty() ? 1.0 : w[y]; }

// Mean weighted cross-entropy over the rows.
inline double batch_loss(const LinearTagger& tagger, std::span<const LabeledRow> rows, const ClassWeights& cw = {}) {
  if (rows.empty()) return 0.0;
  std::vector<double> z(tagger.label_count());
  double total = 0.0;
  for (const LabeledRow& r : rows) {
    detail::logits_into(tagger, r.x, z);
    const double zy = z[r.label];
    const double lse = detail::softmax_inplace(z);
    total += class_weight(cw, r.label) * (lse - zy);
  }
  return total / static_cast<double>(rows.size());
}

// Gradient of batch_loss, laid out as weights followed by bias.
struct Gradient {
  std::vector<double> weights;
  std::vector<double> bias;
};

inline Gradient batch_gradient(const LinearTagger& tagger, std::span<const LabeledRow> rows,
                               const ClassWeights& cw = {}, double* loss_out = nullptr) {
  const std::size_t L = tagger.label_count();
  Gradient g;
  g.weights.assign(tagger.weights.size(), 0.0);
  g.bias.assign(tagger.bias.size(), 0.0);
  std::vector<double> z(L);
  double total = 0.0;
  const double inv_n = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
  for (const LabeledRow& r : rows) {
    detail::logits_into(tagger, r.x, z);
    const double zy = z[r.label];
    const double lse = detail::softmax_inplace(z);
    const double wy = class_weight(cw, r.label);
    total += wy * (lse - zy);
    z[r.label] -= 1.0;  // z now holds p - onehot(y)
    const double coef = wy * inv_n;
    for (std::size_t j = 0; j < r.x.size(); ++j) {
      const double xj = r.x[j];
      if (xj == 0.0) continue;
      double* gw = g.weights.data() + j * L;
      const double s = coef * xj;
      for (std::size_t c = 0; c < L; ++c) gw[c] += s * z[c];
    }
    for (std::size_t c = 0; c < g.bias.size(); ++c) g.bias[c] += coef * z[c];
  }
  if (loss_out) *loss_out = total * inv_n;
  return g;
}

struct TrainingExample {
  FeatureMatrix features;
  std::vector<LabelId> labels;  // one per feature row
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  LinearTagger tagger;
  std::vector<double> loss_history;  // mean per-unit loss, one entry per epoch
};

struct TrainOptions {
  TaggerConfig tagger;
  ClassWeights class_weights;
  // Called after every epoch with the 1-based epoch number.
  std::function<void(std::size_t, const LinearTagger&)> on_epoch;
};

// Mini-batch gradient descent over snippets: every epoch shuffles the
// example order, and each batch of batch_size snippets contributes the mean
// loss over all of its units. Initialization and shuffling draw from
// separate sub-seeds of hp.seed.
inline TrainResult train(const std::vector<TrainingExample>& examples, const LabelSet& label_set,
                         const Hyperparams& hp, const TrainOptions& options = {}) {
  hp.validate();
  if (examples.empty()) throw DataError("training set is empty");
  const std::size_t width = examples.front().features.width;
  for (const auto& ex : examples) {
    if (ex.features.width != width) throw DataError("training examples have inconsistent feature widths");
    if (ex.labels.size() != ex.features.rows) throw DataError("training example has a label count mismatch");
    for (LabelId y : ex.labels)
      if (y >= label_set.size()) throw DataError("training label out of range");
  }
  if (!options.class_weights.empty() && options.class_weights.size() != label_set.size())
    throw ConfigError("class weight vector must have one entry per label");

  TrainResult result;
  result.tagger = init_tagger(width, label_set, derive_seed(hp.seed, SeedStream::Init), options.tagger);
  LinearTagger& tagger = result.tagger;
  Rng shuffle_rng(derive_seed(hp.seed, SeedStream::Shuffle));

  std::vector<LabeledRow> batch;
  for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffle_rng.permutation(examples.size());
    double epoch_loss = 0.0;
    std::size_t epoch_units = 0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += hp.batch_size, ++batch_index) {
      batch.clear();
      const std::size_t end = std::min(order.size(), begin + hp.batch_size);
      for (std::size_t k = begin; k < end; ++k) {
        const TrainingExample& ex = examples[order[k]];
        for (std::size_t r = 0; r < ex.features.rows; ++r) batch.push_back({ex.features.row(r), ex.labels[r]});
      }
      if (batch.empty()) continue;
      double loss = 0.0;
      const Gradient g = batch_gradient(tagger, batch, options.class_weights, &loss);
      if (!std::isfinite(loss))
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index));
      for (std::size_t i = 0; i < g.weights.size(); ++i) tagger.weights[i] -= hp.learning_rate * g.weights[i];
      for (std::size_t i = 0; i < g.bias.size(); ++i) tagger.bias[i] -= hp.learning_rate * g.bias[i];
      if (!tagger.finite())
        throw TrainingDiverged("non-finite weights after epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index));
      epoch_loss += loss * static_cast<double>(batch.size());
      epoch_units += batch.size();
    }
    result.loss_history.push_back(epoch_units ? epoch_loss / static_cast<double>(epoch_units) : 0.0);
    if (options.on_epoch) options.on_epoch(epoch, tagger);
  }
  return result;
}

using GradientFn = std::function<Gradient(const LinearTagger&, std::span<const LabeledRow>)>;

inline Gradient analytic_gradient(const LinearTagger& t, std::span<const LabeledRow> rows) {
  return batch_gradient(t, rows);
}

// Max relative error |a - n| / max(1e-12, |a| + |n|) between an analytic
// gradient and central differences (step 1e-4) over `samples` coordinates.
// Coordinates where both values are below 1e-8 count as agreeing.
// Rows are rescaled to unit norm first. Coordinates are drawn from the
// weight rows whose feature is nonzero somewhere in the batch (all rows when
// the batch is entirely zero), plus the bias when present.
inline double grad_check(const LinearTagger& tagger, std::span<const LabeledRow> batch, std::uint64_t seed,
                         std::size_t samples = 128, const GradientFn& gradient = analytic_gradient) {
  if (batch.empty()) throw DataError("grad_check needs a non-empty batch");
  constexpr double kStep = 1e-4;
  constexpr double kZero = 1e-8;
  const std::size_t L = tagger.label_count();

  std::vector<std::vector<float>> scaled;
  scaled.reserve(batch.size());
  std::vector<char> active(tagger.input_width, 0);
  for (const LabeledRow& r : batch) {
    detail::check_width(tagger, r.x.size());
    double norm = 0.0;
    for (float v : r.x) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    std::vector<float> v(r.x.begin(), r.x.end());
    if (norm > 0.0)
      for (float& e : v) e = static_cast<float>(e / norm);
    for (std::size_t j = 0; j < v.size(); ++j)
      if (v[j] != 0.0f) active[j] = 1;
    scaled.push_back(std::move(v));
  }
  std::vector<LabeledRow> rows;
  rows.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) rows.push_back({scaled[i], batch[i].label});

  std::vector<std::size_t> candidates;  // flat parameter indices: weights, then bias
  for (std::size_t j = 0; j < tagger.input_width; ++j)
    if (active[j])
      for (std::size_t c = 0; c < L; ++c) candidates.push_back(j * L + c);
  if (candidates.empty())
    for (std::size_t i = 0; i < tagger.weights.size(); ++i) candidates.push_back(i);
  for (std::size_t c = 0; c < tagger.bias.size(); ++c) candidates.push_back(tagger.weights.size() + c);

  const Gradient g = gradient(tagger, rows);
  LinearTagger probe = tagger;
  std::vector<double> z(L);
  auto row_loss = [&](const LabeledRow& r) {
    detail::logits_into(probe, r.x, z);
    const double zy = z[r.label];
    return detail::softmax_inplace(z) - zy;
  };
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t idx = candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
    const bool is_bias = idx >= tagger.weights.size();
    const std::size_t feature = is_bias ? 0 : idx / L;
    double& param = is_bias ? probe.bias[idx - tagger.weights.size()] : probe.weights[idx];
    const double analytic = is_bias ? g.bias[idx - tagger.weights.size()] : g.weights[idx];
    const double saved = param;
    // Rows that do not read the parameter contribute exactly zero to the
    // difference; leaving them out avoids cancellation in the batch mean.
    double diff = 0.0;
    for (const LabeledRow& r : rows) {
      if (!is_bias && r.x[feature] == 0.0f) continue;
      param = saved + kStep;
      const double up = row_loss(r);
      param = saved - kStep;
      diff += up - row_loss(r);
    }
    param = saved;
    const double numeric = diff / (2.0 * kStep * static_cast<double>(rows.size()));
    // Both sides at roundoff level: the relative error is meaningless there.
    if (std::abs(analytic) < kZero && std::abs(numeric) < kZero) continue;
    const double err = std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

enum class Aggregation { Majority, First };

// Collapses token labels to one label per word. Majority takes the most
// frequent label, ties resolved by earliest occurrence within the word.
inline std::vector<LabelId> aggregate_to_words(std::span<const LabelId> token_labels, const TokenAlignment& alignment,
                                               Aggregation mode) {
  if (token_labels.size() != alignment.tokens.size())
    throw DataError("token label count does not match the alignment");
  std::vector<LabelId> out(alignment.words.size(), kOutside);
  for (std::size_t w = 0; w < alignment.words.size(); ++w) {
    const std::size_t first = alignment.first_token(w);
    const std::size_t n = alignment.token_count(w);
    if (mode == Aggregation::First || n == 1) {
      out[w] = token_labels[first];
      continue;
    }
    std::size_t best_count = 0;
    LabelId best = token_labels[first];
    for (std::size_t i = first; i < first + n; ++i) {
      const LabelId cand = token_labels[i];
      bool seen_before = false;
      for (std::size_t k = first; k < i; ++k) seen_before = seen_before || token_labels[k] == cand;
      if (seen_before) continue;
      const auto count =
          static_cast<std::size_t>(std::count(token_labels.begin() + static_cast<std::ptrdiff_t>(first),
                                              token_labels.begin() + static_cast<std::ptrdiff_t>(first + n), cand));
      if (count > best_count) {
        best_count = count;
        best = cand;
      }
    }
    out[w] = best;
  }
  return out;
}

// Maximal runs of equal non-O labels become one span from the run's first
// unit start to its last unit end, gaps included.
inline std::vector<TechniqueSpan> decode_spans(std::span<const LabelId> labels, std::span<const Range> units,
                                               const Text& text) {
  if (labels.size() != units.size()) throw DataError("label count does not match unit count");
  std::vector<TechniqueSpan> spans;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (labels[i] == kOutside) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    TechniqueSpan s;
    s.technique = labels[i];
    s.start = units[i].start;
    s.end = units[j - 1].end;
    s.surface = slice(text, s.start, s.end).value_or(Text{});
    spans.push_back(std::move(s));
    i = j;
  }
  return spans;
}

inline void check_strategy(const LinearTagger& tagger, Strategy strategy) {
  if (strategy_level(strategy) != tagger.config.unit_level)
    throw ConfigError("strategy '" + std::string(strategy_name(strategy)) + "' needs a " +
                      std::string(unit_level_name(strategy_level(strategy))) + "-level tagger, model is " +
                      std::string(unit_level_name(tagger.config.unit_level)) + "-level");
}

inline std::vector<TechniqueSpan> predict_spans(const LinearTagger& tagger, const Snippet& snippet,
                                                const TokenAlignment& alignment, const EmbeddedSequence& seq,
                                                Strategy strategy) {
  check_strategy(tagger, strategy);
  const FeatureMatrix features = build_features(seq, alignment, snippet.genre, tagger.config.unit_level,
                                                tagger.config.use_genre, tagger.config.combine);
  const std::vector<LabelId> units = predict_units(tagger, features);
  switch (strategy) {
    case Strategy::TokenToToken: return decode_spans(units, alignment.token_ranges(), snippet.text);
    case Strategy::TokenToWordMajority:
      return decode_spans(aggregate_to_words(units, alignment, Aggregation::Majority), alignment.word_ranges(),
                          snippet.text);
    case Strategy::TokenToWordFirst:
      return decode_spans(aggregate_to_words(units, alignment, Aggregation::First), alignment.word_ranges(),
                          snippet.text);
    case Strategy::WordToWord: return decode_spans(units, alignment.word_ranges(), snippet.text);
  }
  return {};
}

inline constexpr std::string_view kModelMagic = "SPANTAG1";
inline constexpr std::uint32_t kModelVersion = 1;

inline std::string serialize_model(const LinearTagger& t, const std::string& config_json) {
  ByteWriter w;
  w.bytes(kModelMagic);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(t.input_width));
  w.u32(static_cast<std::uint32_t>(t.label_count()));
  w.u8(t.config.unit_level == UnitLevel::Token ? 0 : 1);
  w.u8(t.config.use_genre ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(t.config.combine));
  w.u8(t.config.bias ? 1 : 0);
  w.str(config_json);
  for (const auto& name : t.label_set.names()) w.str(name);
  for (double x : t.weights) w.f32(static_cast<float>(x));
  for (double x : t.bias) w.f32(static_cast<float>(x));
  return w.data();
}

struct LoadedModel {
  LinearTagger tagger;
  std::string config_json;
};

inline LoadedModel deserialize_model(const std::string& data, const std::string& what) {
  ByteReader r(data, what);
  if (r.bytes(kModelMagic.size()) != kModelMagic) throw DataError(what + ": not a model file");
  if (const auto v = r.u32(); v != kModelVersion)
    throw DataError(what + ": unsupported model version " + std::to_string(v));
  LoadedModel m;
  LinearTagger& t = m.tagger;
  t.input_width = r.u32();
  const std::uint32_t L = r.u32();
  t.config.unit_level = r.u8() == 0 ? UnitLevel::Token : UnitLevel::Word;
  t.config.use_genre = r.u8() != 0;
  const std::uint8_t combine = r.u8();
  if (combine > 2) throw DataError(what + ": bad combine code");
  t.config.combine = static_cast<Combine>(combine);
  t.config.bias = r.u8() != 0;
  m.config_json = r.str();
  std::vector<std::string> names;
  for (std::uint32_t i = 0; i < L; ++i) names.push_back(r.str());
  if (names.empty() || names.front() != "O") throw DataError(what + ": first label must be 'O'");
  t.label_set = LabelSet(std::vector<std::string>(names.begin() + 1, names.end()));
  const std::size_t n = static_cast<std::size_t>(t.input_width) * L;
  if (r.remaining() != 4 * (n + (t.config.bias ? L : 0))) throw DataError(what + ": weight block has the wrong size");
  t.weights.resize(n);
  for (double& x : t.weights) x = r.f32();
  if (t.config.bias) {
    t.bias.resize(L);
    for (double& x : t.bias) x = r.f32();
  }
  return m;
}

inline void save_model(const LinearTagger& t, const std::string& config_json, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(t, config_json));
}

// Fails unless the stored label inventory equals `expected`.
inline LoadedModel load_model(const std::filesystem::path& path, const LabelSet& expected) {
  LoadedModel m = deserialize_model(read_file(path), path.string());
  if (!(m.tagger.label_set == expected))
    throw DataError(path.string() + ": model has " + std::to_string(m.tagger.label_count()) +
                    " labels that do not match the label file (" + std::to_string(expected.size()) + " labels)");
  return m;
}

}  // namespace spantag
