#pragma once

// Contextual vectors for tokens plus the sequence-level [CLS] vector, and
// assembly of classifier input rows (with optional genre one-hot).
//
// Precomputed embedding files come in two layouts:
//
// JSONL, one record per snippet:
//   {"id": str, "cls": [f32; d], "tokens": [[f32; d], ...]}
//
// Binary, all integers and floats little-endian:
//   magic     8 bytes  "SPANEMB1"
//   dim       u32
//   records   u32
//   id table  per record: u32 id_len, id bytes (UTF-8), u32 token_count
//   vectors   per record, in id-table order: cls[dim] f32,
//             then token_count rows of [dim] f32

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "spantag/binary.hpp"
#include "spantag/corpus.hpp"
#include "spantag/rng.hpp"
#include "spantag/segment.hpp"

namespace spantag {

struct EmbeddedSequence {
  std::vector<float> cls;
  std::vector<std::vector<float>> token_vectors;

  std::size_t dim() const { return cls.size(); }
  friend bool operator==(const EmbeddedSequence&, const EmbeddedSequence&) = default;
};

// How the [CLS] vector joins each unit vector: concatenation (width 2d),
// element-wise sum (width d), or ignored (width d).
enum class Combine { Concat, Add, TokenOnly };

inline std::string_view combine_name(Combine c) {
  switch (c) {
    case Combine::Concat: return "concat";
    case Combine::Add: return "add";
    case Combine::TokenOnly: return "token-only";
  }
  return "";
}

inline std::optional<Combine> parse_combine(std::string_view s) {
  if (s == "concat") return Combine::Concat;
  if (s == "add") return Combine::Add;
  if (s == "token-only" || s == "token_only") return Combine::TokenOnly;
  return std::nullopt;
}

inline constexpr std::size_t kGenreWidth = 2;

inline std::size_t feature_width(std::size_t dim, bool use_genre, Combine combine = Combine::Concat) {
  const std::size_t base = combine == Combine::Concat ? 2 * dim : dim;
  return base + (use_genre ? kGenreWidth : 0);
}

// Row-major, one row per unit.
struct FeatureMatrix {
  UnitLevel unit_level = UnitLevel::Token;
  std::size_t width = 0;
  std::size_t rows = 0;
  std::vector<float> data;

  std::span<const float> row(std::size_t i) const { return {data.data() + i * width, width}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * width, width}; }
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual EmbeddedSequence embed(const Snippet& snippet, const TokenAlignment& alignment) const = 0;
};

inline constexpr std::size_t kHashActive = 8;

// Stand-in embedder: k = min(8, d) coordinates picked by a seeded hash of the
// token piece are set to +-1/sqrt(k). Vectors depend only on (piece, seed, d).
inline std::vector<float> hash_token_vector(std::string_view piece, std::uint64_t seed, std::size_t dim) {
  std::vector<float> v(dim, 0.0f);
  if (dim == 0) return v;
  const std::size_t k = std::min(kHashActive, dim);
  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(k)));
  std::uint64_t state = splitmix64(fnv1a64(piece) ^ splitmix64(seed));
  std::size_t placed = 0;
  while (placed < k) {
    state = splitmix64(state);
    const std::size_t coord = static_cast<std::size_t>(state % dim);
    if (v[coord] != 0.0f) continue;
    v[coord] = (state >> 63) ? -scale : scale;
    ++placed;
  }
  return v;
}

// cls is the coordinate-wise mean of the token vectors (zeros when empty).
inline EmbeddedSequence hash_embed(const Snippet& /*snippet*/, const TokenAlignment& alignment,
                                   std::uint64_t seed, std::size_t dim) {
  EmbeddedSequence seq;
  seq.token_vectors.reserve(alignment.tokens.size());
  std::vector<double> sum(dim, 0.0);
  for (const Token& t : alignment.tokens) {
    auto v = hash_token_vector(t.piece(), seed, dim);
    for (std::size_t j = 0; j < dim; ++j) sum[j] += v[j];
    seq.token_vectors.push_back(std::move(v));
  }
  seq.cls.assign(dim, 0.0f);
  if (!alignment.tokens.empty()) {
    const double n = static_cast<double>(alignment.tokens.size());
    for (std::size_t j = 0; j < dim; ++j) seq.cls[j] = static_cast<float>(sum[j] / n);
  }
  return seq;
}

class HashEmbeddingProvider final : public EmbeddingProvider {
 public:
  HashEmbeddingProvider(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
    if (dim == 0) throw ConfigError("embedding dimension must be at least 1");
  }

  std::size_t dim() const override { return dim_; }
  std::uint64_t seed() const { return seed_; }

  EmbeddedSequence embed(const Snippet& snippet, const TokenAlignment& alignment) const override {
    return hash_embed(snippet, alignment, seed_, dim_);
  }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

inline constexpr std::string_view kEmbeddingMagic = "SPANEMB1";

// Vectors produced elsewhere (e.g. by a transformer dump), returned verbatim.
class StoredEmbeddingProvider final : public EmbeddingProvider {
 public:
  StoredEmbeddingProvider() = default;

  void add(const std::string& id, EmbeddedSequence seq) {
    if (seq.cls.empty()) throw DataError("embedding for '" + id + "' has an empty cls vector");
    if (dim_ == 0) dim_ = seq.cls.size();
    check_dims(id, seq);
    if (!records_.emplace(id, std::move(seq)).second)
      throw DataError("duplicate embedding record for '" + id + "'");
  }

  std::size_t dim() const override { return dim_; }
  std::size_t size() const { return records_.size(); }
  bool contains(const std::string& id) const { return records_.count(id) > 0; }
  const EmbeddedSequence& at(const std::string& id) const { return records_.at(id); }

  EmbeddedSequence embed(const Snippet& snippet, const TokenAlignment& alignment) const override {
    auto it = records_.find(snippet.id);
    if (it == records_.end()) throw DataError("no embedding record for snippet '" + snippet.id + "'");
    if (it->second.token_vectors.size() != alignment.tokens.size())
      throw DataError("snippet '" + snippet.id + "': embedding file has " +
                      std::to_string(it->second.token_vectors.size()) + " token vectors, tokenizer produced " +
                      std::to_string(alignment.tokens.size()));
    return it->second;
  }

 private:
  void check_dims(const std::string& id, const EmbeddedSequence& seq) const {
    bool ok = seq.cls.size() == dim_;
    for (const auto& v : seq.token_vectors) ok = ok && v.size() == dim_;
    if (!ok) throw DataError("embedding for '" + id + "' does not have dimension " + std::to_string(dim_));
  }

  std::unordered_map<std::string, EmbeddedSequence> records_;
  std::size_t dim_ = 0;
};

namespace detail {

inline std::vector<float> json_vector(const json& v, const std::string& where) {
  if (!v.is_array()) throw DataError(where + ": expected an array of numbers");
  std::vector<float> out;
  out.reserve(v.size());
  for (const json& x : v) {
    if (!x.is_number()) throw DataError(where + ": expected an array of numbers");
    out.push_back(x.get<float>());
  }
  return out;
}

inline StoredEmbeddingProvider read_embeddings_jsonl(const std::filesystem::path& path) {
  StoredEmbeddingProvider provider;
  for_each_json_line(path, [&](const json& obj, const std::string& where) {
    const std::string id = require_string(obj, "id", where);
    EmbeddedSequence seq;
    seq.cls = json_vector(require_field(obj, "cls", where), where);
    const json& toks = require_field(obj, "tokens", where);
    if (!toks.is_array()) throw DataError(where + ": 'tokens' must be an array");
    for (const json& t : toks) seq.token_vectors.push_back(json_vector(t, where));
    try {
      provider.add(id, std::move(seq));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  });
  return provider;
}

inline StoredEmbeddingProvider read_embeddings_binary(const std::string& data, const std::string& what) {
  ByteReader r(data, what);
  if (r.bytes(kEmbeddingMagic.size()) != kEmbeddingMagic) throw DataError(what + ": bad magic");
  const std::uint32_t dim = r.u32();
  const std::uint32_t count = r.u32();
  if (dim == 0 && count != 0) throw DataError(what + ": zero dimension");
  std::vector<std::pair<std::string, std::uint32_t>> table;
  table.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string id = r.str();
    const std::uint32_t n = r.u32();
    table.emplace_back(std::move(id), n);
  }
  StoredEmbeddingProvider provider;
  for (const auto& [id, n] : table) {
    EmbeddedSequence seq;
    seq.cls.resize(dim);
    for (auto& x : seq.cls) x = r.f32();
    seq.token_vectors.assign(n, std::vector<float>(dim));
    for (auto& v : seq.token_vectors)
      for (auto& x : v) x = r.f32();
    provider.add(id, std::move(seq));
  }
  if (!r.at_end()) throw DataError(what + ": trailing bytes after the last record");
  return provider;
}

}  // namespace detail

// Detects the layout by magic bytes. Every corpus snippet must have a record;
// token counts are checked against the alignment when embed() is called.
inline StoredEmbeddingProvider load_embeddings(const std::filesystem::path& path, const Corpus& corpus) {
  const std::string data = read_file(path);
  StoredEmbeddingProvider provider =
      data.compare(0, kEmbeddingMagic.size(), kEmbeddingMagic) == 0
          ? detail::read_embeddings_binary(data, path.string())
          : detail::read_embeddings_jsonl(path);
  for (const Snippet& s : corpus)
    if (!provider.contains(s.id))
      throw DataError(path.string() + ": no embedding record for snippet '" + s.id + "'");
  return provider;
}

struct EmbeddingRecord {
  std::string id;
  EmbeddedSequence seq;
};

inline std::string embeddings_to_jsonl(const std::vector<EmbeddingRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += json{{"id", r.id}, {"cls", r.seq.cls}, {"tokens", r.seq.token_vectors}}.dump();
    out += '\n';
  }
  return out;
}

inline std::string embeddings_to_binary(const std::vector<EmbeddingRecord>& records) {
  ByteWriter w;
  w.bytes(kEmbeddingMagic);
  const std::size_t dim = records.empty() ? 0 : records.front().seq.dim();
  w.u32(static_cast<std::uint32_t>(dim));
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.str(r.id);
    w.u32(static_cast<std::uint32_t>(r.seq.token_vectors.size()));
  }
  for (const auto& r : records) {
    if (r.seq.dim() != dim) throw DataError("embedding records have mixed dimensions");
    for (float x : r.seq.cls) w.f32(x);
    for (const auto& v : r.seq.token_vectors)
      for (float x : v) w.f32(x);
  }
  return w.data();
}

// Token level: row i = [cls | token_i]. Word level: row j = [cls | max-pool
// over word j's tokens]. Genre appends (1,0) for tweets, (0,1) for paragraphs.
inline FeatureMatrix build_features(const EmbeddedSequence& seq, const TokenAlignment& alignment, Genre genre,
                                    UnitLevel level, bool use_genre, Combine combine = Combine::Concat) {
  const std::size_t d = seq.dim();
  if (seq.token_vectors.size() != alignment.tokens.size())
    throw DataError("embedded sequence has " + std::to_string(seq.token_vectors.size()) +
                    " token vectors for " + std::to_string(alignment.tokens.size()) + " tokens");
  FeatureMatrix m;
  m.unit_level = level;
  m.width = feature_width(d, use_genre, combine);
  m.rows = level == UnitLevel::Token ? alignment.tokens.size() : alignment.words.size();
  m.data.assign(m.rows * m.width, 0.0f);

  std::vector<float> unit(d);
  for (std::size_t r = 0; r < m.rows; ++r) {
    if (level == UnitLevel::Token) {
      unit = seq.token_vectors[r];
    } else {
      const std::size_t first = alignment.first_token(r);
      const std::size_t n = alignment.token_count(r);
      unit = seq.token_vectors[first];
      for (std::size_t t = first + 1; t < first + n; ++t)
        for (std::size_t j = 0; j < d; ++j) unit[j] = std::max(unit[j], seq.token_vectors[t][j]);
    }
    auto out = m.row(r);
    std::size_t col = 0;
    switch (combine) {
      case Combine::Concat:
        std::copy(seq.cls.begin(), seq.cls.end(), out.begin());
        std::copy(unit.begin(), unit.end(), out.begin() + static_cast<std::ptrdiff_t>(d));
        col = 2 * d;
        break;
      case Combine::Add:
        for (std::size_t j = 0; j < d; ++j) out[j] = seq.cls[j] + unit[j];
        col = d;
        break;
      case Combine::TokenOnly:
        std::copy(unit.begin(), unit.end(), out.begin());
        col = d;
        break;
    }
    if (use_genre) {
      out[col] = genre == Genre::Tweet ? 1.0f : 0.0f;
      out[col + 1] = genre == Genre::Paragraph ? 1.0f : 0.0f;
    }
  }
  return m;
}

}  // namespace spantag
