#pragma once

// Deterministic randomness. std::mt19937_64 is bit-specified by the standard
// but the <random> distributions are not, so the mappings to doubles, bounded
// integers and permutations live here.

#include <cstdint>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

namespace spantag {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Sub-seed derivation from the single global seed: each consumer names its
// stream, and the sub-seed is splitmix64(global ^ fnv1a64(stream)).
enum class SeedStream { Init, Shuffle, Folds, Embedding, GradCheck };

constexpr std::string_view seed_stream_name(SeedStream s) {
  switch (s) {
    case SeedStream::Init: return "init";
    case SeedStream::Shuffle: return "shuffle";
    case SeedStream::Folds: return "folds";
    case SeedStream::Embedding: return "embedding";
    case SeedStream::GradCheck: return "gradcheck";
  }
  return "";
}

constexpr std::uint64_t derive_seed(std::uint64_t global, SeedStream stream) {
  return splitmix64(global ^ fnv1a64(seed_stream_name(stream)));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in [0, n) by rejection; n > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle(p);
    return p;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace spantag
