#pragma once
// Shared plumbing: error taxonomy, deterministic RNG, small utilities.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mrc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands; messages name both shapes.
struct DimensionError : Error { using Error::Error; };
// Non-finite input where a finite value is required, log of non-positive, etc.
struct NumericError : Error { using Error::Error; };
// Invalid configuration value or unknown key.
struct ConfigError : Error { using Error::Error; };
// API misuse (non-scalar backward root, double backward, ...).
struct UsageError : Error { using Error::Error; };
// Malformed input data (JSON, config file).
struct ParseError : Error { using Error::Error; };
// Structurally valid file with inconsistent content (bad row width, ...).
struct FormatError : Error { using Error::Error; };
// Character range that maps to no token.
struct AlignmentError : Error { using Error::Error; };

// Counter-based stream (splitmix64 over seed + i*gamma). Output i depends only
// on (seed, i), so the state serializes as two integers and replay is exact.
// Every stochastic choice in the system (init, dropout, unk masking, step
// dropout, shuffling) draws from one of these.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), counter_(0) {}

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  bool bernoulli(double p) { return next_double() < p; }

  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    // modulo bias is immaterial for the tiny n used here (step counts, corpus sizes)
    return next_u64() % n;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }
  void restore(std::uint64_t seed, std::uint64_t counter) {
    seed_ = seed;
    counter_ = counter;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string read_file(const std::string& path);           // throws Error if unreadable
void write_file_atomic(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);

}  // namespace mrc
