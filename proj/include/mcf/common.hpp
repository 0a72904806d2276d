// Shared error types, RNG stream derivation, and a small parallel-for.
#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mcf {

// Exit-code mapping in the CLI: ConfigError -> 2, DataError -> 3,
// EstimationError -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EstimationError : std::runtime_error {
  explicit EstimationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when weight extraction at an evaluation point had to skip more
// than half of the available trees.
struct NoSupportError : EstimationError {
  NoSupportError(const std::string& msg, int skipped_trees)
      : EstimationError(msg), skipped(skipped_trees) {}
  int skipped;
};

namespace rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream domains keep independently-consumed generators disjoint; results
// must not depend on scheduling, so every parallel unit of work gets its
// own stream keyed by (master seed, domain, index).
enum class Domain : std::uint64_t {
  split = 1,
  tree = 2,
  fold = 3,
  replication = 4,
  population = 5,
  tuning = 6,
  centering = 7,
};

inline std::mt19937_64 make_stream(std::uint64_t master_seed, Domain domain,
                                   std::uint64_t index) {
  std::uint64_t s = master_seed;
  (void)splitmix64(s);
  s ^= static_cast<std::uint64_t>(domain) * 0x9e3779b97f4a7c15ULL;
  (void)splitmix64(s);
  s ^= index * 0xd1b54a32d192ed03ULL;
  return std::mt19937_64(splitmix64(s));
}

}  // namespace rng

// Runs fn(i) for i in [0, n). fn(i) must only write state owned by index i;
// any cross-index reduction has to happen afterwards in index order so that
// results do not depend on the thread count.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  int k = std::min<int>(threads, static_cast<int>(n));
  pool.reserve(static_cast<std::size_t>(k));
  for (int t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace mcf
