// Shared plumbing: error type, deterministic RNG, tiny thread helper.
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace eqm {

enum class Errc {
  invalid_argument = 1,
  io = 2,
  numeric = 3,
  unsupported = 4,
};

// All recoverable failures in the library throw this; the C API translates
// it to error codes, the CLI to exit statuses.
class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }

private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& msg);

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

// Deterministic RNG. Wraps mt19937_64 but draws uniforms/normals with fixed
// arithmetic instead of std distributions, whose output is
// implementation-defined. Same seed, same stream, on any platform.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : s_(seed ? seed : 0x9e3779b97f4a7c15ull) {
    // mt19937_64 needs warm-up from a scalar seed; SplitMix64 is the
    // recommended seeder.
    for (int i = 0; i < 312; ++i) state_[i] = splitmix();
    idx_ = 312;
  }

  std::uint64_t next_u64();

  // Uniform in [0,1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n), n > 0.
  std::uint64_t below(std::uint64_t n);

  int range(int lo, int hi) {  // inclusive ends
    return lo + int(below(std::uint64_t(hi - lo + 1)));
  }

  // Standard normal via Box-Muller; caches the second value.
  double normal();

  template <typename T>
  void shuffle(T* data, std::size_t n) {
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = below(i);
      std::swap(data[i - 1], data[j]);
    }
  }

private:
  std::uint64_t splitmix() {
    std::uint64_t z = (s_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  void twist();

  std::uint64_t s_;
  std::uint64_t state_[312];
  int idx_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Runs fn(i) for i in [0,n). With threads <= 1 this is a plain loop; with
// more, a chunked std::thread fan-out. Work items must be independent.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// Global worker cap set by the CLI --threads flag (default 1).
int worker_threads();
void set_worker_threads(int n);

// Stderr logging gated on the --verbose level (0 silent, 1 progress,
// 2 chatty).
int log_verbosity();
void set_log_verbosity(int level);
void logv(int level, const std::string& msg);

}  // namespace eqm
