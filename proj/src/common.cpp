#include "common.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>
#include <vector>

namespace eqm {

void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

void Rng::twist() {
  // mt19937_64 constants.
  constexpr std::uint64_t kUpper = 0xffffffff80000000ull;
  constexpr std::uint64_t kLower = 0x7fffffffull;
  constexpr std::uint64_t kMatrixA = 0xb5026f5aa96619e9ull;
  for (int i = 0; i < 312; ++i) {
    std::uint64_t x = (state_[i] & kUpper) | (state_[(i + 1) % 312] & kLower);
    std::uint64_t xa = x >> 1;
    if (x & 1ull) xa ^= kMatrixA;
    state_[i] = state_[(i + 156) % 312] ^ xa;
  }
  idx_ = 0;
}

std::uint64_t Rng::next_u64() {
  if (idx_ >= 312) twist();
  std::uint64_t x = state_[idx_++];
  x ^= (x >> 29) & 0x5555555555555555ull;
  x ^= (x << 17) & 0x71d67fffeda60000ull;
  x ^= (x << 37) & 0xfff7eee000000000ull;
  x ^= x >> 43;
  return x;
}

std::uint64_t Rng::below(std::uint64_t n) {
  require(n > 0, Errc::invalid_argument, "Rng::below: n must be positive");
  // Rejection sampling to avoid modulo bias.
  std::uint64_t limit = ~0ull - (~0ull % n + 1) % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x > limit);
  return x % n;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

namespace {
std::atomic<int> g_threads{1};
std::atomic<int> g_verbosity{0};
}

int worker_threads() { return g_threads.load(); }

void set_worker_threads(int n) { g_threads.store(n < 1 ? 1 : n); }

int log_verbosity() { return g_verbosity.load(); }

void set_log_verbosity(int level) { g_verbosity.store(level < 0 ? 0 : level); }

void logv(int level, const std::string& msg) {
  if (level > g_verbosity.load()) return;
  std::fputs(msg.c_str(), stderr);
  std::fputc('\n', stderr);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads < 1) threads = 1;
  if (threads == 1 || n <= 1) {
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
  int nt = int(std::min<std::size_t>(std::size_t(threads), n));
  pool.reserve(std::size_t(nt - 1));
  for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

}  // namespace eqm
