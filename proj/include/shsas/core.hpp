#pragma once

// Shared vocabulary for the SH-SAS toolkit: vector types, error classes,
// a counter-style keyed RNG and a static-chunk parallel_for.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace shsas {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using cplx = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;

// Error hierarchy. The CLI maps these onto exit codes (usage 2, data 3,
// numeric divergence 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Stream of uniform numbers fully determined by (seed, k1, k2, k3). Two
// streams with different keys are independent for practical purposes, so
// work can be split across threads without changing the numbers drawn.
class KeyedRng {
 public:
  explicit KeyedRng(std::uint64_t seed, std::uint64_t k1 = 0, std::uint64_t k2 = 0,
                    std::uint64_t k3 = 0) {
    std::uint64_t s = detail::splitmix64(seed);
    s = detail::splitmix64(s ^ (k1 + 0x632be59bd9b4e019ULL));
    s = detail::splitmix64(s ^ (k2 + 0x8cb92ba72f3d8dd7ULL));
    s = detail::splitmix64(s ^ (k3 + 0xd1b54a32d192ed03ULL));
    state_ = s;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return detail::splitmix64(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  Vec3 unit_vector() {
    const double z = uniform(-1.0, 1.0);
    const double phi = uniform(0.0, 2.0 * kPi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
  }

 private:
  std::uint64_t state_ = 0;
};

// Global cap on internal parallelism. One thread guarantees bit-identical
// results; larger counts keep results deterministic for a fixed count.
inline std::atomic<int>& thread_count_storage() {
  static std::atomic<int> n{1};
  return n;
}

inline int thread_count() { return thread_count_storage().load(); }

inline void set_thread_count(int n) { thread_count_storage().store(std::max(1, n)); }

// Calls fn(begin, end, chunk) over static contiguous chunks of [0, n).
// Chunk boundaries depend only on n and the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, int threads = thread_count()) {
  if (n == 0) return;
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  const std::size_t chunks = std::min(workers, n);
  if (chunks == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  std::vector<std::exception_ptr> errors(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t begin = n * c / chunks;
    const std::size_t end = n * (c + 1) / chunks;
    pool.emplace_back([&, begin, end, c] {
      try {
        fn(begin, end, c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::size_t parallel_chunks(std::size_t n, int threads = thread_count()) {
  return std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), std::max<std::size_t>(n, 1));
}

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

// Wraps an angle difference into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

}  // namespace shsas
