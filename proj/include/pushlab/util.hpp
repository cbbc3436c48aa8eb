#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pushlab {

// ---------------------------------------------------------------------------
// errors

struct SimulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// planar vector

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Vec2& operator-=(const Vec2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }

  double norm() const { return std::sqrt(x * x + y * y); }
  double norm_sq() const { return x * x + y * y; }
};

inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
inline Vec2 perp(const Vec2& a) { return {-a.y, a.x}; }
inline Vec2 rotate(const Vec2& a, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * a.x - s * a.y, s * a.x + c * a.y};
}

// normalized angle in (-pi, pi]
inline double wrap_angle(double theta) {
  double a = std::remainder(theta, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

// ---------------------------------------------------------------------------
// deterministic rng
//
// All random draws in the project go through this wrapper so that results do
// not depend on the standard library's distribution implementations.

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    // splitmix64 scramble so that nearby seeds give unrelated streams
    state_ = seed + 0x9E3779B97F4A7C15ull;
    for (auto& s : mt_state_) {
      s = next_splitmix();
    }
    idx_ = kN;
    has_spare_ = false;
  }

  // uniform in [0, 1)
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // integer in [lo, hi] inclusive
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // exponential with scale beta (mean beta)
  double exponential(double beta) { return -beta * std::log1p(-uniform01()); }

  // standard normal via Box-Muller, one spare cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // derived stream, independent of draws made on this one
  Rng spawn(std::uint64_t salt) const {
    Rng r;
    r.reseed(state_ ^ (salt * 0xBF58476D1CE4E5B9ull + 0x94D049BB133111EBull));
    return r;
  }

  std::uint64_t next_u64() {
    if (idx_ >= kN) twist();
    std::uint64_t x = mt_state_[idx_++];
    x ^= (x >> 29) & 0x5555555555555555ull;
    x ^= (x << 17) & 0x71D67FFFEDA60000ull;
    x ^= (x << 37) & 0xFFF7EEE000000000ull;
    x ^= x >> 43;
    return x;
  }

 private:
  static constexpr int kN = 312;
  static constexpr int kM = 156;
  static constexpr std::uint64_t kMatrixA = 0xB5026F5AA96619E9ull;
  static constexpr std::uint64_t kUpperMask = 0xFFFFFFFF80000000ull;
  static constexpr std::uint64_t kLowerMask = 0x7FFFFFFFull;

  std::uint64_t next_splitmix() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  void twist() {
    for (int i = 0; i < kN; ++i) {
      const std::uint64_t x =
          (mt_state_[i] & kUpperMask) | (mt_state_[(i + 1) % kN] & kLowerMask);
      std::uint64_t xa = x >> 1;
      if (x & 1ull) xa ^= kMatrixA;
      mt_state_[i] = mt_state_[(i + kM) % kN] ^ xa;
    }
    idx_ = 0;
  }

  std::uint64_t state_ = 0;
  std::uint64_t mt_state_[kN] = {};
  int idx_ = kN;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// bounded parallelism
//
// PUSHLAB_THREADS caps the worker count (default 1 = sequential). Work items
// must be independent and write only to their own slot so results do not
// depend on scheduling.

inline int max_threads() {
  if (const char* env = std::getenv("PUSHLAB_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(n, max_threads());
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::atomic<int> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace pushlab
