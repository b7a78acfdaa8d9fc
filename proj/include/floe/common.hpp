#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace floe {

// Structured errors. `code()` is stable and machine-parsable; the CLI maps
// each code to a distinct exit status.
class Error : public std::runtime_error {
 public:
  Error(const char* code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  const char* code() const noexcept { return code_; }

 private:
  const char* code_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};
struct DataError : Error {
  explicit DataError(const std::string& m) : Error("data", m) {}
};
struct CflError : Error {
  explicit CflError(const std::string& m) : Error("cfl", m) {}
};

inline std::string strprintf(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  va_list ap2;
  va_copy(ap2, ap);
  int n = std::vsnprintf(nullptr, 0, fmt, ap);
  va_end(ap);
  std::string s(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(s.data(), s.size() + 1, fmt, ap2);
  va_end(ap2);
  return s;
}

// 64-byte-aligned storage for every numeric buffer. Keeping all buffers on
// the same alignment pins Eigen's vectorized kernels to one code path, which
// makes results bitwise reproducible run to run (head/tail peeling in its
// reductions depends on pointer alignment).
template <class T, std::size_t Align = 64>
struct AlignedAlloc {
  using value_type = T;
  template <class U>
  struct rebind {
    using other = AlignedAlloc<U, Align>;
  };
  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U, Align>&) {}

  T* allocate(std::size_t n) {
    std::size_t bytes = (n * sizeof(T) + Align - 1) / Align * Align;
    if (bytes == 0) bytes = Align;
    void* p = std::aligned_alloc(Align, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }

  template <class U>
  bool operator==(const AlignedAlloc<U, Align>&) const {
    return true;
  }
};

template <class T>
using AVec = std::vector<T, AlignedAlloc<T>>;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG. Distributions are hand-rolled on top of the raw 64-bit
// stream so generated values are identical on every platform and compiler.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : s_(splitmix64(seed ^ 0x6a09e667f3bcc908ULL)) {}

  // Derive an independent stream, e.g. one per epoch or per substream id.
  Rng derive(uint64_t stream) const {
    Rng r;
    r.s_ = splitmix64(s_ ^ splitmix64(stream + 0x1234abcdULL));
    return r;
  }

  uint64_t next_u64() {
    s_ = splitmix64(s_);
    return s_;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  // Standard normal via Box-Muller (cached spare kept for determinism).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t s_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace floe
