#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scoreflow {

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : Error {
  using Error::Error;
};

struct DimensionMismatch : DomainError {
  using DomainError::DomainError;
};

struct EmptySelection : Error {
  using Error::Error;
};

struct InvalidRange : Error {
  using Error::Error;
};

struct InvalidRho : Error {
  using Error::Error;
};

struct MissingFrame : Error {
  using Error::Error;
};

struct MissingAuxiliary : Error {
  using Error::Error;
};

struct InvalidParameter : Error {
  using Error::Error;
};

// Raised by solvers and the training loop when a NaN/Inf shows up.
struct NumericalDivergence : Error {
  NumericalDivergence(const std::string& where, std::size_t step)
      : Error(where + ": non-finite value at step " + std::to_string(step)), where(where), step_index(step) {}
  std::string where;
  std::size_t step_index;
};

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

// Seeded generator passed explicitly through every stochastic operation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  // Open interval (0, 1); used where a draw of exactly 0 would be degenerate.
  double uniform_open() {
    double u = 0.0;
    while (u == 0.0) u = uniform_(engine_);
    return u;
  }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  Vec normal_vec(std::size_t n) {
    Vec v(n);
    for (auto& e : v) e = normal();
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// splitmix64 finalizer; derives independent stream seeds from (seed, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Small vector helpers
// ---------------------------------------------------------------------------

inline void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionMismatch(std::string(what) + ": length " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
  }
}

inline bool all_finite(std::span<const double> v) {
  for (double e : v)
    if (!std::isfinite(e)) return false;
  return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

// a*x + b*y
inline Vec axpby(double a, std::span<const double> x, double b, std::span<const double> y) {
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

inline Vec scaled(std::span<const double> x, double a) {
  Vec out(x.begin(), x.end());
  for (auto& e : out) e *= a;
  return out;
}

inline double log_sum_exp(std::span<const double> v) {
  double m = -INFINITY;
  for (double e : v) m = std::max(m, e);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double e : v) s += std::exp(e - m);
  return m + std::log(s);
}

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

}  // namespace scoreflow
