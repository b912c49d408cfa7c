#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rawhdr {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class ValueError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class NumericError : public Error {
public:
  using Error::Error;
};

using Shape = std::vector<int>;

inline std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense row-major array of doubles. 3-d images use (height, width, channels).
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(shape_size(shape)), 0.0) {}
  Tensor(Shape s, double fill)
      : shape(std::move(s)), data(static_cast<std::size_t>(shape_size(shape)), fill) {}

  static Tensor scalar(double v) {
    Tensor t(Shape{1});
    t.data[0] = v;
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // (h, w, c) accessors
  double& at(int y, int x, int c) {
    return data[static_cast<std::size_t>((static_cast<std::int64_t>(y) * shape[1] + x) * shape[2] + c)];
  }
  double at(int y, int x, int c) const {
    return data[static_cast<std::size_t>((static_cast<std::int64_t>(y) * shape[1] + x) * shape[2] + c)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_value() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : data) m = std::max(m, v);
    return m;
  }

  double min_value() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : data) m = std::min(m, v);
    return m;
  }

  double mean_value() const {
    if (data.empty()) return 0.0;
    double s = 0.0;
    for (double v : data) s += v;
    return s / static_cast<double>(data.size());
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

inline std::uint64_t hash_str(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Deterministic RNG. mt19937_64 is bit-exact across platforms; the
/// distributions are hand-rolled because std:: ones are not.
struct Rng {
  std::mt19937_64 eng;
  bool has_spare = false;
  double spare = 0.0;

  explicit Rng(std::uint64_t seed) : eng(seed) {}

  std::uint64_t next_u64() { return eng(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // standard normal via Box-Muller
  double normal() {
    if (has_spare) {
      has_spare = false;
      return spare;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare = r * std::sin(theta);
    has_spare = true;
    return r * std::cos(theta);
  }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    if (n <= 0) throw ValueError("uniform_int: n must be positive");
    return static_cast<int>(uniform() * static_cast<double>(n));
  }
};

inline Tensor random_tensor(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_normal_tensor(Shape s, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = stddev * rng.normal();
  return t;
}

}  // namespace rawhdr
