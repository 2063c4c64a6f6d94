#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace reghorizon {

// Thrown when a value leaves the finite-float domain (NaN/Inf).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown on invalid configuration values.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown on malformed data (batching, corpora, results files).
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when an analysis cannot proceed (rank deficiency, too few points).
struct analysis_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline long numel(const std::vector<int>& shape) {
  long n = 1;
  for (int e : shape) n *= e;
  return n;
}

// Dense row-major 64-bit float array. Gradients live on the graph nodes,
// not here; a Tensor is plain value storage.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> v)
      : shape(std::move(s)), values(std::move(v)) {
    if (numel(shape) != static_cast<long>(values.size()))
      throw std::invalid_argument("Tensor: shape/value length mismatch");
  }

  static Tensor zeros(std::vector<int> s) {
    long n = numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
  }
  static Tensor full(std::vector<int> s, double x) {
    long n = numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), x));
  }
  static Tensor scalar(double x) { return Tensor({1}, {x}); }

  long size() const { return static_cast<long>(values.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int r, int c) { return values[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return values[static_cast<size_t>(r) * cols() + c]; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
  void require_finite(const char* where) const {
    if (!all_finite()) throw numeric_error(std::string("non-finite value in ") + where);
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

// --- deterministic counter-based randomness -------------------------------
//
// All randomness in the project flows through stateless hashing of
// (seed, stream, counter, element). Identical keys give identical draws on
// every platform, which is what makes R-drop's per-pass masks and full-run
// determinism reproducible.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_keys(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

struct RngStream {
  uint64_t seed = 0;
  uint64_t stream = 0;

  RngStream() = default;
  RngStream(uint64_t s, uint64_t st) : seed(s), stream(st) {}

  RngStream substream(uint64_t k) const { return RngStream(seed, mix_keys(stream, k)); }

  uint64_t bits(uint64_t counter, uint64_t element) const {
    return splitmix64(mix_keys(mix_keys(seed, stream), mix_keys(counter, element)));
  }

  // uniform in [0, 1)
  double uniform(uint64_t counter, uint64_t element) const {
    return static_cast<double>(bits(counter, element) >> 11) * 0x1.0p-53;
  }

  // standard normal via Box-Muller on two counter-derived uniforms
  double normal(uint64_t counter, uint64_t element) const {
    double u1 = uniform(counter, 2 * element);
    double u2 = uniform(counter, 2 * element + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // integer in [0, n)
  uint64_t below(uint64_t counter, uint64_t element, uint64_t n) const {
    return bits(counter, element) % n;
  }
};

// FNV-1a over a string; used for config hashing and split assignment.
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace reghorizon
