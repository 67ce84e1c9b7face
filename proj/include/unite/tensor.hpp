// Dense row-major matrices and the shared error type.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace unite {

/// Raised for every contract violation in the library. Messages carry the
/// diagnostic verbatim so the CLI can print them as-is.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Dense row-major matrix of doubles. Vectors are 1 x n.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw Error("matrix: value count does not match shape");
  }
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> init) {
    Matrix m;
    m.rows = init.size();
    m.cols = m.rows ? init.begin()->size() : 0;
    for (const auto& row : init) {
      if (row.size() != m.cols) throw Error("matrix: ragged initializer");
      m.data.insert(m.data.end(), row.begin(), row.end());
    }
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
  }
};

/// C = A * B (optionally transposing B). Loop order keeps the inner loop
/// contiguous; accumulation order is fixed so results are reproducible.
inline void matmul_into(const Matrix& a, const Matrix& b, Matrix& c, bool transpose_b = false) {
  const std::size_t inner = a.cols;
  if (!transpose_b) {
    if (b.rows != inner) throw Error("shape mismatch in matmul");
    c = Matrix(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
      double* crow = c.row(i);
      const double* arow = a.row(i);
      for (std::size_t k = 0; k < inner; ++k) {
        const double av = arow[k];
        if (av == 0.0) continue;
        const double* brow = b.row(k);
        for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    if (b.cols != inner) throw Error("shape mismatch in matmul");
    c = Matrix(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double* arow = a.row(i);
      for (std::size_t j = 0; j < b.rows; ++j) {
        const double* brow = b.row(j);
        double acc = 0.0;
        for (std::size_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
        c(i, j) = acc;
      }
    }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c;
  matmul_into(a, b, c);
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

/// Portable random draws on top of mt19937_64, whose output sequence is fixed
/// by the standard. The std distributions are implementation-defined, so they
/// are avoided wherever a golden value depends on the stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }
  bool bernoulli(double p) { return uniform() < p; }
  /// Box-Muller; consumes two uniforms per call.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace unite
