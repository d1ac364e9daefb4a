#pragma once

// Dense kernels, stable nonlinearities, a portable RNG and the finite
// difference oracle used to verify every hand-written gradient.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace tpmil {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles. Bags are instance-major (row = instance).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// out = a * b. Throws InvalidInput on shape mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);
// out += a^T * b
void matmul_at_b_accumulate(const Matrix& a, const Matrix& b, Matrix& out);
// out = a * b^T
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);
// Adds `bias` (length cols) to every row.
void add_row_bias(Matrix& m, std::span<const double> bias);

double dot(std::span<const double> a, std::span<const double> b);

/// Softmax with max subtraction. Throws InvalidInput("empty vector") on empty input.
Vector softmax(std::span<const double> v);
double log_sum_exp(std::span<const double> v);
double sigmoid(double x);

double euclidean_distance(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> v);

/// Index of the first maximum.
std::size_t argmax(std::span<const double> v);

/// std::mt19937_64 (whose output sequence is fixed by the standard) with the
/// distribution code written out, so generated data is bit-identical across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal (Box-Muller, no caching).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with a stream tag so sub-generators do not share sequences.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct FdCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_block = 0;
  std::size_t worst_index = 0;
};

/// Central-difference gradient check over a set of parameter blocks.
///
/// For each scalar theta in `params`, compares `grads` against
/// (loss(theta+eps) - loss(theta-eps)) / (2 eps) and returns the maximum of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|). The loss closure
/// must read the parameters through the same storage `params` points into.
/// Every parameter is restored before returning. A non-finite probe throws
/// NonFiniteError naming the block and index.
FdCheckResult finite_difference_check(const std::function<double()>& loss,
                                      std::span<const std::span<double>> params,
                                      std::span<const std::span<const double>> grads,
                                      double eps = 1e-5);

}  // namespace tpmil
