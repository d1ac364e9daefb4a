#include "tpmil/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "tpmil/error.hpp"

namespace tpmil {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw InvalidInput("matrix data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw InvalidInput("matmul shape mismatch: " + shape(a) + " * " + shape(b));
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
    }
  }
  return out;
}

void matmul_at_b_accumulate(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw InvalidInput("matmul_at_b shape mismatch: " + shape(a) + "^T * " + shape(b) +
                       " -> " + shape(out));
  }
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* brow = b.row(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ari = a(r, i);
      if (ari == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += ari * brow[j];
    }
  }
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw InvalidInput("matmul_a_bt shape mismatch: " + shape(a) + " * " + shape(b) + "^T");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

void add_row_bias(Matrix& m, std::span<const double> bias) {
  if (bias.size() != m.cols()) {
    throw InvalidInput("bias length " + std::to_string(bias.size()) + " != " +
                       std::to_string(m.cols()));
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("dot length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vector softmax(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InvalidInput("euclidean_distance length mismatch: " + std::to_string(a.size()) +
                       " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("empty vector");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw InvalidInput("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + static_cast<std::int64_t>(x % span);
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

FdCheckResult finite_difference_check(const std::function<double()>& loss,
                                      std::span<const std::span<double>> params,
                                      std::span<const std::span<const double>> grads,
                                      double eps) {
  if (!(eps > 0.0)) throw InvalidInput("finite_difference_check: eps must be > 0");
  if (params.size() != grads.size()) {
    throw InvalidInput("finite_difference_check: parameter/gradient block count mismatch");
  }
  FdCheckResult result;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size()) {
      throw InvalidInput("finite_difference_check: block " + std::to_string(b) +
                         " size mismatch");
    }
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      double& theta = params[b][i];
      const double saved = theta;
      theta = saved + eps;
      const double up = loss();
      theta = saved - eps;
      const double down = loss();
      theta = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteError("non-finite loss while probing block " + std::to_string(b) +
                             " index " + std::to_string(i));
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grads[b][i];
      const double rel = std::abs(analytic - numeric) /
                         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_block = b;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace tpmil
