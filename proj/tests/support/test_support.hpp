#pragma once

// Shared fixtures and independent oracles for the test suites. Nothing here
// calls into the code path it is used to check.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "tpmil/data.hpp"
#include "tpmil/model.hpp"
#include "tpmil/numerics.hpp"

namespace tpmil::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("tpmil_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(gen);
  return m;
}

inline ModelConfig small_config(std::size_t k = 3, std::size_t d = 16, std::size_t l = 8, std::size_t a = 4) {
  ModelConfig c;
  c.num_classes = k;
  c.feature_dim = d;
  c.hidden_dim = l;
  c.attention_dim = a;
  return c;
}

// ---- oracles --------------------------------------------------------------

inline Matrix oracle_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(s);
    }
  }
  return out;
}

inline double oracle_distance(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - b[i];
    s += d * d;
  }
  return static_cast<double>(std::sqrt(s));
}

/// Gated attention transcribed term by term: per instance, per hidden unit.
inline std::vector<double> oracle_gated_attention(const ModelParams& p, const Matrix& h) {
  const std::size_t m = h.rows();
  std::vector<long double> e(m);
  for (std::size_t j = 0; j < m; ++j) {
    long double acc = 0;
    for (std::size_t q = 0; q < p.attn_w.cols(); ++q) {
      long double vh = 0, uh = 0;
      for (std::size_t l = 0; l < h.cols(); ++l) {
        vh += static_cast<long double>(p.attn_v(l, q)) * h(j, l);
        uh += static_cast<long double>(p.attn_u(l, q)) * h(j, l);
      }
      acc += p.attn_w(0, q) * std::tanh(vh) * (1.0L / (1.0L + std::exp(-uh)));
    }
    e[j] = acc;
  }
  long double denom = 0;
  for (auto x : e) denom += std::exp(x);
  std::vector<double> a(m);
  for (std::size_t j = 0; j < m; ++j) a[j] = static_cast<double>(std::exp(e[j]) / denom);
  return a;
}

/// O(n^2) AUC: wins + 0.5 * ties over all positive/negative pairs.
inline double oracle_pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace tpmil::testing
