#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "test_support.hpp"
#include "tpmil/evaluation.hpp"

using namespace tpmil;
using tpmil::testing::oracle_pairwise_auc;

namespace {

std::vector<int> one_vs_rest(std::span<const std::size_t> labels, std::size_t c) {
  std::vector<int> out;
  for (auto l : labels) out.push_back(l == c ? 1 : 0);
  return out;
}

std::vector<double> column(const Matrix& m, std::size_t c) {
  std::vector<double> out;
  for (std::size_t i = 0; i < m.rows(); ++i) out.push_back(m(i, c));
  return out;
}

}  // namespace

TEST_CASE("accuracy") {
  const std::vector<std::size_t> y{0, 1, 2, 1};
  CHECK(accuracy(y, y) == 1.0);
  CHECK(accuracy(std::vector<std::size_t>{1, 0, 0, 0}, y) == 0.0);
  CHECK(accuracy(std::vector<std::size_t>{0, 1, 2, 0}, y) == 0.75);
  CHECK_THROWS_AS(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), InvalidInput);
  CHECK_THROWS_AS(accuracy(std::vector<std::size_t>{1}, y), InvalidInput);
}

TEST_CASE("binary auc examples") {
  CHECK(auc_binary(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auc_binary(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<int>{0, 1, 0, 1}) == 0.5);
  CHECK(auc_binary(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
  CHECK_THROWS_WITH_AS(auc_binary(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}),
                       doctest::Contains("AUC undefined"), InvalidInput);
  CHECK_THROWS_AS(auc_binary(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 2}), InvalidInput);
}

TEST_CASE("binary auc matches pairwise brute force") {
  std::mt19937_64 gen(21);
  std::uniform_int_distribution<int> len(2, 200);
  std::uniform_int_distribution<int> coarse(0, 6);  // forces ties
  std::normal_distribution<double> fine;
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<std::size_t>(len(gen));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 2 ? coarse(gen) : fine(gen);
      y[i] = static_cast<int>(gen() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    const double auc = auc_binary(s, y);
    CHECK(std::abs(auc - oracle_pairwise_auc(s, y)) < 1e-12);

    // strictly monotone transform
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(0.5 * s[i]) - 3.0;
    CHECK(auc_binary(t, y) == auc);

    if (trial % 2 == 0) {
      std::vector<int> flipped(n);
      for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - y[i];
      CHECK(std::abs(auc + auc_binary(s, flipped) - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("macro auc") {
  const std::vector<std::size_t> y{0, 1, 2, 2, 1, 0};
  Matrix onehot(6, 3);
  for (std::size_t i = 0; i < 6; ++i) onehot(i, y[i]) = 1.0;
  CHECK(auc_macro(onehot, y).macro == 1.0);

  const MacroAuc flat = auc_macro(Matrix(6, 3, 1.0 / 3.0), y);
  CHECK(flat.macro == 0.5);
  CHECK(flat.per_class == std::vector<double>{0.5, 0.5, 0.5});

  CHECK_THROWS_WITH_AS(auc_macro(Matrix(3, 3, 0.3), std::vector<std::size_t>{0, 1, 1}),
                       doctest::Contains("2"), InvalidInput);

  std::mt19937_64 gen(22);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix p(6, 3);
    for (double& v : p.values()) v = u(gen);
    const MacroAuc got = auc_macro(p, y);
    double mean = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double ref = oracle_pairwise_auc(column(p, c), one_vs_rest(y, c));
      CHECK(got.per_class[c] == ref);
      mean += ref / 3.0;
    }
    CHECK(std::abs(got.macro - mean) < 1e-15);

    // micro pools every (sample, class) cell
    std::vector<double> pooled;
    std::vector<int> pooled_y;
    for (std::size_t c = 0; c < 3; ++c) {
      const auto col = column(p, c);
      const auto lab = one_vs_rest(y, c);
      pooled.insert(pooled.end(), col.begin(), col.end());
      pooled_y.insert(pooled_y.end(), lab.begin(), lab.end());
    }
    CHECK(std::abs(auc_micro(p, y) - oracle_pairwise_auc(pooled, pooled_y)) < 1e-12);
    // balanced classes: weighted equals macro
    CHECK(std::abs(auc_weighted(p, y) - got.macro) < 1e-12);
  }
}

TEST_CASE("reports") {
  Matrix p(4, 2);
  const double col1[] = {0.1, 0.4, 0.35, 0.8};
  for (std::size_t i = 0; i < 4; ++i) {
    p(i, 1) = col1[i];
    p(i, 0) = 1.0 - col1[i];
  }
  const std::vector<std::size_t> y{0, 0, 1, 1};
  const MetricsReport r = make_report(p, y);
  CHECK(r.auc == 0.75);
  CHECK(r.acc == 0.75);  // bag 2 (0.35, positive) is the only miss
  CHECK(r.n == 4);
  std::size_t total = 0, diag = 0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      total += r.confusion[i][j];
      if (i == j) diag += r.confusion[i][j];
    }
  CHECK(total == 4);
  CHECK(static_cast<double>(diag) / 4.0 == r.acc);
  CHECK(r.per_class_auc.empty());

  // present-class AUC drops class 2, which never occurs
  Matrix q(4, 3, 0.2);
  for (std::size_t i = 0; i < 4; ++i) {
    q(i, 0) = 1.0 - col1[i];
    q(i, 1) = col1[i];
  }
  CHECK(auc_over_present_classes(q, y) == doctest::Approx(0.75));
  CHECK(std::isnan(auc_over_present_classes(q, std::vector<std::size_t>{1, 1, 1, 1})));

  // a test fold without class 2: AUC over the present classes, NaN for the absent one
  const MetricsReport partial = make_report(q, y);
  CHECK(partial.auc == doctest::Approx(0.75));
  REQUIRE(partial.per_class_auc.size() == 3);
  CHECK(partial.per_class_auc[1] == 0.75);
  CHECK(std::isnan(partial.per_class_auc[2]));
  CHECK(std::isnan(make_report(p, std::vector<std::size_t>{1, 1, 1, 1}).auc));

  std::ostringstream csv;
  const std::vector<FoldReport> rows{{"0", r}, {"mean", r}};
  write_report_csv(csv, rows, 2);
  CHECK(csv.str() == "fold,acc,auc\n0,0.750000,0.750000\nmean,0.750000,0.750000\n");

  CHECK(parse_auc_mode("micro") == AucMode::kMicro);
  CHECK(to_string(AucMode::kWeighted) == "weighted");
  CHECK_THROWS_AS(parse_auc_mode("median"), InvalidInput);
}
