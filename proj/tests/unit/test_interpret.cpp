#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "test_support.hpp"
#include "tpmil/interpret.hpp"

using namespace tpmil;
using tpmil::testing::random_matrix;
using tpmil::testing::small_config;

namespace {

FeatureBag bag_with_coords(std::size_t m, std::size_t d, std::mt19937_64& gen) {
  FeatureBag b;
  b.slide_id = "S";
  b.features = random_matrix(m, d, gen);
  std::vector<PatchCoord> c;
  for (std::size_t j = 0; j < m; ++j) c.push_back({static_cast<int>(j % 4), static_cast<int>(j / 4)});
  b.coords = c;
  return b;
}

ForwardTrace trace_with_attention(Vector a) {
  ForwardTrace t;
  t.a = std::move(a);
  return t;
}

std::map<std::pair<int, int>, double> by_position(const PatchScoreMap& m) {
  std::map<std::pair<int, int>, double> out;
  for (const auto& e : m.entries) out[{e.pos.x, e.pos.y}] = e.score;
  return out;
}

}  // namespace

TEST_CASE("attention heat scores") {
  FeatureBag b;
  b.coords = std::vector<PatchCoord>{{0, 0}, {1, 0}};
  const PatchScoreMap m = attention_heat_scores(trace_with_attention({0.9, 0.1}), b);
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].score == 1.0);
  CHECK(m.entries[1].score == 0.0);
  CHECK(m.entries[0].raw == 0.9);

  const PatchScoreMap flat = attention_heat_scores(trace_with_attention({0.5, 0.5}), b);
  CHECK(flat.entries[0].score == 0.5);
  CHECK(flat.entries[1].score == 0.5);

  FeatureBag no_coords;
  CHECK_THROWS_AS(attention_heat_scores(trace_with_attention({0.5, 0.5}), no_coords), InvalidInput);

  std::mt19937_64 gen(51);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 50; ++trial) {
    Vector a(9);
    for (double& v : a) v = u(gen);
    FeatureBag g;
    std::vector<PatchCoord> c;
    for (int j = 0; j < 9; ++j) c.push_back({j % 3, j / 3});
    g.coords = c;
    const PatchScoreMap s = attention_heat_scores(trace_with_attention(a), g);
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(s.entries[i].score >= 0.0);
      CHECK(s.entries[i].score <= 1.0);
      for (std::size_t j = 0; j < 9; ++j) {
        if (a[i] < a[j]) CHECK(s.entries[i].score < s.entries[j].score);
      }
    }
  }
}

TEST_CASE("distance heat scores") {
  std::mt19937_64 gen(52);
  const ModelConfig cfg = small_config(3, 16, 8, 4);
  ModelParams p = ModelParams::initialize(cfg, 52);
  const FeatureBag bag = bag_with_coords(10, 16, gen);

  // put the negative prototype exactly on patch 4's embedding
  ModelConfig lin = cfg;
  lin.activation = Activation::kNone;
  const Matrix h = project(p, bag.features, Activation::kNone);
  std::copy(h.row(4).begin(), h.row(4).end(), p.prototypes.row(3).begin());
  const ForwardResult r = forward(p, bag.features, 0, lin);
  const PatchScoreMap neg = distance_heat_scores(r.trace, bag, DistanceTarget::kNegative);
  CHECK(neg.entries[4].score == 1.0);
  CHECK(neg.entries[4].raw == 0.0);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 10; ++j) {
      if (r.trace.dist(i, 3) < r.trace.dist(j, 3)) CHECK(neg.entries[i].score > neg.entries[j].score);
    }
  }

  const PatchScoreMap pred = distance_heat_scores(r.trace, bag, DistanceTarget::kPredictedClass);
  const std::size_t k = r.trace.predicted_class();
  for (std::size_t i = 0; i < 10; ++i) CHECK(pred.entries[i].raw == r.trace.dist(i, k));
  CHECK(heat_scores(r.trace, bag, HeatmapMode::kDistPred).entries[0].score == pred.entries[0].score);

  // equidistant patches score the same
  FeatureBag twin = bag;
  std::copy(bag.features.row(0).begin(), bag.features.row(0).end(), twin.features.row(1).begin());
  const ForwardResult rt = forward(p, twin.features, 0, lin);
  const PatchScoreMap tm = distance_heat_scores(rt.trace, twin, DistanceTarget::kNegative);
  CHECK(tm.entries[0].score == tm.entries[1].score);

  // scores from the stored trace match a fresh forward pass
  const ForwardResult again = forward(p, bag.features, 0, lin);
  const PatchScoreMap neg2 = distance_heat_scores(again.trace, bag, DistanceTarget::kNegative);
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(neg2.entries[i].score - neg.entries[i].score) < 1e-12);

  ModelConfig base = cfg;
  base.prototype_module = false;
  const ForwardResult rb = forward(p, bag.features, 0, base);
  CHECK_THROWS_AS(distance_heat_scores(rb.trace, bag, DistanceTarget::kNegative), InvalidInput);
}

TEST_CASE("score maps do not depend on patch order") {
  std::mt19937_64 gen(53);
  const ModelConfig cfg = small_config(3, 16, 8, 4);
  const ModelParams p = ModelParams::initialize(cfg, 53);
  const FeatureBag bag = bag_with_coords(12, 16, gen);
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  FeatureBag shuffled = bag;
  for (std::size_t i = 0; i < 12; ++i) {
    std::copy(bag.features.row(perm[i]).begin(), bag.features.row(perm[i]).end(), shuffled.features.row(i).begin());
    (*shuffled.coords)[i] = (*bag.coords)[perm[i]];
  }
  const ForwardResult r1 = forward(p, bag.features, 1, cfg);
  const ForwardResult r2 = forward(p, shuffled.features, 1, cfg);
  for (HeatmapMode mode : {HeatmapMode::kAttention, HeatmapMode::kDistPred, HeatmapMode::kDistNeg}) {
    const auto m1 = by_position(heat_scores(r1.trace, bag, mode));
    const auto m2 = by_position(heat_scores(r2.trace, shuffled, mode));
    REQUIRE(m1.size() == m2.size());
    for (const auto& [pos, s] : m1) CHECK(std::abs(m2.at(pos) - s) < 1e-9);
  }
}

TEST_CASE("prototype distance matrix") {
  const std::vector<std::string> names{"A", "B"};
  ModelParams p = ModelParams::zeros(small_config(2, 4, 2, 2));
  PrototypeDistanceMatrix m = prototype_distance_matrix(p, names);
  CHECK(m.matrix == Matrix(3, 3, 0.0));
  CHECK(m.labels == std::vector<std::string>{"A", "B", "NEG"});

  p.prototypes(0, 0) = 1.0;
  p.prototypes(1, 1) = 1.0;
  p.prototypes(2, 0) = -1.0;
  m = prototype_distance_matrix(p, names);
  CHECK(m.matrix(0, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(m.matrix(0, 2) == 2.0);

  const ModelParams r = ModelParams::initialize(small_config(3, 4, 6, 2), 8);
  const std::vector<std::string> three{"x", "y", "z"};
  m = prototype_distance_matrix(r, three);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(m.matrix(i, i) == 0.0);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(m.matrix(i, j) == m.matrix(j, i));
      CHECK(m.matrix(i, j) >= 0.0);
    }
  }
  CHECK_THROWS_AS(prototype_distance_matrix(r, names), InvalidInput);

  std::ostringstream csv;
  write_distance_matrix_csv(csv, prototype_distance_matrix(p, names));
  CHECK(csv.str() ==
        "prototype,A,B,NEG\n"
        "A,0,1.4142135623730951,2\n"
        "B,1.4142135623730951,0,1.4142135623730951\n"
        "NEG,2,1.4142135623730951,0\n");
}

TEST_CASE("heatmap rendering") {
  PatchScoreMap m;
  m.entries = {{{0, 0}, 0.0, 1.0}};
  auto img = render_heatmap(m, 1);
  const std::string header = "P6\n1 1\n255\n";
  REQUIRE(img.size() == header.size() + 3);
  CHECK(std::string(img.begin(), img.begin() + static_cast<long>(header.size())) == header);
  CHECK(img[header.size()] == 255);
  CHECK(img[header.size() + 1] == 0);
  CHECK(img[header.size() + 2] == 0);

  m.entries[0].score = 0.0;
  img = render_heatmap(m, 1);
  CHECK(img[header.size()] == 0);
  CHECK(img[header.size() + 2] == 255);

  // absent cells are white
  m.entries = {{{1, 0}, 0.0, 0.0}};
  img = render_heatmap(m, 1);
  CHECK(img[11] == 255);
  CHECK(img[12] == 255);
  CHECK(img[13] == 255);

  CHECK_THROWS_AS(render_heatmap(PatchScoreMap{}, 2), InvalidInput);
  CHECK_THROWS_AS(render_heatmap(m, 0), InvalidInput);

  PatchScoreMap fixture;
  fixture.entries = {{{0, 0}, 0.0, 0.0}, {{1, 0}, 0.0, 1.0 / 3.0}, {{0, 1}, 0.0, 2.0 / 3.0}, {{1, 1}, 0.0, 1.0}};
  std::ifstream golden(std::string(TPMIL_GOLDEN_DIR) + "/heatmap_2x2.ppm", std::ios::binary);
  REQUIRE(golden.good());
  const std::vector<unsigned char> expected{std::istreambuf_iterator<char>(golden), std::istreambuf_iterator<char>()};
  CHECK(render_heatmap(fixture, 2) == expected);
}

TEST_CASE("score csv") {
  PatchScoreMap m;
  m.slide_id = "S7";
  m.mode = HeatmapMode::kDistNeg;
  m.entries = {{{3, 4}, 0.25, 1.0}};
  std::ostringstream out;
  write_score_csv(out, m, "00ff");
  CHECK(out.str() == "# slide=S7 mode=dist-neg checkpoint=00ff\nx,y,raw_value,normalized_score\n3,4,0.25,1\n");
  CHECK(parse_heatmap_mode("attention") == HeatmapMode::kAttention);
  CHECK_THROWS_AS(parse_heatmap_mode("gradcam"), InvalidInput);
}
