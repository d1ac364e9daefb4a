#include <doctest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "tpmil/checkpoint.hpp"
#include "tpmil/training.hpp"

using namespace tpmil;
using tpmil::testing::random_matrix;
using tpmil::testing::small_config;
using tpmil::testing::TempDir;

namespace {

// Scalar Adam with coupled L2, written out independently.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g, double lr, double wd, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    ++t;
    g += wd * theta;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.model = small_config(3, 8, 8, 4);
  c.epochs = 3;
  c.lr = 1e-3;
  return c;
}

SyntheticDataset tiny_data(std::uint64_t seed = 3) {
  SyntheticConfig s;
  s.dim = 8;
  s.num_bags = 30;
  s.instances_per_bag = {5, 12};
  s.seed = seed;
  return generate_synthetic_dataset(s);
}

BagRefs refs(const Dataset& d, std::size_t begin, std::size_t end) {
  BagRefs out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&d.bags[i]);
  return out;
}

}  // namespace

TEST_CASE("adam single steps") {
  ModelConfig cfg = small_config(2, 1, 1, 1);
  TrainConfig tc;
  tc.weight_decay = 0.0;

  ModelParams p = ModelParams::initialize(cfg, 1);
  const ModelParams before = p;
  AdamState st = AdamState::zeros_like(p);
  adam_step(p, ModelParams::zeros(cfg), st, tc);
  CHECK(p == before);
  CHECK(st.t == 1);

  // theta = 1, g = 1: m_hat = 1, v_hat = 1
  p = ModelParams::zeros(cfg);
  p.projector_w(0, 0) = 1.0;
  ModelParams g = ModelParams::zeros(cfg);
  g.projector_w(0, 0) = 1.0;
  st = AdamState::zeros_like(p);
  adam_step(p, g, st, tc);
  CHECK(p.projector_w(0, 0) == doctest::Approx(1.0 - 0.0002 / (1.0 + 1e-8)).epsilon(1e-15));

  // pure decay: effective gradient 1e-5, so the step is lr * 1e-5 / (1e-5 + 1e-8)
  tc.weight_decay = 1e-5;
  p = ModelParams::zeros(cfg);
  p.projector_w(0, 0) = 1.0;
  st = AdamState::zeros_like(p);
  adam_step(p, ModelParams::zeros(cfg), st, tc);
  CHECK(p.projector_w(0, 0) == doctest::Approx(1.0 - 0.0002 * 1e-5 / (1e-5 + 1e-8)).epsilon(1e-14));
  CHECK(p.projector_w(0, 0) == doctest::Approx(0.9998).epsilon(1e-6));

  // decoupled decay shrinks the weight directly
  tc.decoupled_weight_decay = true;
  tc.weight_decay = 0.01;
  p = ModelParams::zeros(cfg);
  p.projector_w(0, 0) = 2.0;
  st = AdamState::zeros_like(p);
  adam_step(p, ModelParams::zeros(cfg), st, tc);
  CHECK(p.projector_w(0, 0) == doctest::Approx(2.0 - 0.0002 * 0.01 * 2.0).epsilon(1e-14));

  CHECK_THROWS_AS(adam_step(p, ModelParams::zeros(small_config()), st, tc), InvalidInput);
}

TEST_CASE("adam is elementwise and lr = 0 freezes parameters") {
  const ModelConfig cfg = small_config();
  std::mt19937_64 gen(31);
  TrainConfig tc;
  tc.lr = 0.01;
  ModelParams p = ModelParams::initialize(cfg, 2);
  AdamState st = AdamState::zeros_like(p);
  // every element runs its own scalar Adam
  std::vector<ScalarAdam> scalars;
  std::vector<double> theta;
  for (const Matrix* m : p.tensors()) {
    for (double v : m->values()) {
      theta.push_back(v);
      scalars.emplace_back();
    }
  }
  for (int step = 0; step < 5; ++step) {
    ModelParams g = ModelParams::zeros(cfg);
    for (Matrix* m : g.tensors()) m->values() = random_matrix(m->rows(), m->cols(), gen).values();
    adam_step(p, g, st, tc);
    std::size_t i = 0;
    for (const Matrix* m : g.tensors()) {
      for (double gv : m->values()) {
        theta[i] = scalars[i].step(theta[i], gv, tc.lr, tc.weight_decay);
        ++i;
      }
    }
  }
  std::size_t i = 0;
  for (const Matrix* m : p.tensors()) {
    for (double v : m->values()) CHECK(std::abs(v - theta[i++]) < 1e-14);
  }

  tc.lr = 0.0;
  const ModelParams frozen = p;
  for (int step = 0; step < 3; ++step) {
    ModelParams g = ModelParams::zeros(cfg);
    for (Matrix* m : g.tensors()) m->values() = random_matrix(m->rows(), m->cols(), gen, 100.0).values();
    adam_step(p, g, st, tc);
  }
  CHECK(p == frozen);
}

TEST_CASE("weighted sampling") {
  std::vector<std::size_t> labels(10000, 0);
  for (std::size_t i = 0; i < 1000; ++i) labels[i * 10] = 1;
  const auto order = weighted_sample_order(labels, 5);
  REQUIRE(order.size() == 10000);
  double minority = 0;
  for (auto idx : order) minority += labels[idx] == 1 ? 1 : 0;
  const double sigma = std::sqrt(0.25 / 10000.0);
  CHECK(std::abs(minority / 10000.0 - 0.5) < 3 * sigma);

  CHECK(weighted_sample_order(labels, 5) == order);
  CHECK(weighted_sample_order(labels, 6) != order);

  // balanced: every bag equally likely
  std::vector<std::size_t> balanced{0, 1, 0, 1};
  std::vector<double> hits(4, 0.0);
  for (std::uint64_t s = 0; s < 2500; ++s)
    for (auto idx : weighted_sample_order(balanced, s)) hits[idx] += 1;
  for (double h : hits) CHECK(std::abs(h / 10000.0 - 0.25) < 3 * std::sqrt(0.25 * 0.75 / 10000.0));

  CHECK_THROWS_AS(weighted_sample_order(std::vector<std::size_t>{}, 1), InvalidInput);
}

TEST_CASE("loss on a repeated bag does not increase at small lr") {
  std::mt19937_64 gen(41);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ModelConfig cfg = small_config();
    TrainConfig tc;
    tc.lr = 1e-4;
    ModelParams p = ModelParams::initialize(cfg, seed);
    AdamState st = AdamState::zeros_like(p);
    const Matrix x = random_matrix(10, 16, gen);
    double prev = forward(p, x, seed % 3, cfg).loss.total;
    for (int step = 0; step < 20; ++step) {
      const BackwardResult g = backward(p, x, seed % 3, cfg);
      adam_step(p, g.grads, st, tc);
      const double now = forward(p, x, seed % 3, cfg).loss.total;
      CHECK(now <= prev + 1e-9);
      prev = now;
    }
  }
}

TEST_CASE("fit is deterministic and selects the best validation epoch") {
  const SyntheticDataset data = tiny_data();
  const BagRefs train = refs(data.dataset, 0, 20);
  const BagRefs val = refs(data.dataset, 20, 30);
  TrainConfig tc = tiny_train_config();
  tc.epochs = 4;

  std::vector<EpochStats> seen;
  const FitResult a = fit(train, val, tc, [&](const EpochStats& s) { seen.push_back(s); });
  const FitResult b = fit(train, val, tc);
  CHECK(checkpoint_hash(a.best) == checkpoint_hash(b.best));
  REQUIRE(a.curves.size() == 4);
  CHECK(seen.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(a.curves[e].epoch == e + 1);
    CHECK(a.curves[e].train_total == b.curves[e].train_total);
  }

  std::size_t best = 0;
  for (std::size_t e = 1; e < 4; ++e)
    if (a.curves[e].val_auc > a.curves[best].val_auc) best = e;
  CHECK(a.selected_epoch == best + 1);
  const MetricsReport r = evaluate_model(a.best, val);
  CHECK(r.auc == a.curves[best].val_auc);

  // thread count does not change the result
  tc.threads = 4;
  CHECK(checkpoint_hash(fit(train, val, tc).best) == checkpoint_hash(a.best));

  tc.seed = 2;
  CHECK(checkpoint_hash(fit(train, val, tc).best) != checkpoint_hash(a.best));
}

TEST_CASE("zero lambda matches the attention-only baseline") {
  const SyntheticDataset data = tiny_data(4);
  const BagRefs train = refs(data.dataset, 0, 20);
  const BagRefs val = refs(data.dataset, 20, 30);
  TrainConfig with = tiny_train_config();
  with.model.lambda = 0.0;
  TrainConfig without = with;
  without.model.prototype_module = false;
  const FitResult a = fit(train, val, with);
  const FitResult b = fit(train, val, without);
  for (std::size_t e = 0; e < a.curves.size(); ++e) {
    CHECK(a.curves[e].train_ce == b.curves[e].train_ce);
    CHECK(a.curves[e].train_total == b.curves[e].train_total);
    CHECK(a.curves[e].val_auc == b.curves[e].val_auc);
    CHECK(a.curves[e].val_acc == b.curves[e].val_acc);
    CHECK(b.curves[e].train_kld == 0.0);
  }
  CHECK(a.best.params.projector_w == b.best.params.projector_w);
  CHECK(a.best.params.classifier_w == b.best.params.classifier_w);
}

TEST_CASE("checkpoint round trip") {
  const SyntheticDataset data = tiny_data(5);
  const BagRefs train = refs(data.dataset, 0, 20);
  const BagRefs val = refs(data.dataset, 20, 30);
  TrainConfig tc = tiny_train_config();
  tc.model.tau = 0.75;
  tc.model.norm = AttentionNorm::kSoftmaxRaw;
  const FitResult fr = fit(train, val, tc);

  TempDir dir("ckpt");
  save_checkpoint(dir / "m.ckpt", fr.best);
  const Model loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded == fr.best);
  CHECK(checkpoint_hash(loaded) == checkpoint_hash(fr.best));
  CHECK(checkpoint_hash(loaded).size() == 16);

  const MetricsReport before = evaluate_model(fr.best, val);
  const MetricsReport after = evaluate_model(loaded, val);
  CHECK(before.auc == after.auc);
  CHECK(before.acc == after.acc);
  CHECK(predict_probabilities(loaded, val) == predict_probabilities(fr.best, val));

  auto bytes = encode_checkpoint(fr.best);
  CHECK(decode_checkpoint(bytes) == fr.best);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), InvalidInput);
  bad = bytes;
  bad.resize(bytes.size() - 1);
  CHECK_THROWS_AS(decode_checkpoint(bad), InvalidInput);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad), InvalidInput);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), InvalidInput);
}

TEST_CASE("cross validation harness") {
  SyntheticConfig s;
  s.dim = 8;
  s.num_bags = 40;
  s.instances_per_bag = {5, 10};
  s.seed = 9;
  const SyntheticDataset data = generate_synthetic_dataset(s);
  TrainConfig tc = tiny_train_config();
  tc.epochs = 2;
  const CvResult a = run_cross_validation(data.dataset, tc, 5);
  REQUIRE(a.folds.size() == 5);
  // folds missing a class can have NaN AUC; the aggregate skips them
  double mean_auc = 0, mean_acc = 0, scored = 0;
  for (const auto& f : a.folds) {
    mean_acc += f.test.acc / 5.0;
    if (std::isfinite(f.test.auc)) {
      mean_auc += f.test.auc;
      scored += 1;
    }
  }
  REQUIRE(scored > 0);
  mean_auc /= scored;
  CHECK(a.mean.auc == doctest::Approx(mean_auc).epsilon(1e-12));
  CHECK(a.mean.acc == doctest::Approx(mean_acc).epsilon(1e-12));
  CHECK(a.std.auc >= 0.0);

  const CvResult b = run_cross_validation(data.dataset, tc, 5);
  for (std::size_t f = 0; f < 5; ++f) {
    CHECK(a.folds[f].split.test_ids == b.folds[f].split.test_ids);
    CHECK(checkpoint_hash(a.folds[f].fit.best) == checkpoint_hash(b.folds[f].fit.best));
  }
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.lr = -1.0;
  CHECK_THROWS_AS(tc.validate(), InvalidInput);
  tc = TrainConfig{};
  tc.epochs = 0;
  CHECK_THROWS_AS(tc.validate(), InvalidInput);
  tc = TrainConfig{};
  tc.beta1 = 1.0;
  CHECK_THROWS_AS(tc.validate(), InvalidInput);
}
