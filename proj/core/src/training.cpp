#include "tpmil/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>
#include <unordered_map>
#include <utility>

#include "tpmil/error.hpp"
#include "tpmil/parallel.hpp"

namespace tpmil {

void TrainConfig::validate() const {
  model.validate();
  if (!(lr >= 0.0)) throw InvalidInput("lr must be >= 0");
  if (epochs < 1) throw InvalidInput("epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidInput("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw InvalidInput("Adam epsilon must be > 0");
  if (!(weight_decay >= 0.0)) throw InvalidInput("weight_decay must be >= 0");
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState s;
  const auto tensors = params.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    s.m[i] = Matrix(tensors[i]->rows(), tensors[i]->cols());
    s.v[i] = Matrix(tensors[i]->rows(), tensors[i]->cols());
  }
  return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainConfig& config) {
  auto p = params.tensors();
  const auto g = grads.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    if (p[i]->rows() != g[i]->rows() || p[i]->cols() != g[i]->cols() ||
        state.m[i].rows() != p[i]->rows() || state.m[i].cols() != p[i]->cols()) {
      throw InvalidInput("adam_step: shape mismatch in " + std::string(ModelParams::tensor_names()[i]));
    }
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    auto theta = p[i]->values();
    const auto grad = g[i]->values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      double gj = grad[j];
      if (config.decoupled_weight_decay) {
        theta[j] -= config.lr * config.weight_decay * theta[j];
      } else {
        gj += config.weight_decay * theta[j];
      }
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      theta[j] -= config.lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
}

std::vector<std::size_t> weighted_sample_order(std::span<const std::size_t> labels, std::uint64_t seed) {
  if (labels.empty()) throw InvalidInput("weighted sampling over an empty dataset");
  std::unordered_map<std::size_t, std::size_t> counts;
  for (std::size_t l : labels) ++counts[l];
  std::vector<double> cumulative(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += 1.0 / static_cast<double>(counts[labels[i]]);
    cumulative[i] = total;
  }
  Rng rng(seed);
  std::vector<std::size_t> order(labels.size());
  for (auto& idx : order) {
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    idx = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), labels.size() - 1);
  }
  return order;
}

Matrix predict_probabilities(const Model& model, const BagRefs& bags, std::size_t threads) {
  Matrix probs(bags.size(), model.config.num_classes);
  parallel_for(bags.size(), threads, [&](std::size_t i) {
    const Matrix h = project(model.params, bags[i]->features, model.config.activation);
    const Vector a = attention_scores(model.params, h);
    const Vector p = softmax(aggregate_and_classify(model.params, h, a).bag_logits);
    std::copy(p.begin(), p.end(), probs.row(i).begin());
  });
  return probs;
}

namespace {

std::vector<std::size_t> labels_of(const BagRefs& bags) {
  std::vector<std::size_t> out(bags.size());
  for (std::size_t i = 0; i < bags.size(); ++i) out[i] = bags[i]->label;
  return out;
}

void check_bags(const BagRefs& bags, const ModelConfig& config, const char* what) {
  if (bags.empty()) throw InvalidInput(std::string(what) + " set is empty");
  for (const FeatureBag* b : bags) {
    if (b->dim() != config.feature_dim) {
      throw InvalidInput(std::string(what) + " bag " + b->slide_id + " has dim " + std::to_string(b->dim()) +
                         ", expected " + std::to_string(config.feature_dim));
    }
    if (b->label >= config.num_classes) {
      throw InvalidInput(std::string(what) + " bag " + b->slide_id + " label out of range");
    }
    if (b->num_instances() == 0) throw InvalidInput(std::string(what) + " bag " + b->slide_id + " is empty");
  }
}

double auc_key(double auc) { return std::isnan(auc) ? -std::numeric_limits<double>::infinity() : auc; }

}  // namespace

MetricsReport evaluate_model(const Model& model, const BagRefs& bags, AucMode mode, std::size_t threads) {
  check_bags(bags, model.config, "evaluation");
  const Matrix probs = predict_probabilities(model, bags, threads);
  return make_report(probs, labels_of(bags), mode);
}

FitResult fit(const BagRefs& train, const BagRefs& val, const TrainConfig& config,
              const std::function<void(const EpochStats&)>& on_epoch) {
  config.validate();
  check_bags(train, config.model, "training");
  check_bags(val, config.model, "validation");

  Model model{config.model, ModelParams::initialize(config.model, derive_seed(config.seed, 0))};
  AdamState adam = AdamState::zeros_like(model.params);
  const auto train_labels = labels_of(train);
  const auto val_labels = labels_of(val);

  FitResult result;
  double best_key = 0.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(config.seed, epoch);
    std::vector<std::size_t> order;
    if (config.weighted_sampling) {
      order = weighted_sample_order(train_labels, epoch_seed);
    } else {
      order.resize(train.size());
      std::iota(order.begin(), order.end(), 0);
      Rng rng(epoch_seed);
      rng.shuffle(order);
    }

    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t idx : order) {
      const FeatureBag& bag = *train[idx];
      BackwardResult step;
      try {
        step = backward(model.params, bag.features, bag.label, model.config);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("epoch " + std::to_string(epoch) + ", bag " + bag.slide_id + ": " + e.what());
      }
      stats.train_ce += step.loss.ce;
      stats.train_kld += step.loss.kld;
      stats.train_total += step.loss.total;
      adam_step(model.params, step.grads, adam, config);
    }
    const double steps = static_cast<double>(order.size());
    stats.train_ce /= steps;
    stats.train_kld /= steps;
    stats.train_total /= steps;

    Matrix probs(val.size(), config.model.num_classes);
    Vector val_losses(val.size());
    parallel_for(val.size(), config.threads, [&](std::size_t i) {
      const ForwardResult fr = forward(model.params, val[i]->features, val[i]->label, model.config);
      std::copy(fr.trace.bag_probs.begin(), fr.trace.bag_probs.end(), probs.row(i).begin());
      val_losses[i] = fr.loss.total;
    });
    stats.val_loss = std::accumulate(val_losses.begin(), val_losses.end(), 0.0) / static_cast<double>(val.size());
    stats.val_auc = auc_over_present_classes(probs, val_labels);
    std::vector<std::size_t> preds(val.size());
    for (std::size_t i = 0; i < val.size(); ++i) preds[i] = argmax(probs.row(i));
    stats.val_acc = accuracy(preds, val_labels);
    if (!std::isfinite(stats.train_total) || !std::isfinite(stats.val_loss)) {
      throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch));
    }

    const double key = auc_key(stats.val_auc);
    if (epoch == 1 || key > best_key) {
      best_key = key;
      result.best = model;
      result.selected_epoch = epoch;
    }
    result.curves.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

BagRefs select_bags(const Dataset& dataset, std::span<const std::string> ids) {
  std::unordered_map<std::string, const FeatureBag*> by_id;
  for (const auto& b : dataset.bags) by_id[b.slide_id] = &b;
  BagRefs out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidInput("unknown slide id " + id);
    out.push_back(it->second);
  }
  return out;
}

namespace {

// Mean and sample std over the finite entries; folds missing a class report NaN.
std::pair<double, double> finite_mean_std(const std::vector<double>& xs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    if (std::isfinite(x)) {
      sum += x;
      ++n;
    }
  }
  if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double mean = sum / static_cast<double>(n);
  if (n < 2) return {mean, 0.0};
  double sq = 0.0;
  for (double x : xs) {
    if (std::isfinite(x)) sq += (x - mean) * (x - mean);
  }
  return {mean, std::sqrt(sq / static_cast<double>(n - 1))};
}

void aggregate(CvResult& cv) {
  const std::size_t k = cv.folds.front().test.per_class_auc.size();
  auto field = [&](auto get) {
    std::vector<double> xs;
    for (const auto& f : cv.folds) xs.push_back(get(f.test));
    return finite_mean_std(xs);
  };
  cv.mean = MetricsReport{};
  cv.std = MetricsReport{};
  std::tie(cv.mean.acc, cv.std.acc) = field([](const MetricsReport& r) { return r.acc; });
  std::tie(cv.mean.auc, cv.std.auc) = field([](const MetricsReport& r) { return r.auc; });
  cv.mean.per_class_auc.assign(k, 0.0);
  cv.std.per_class_auc.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    std::tie(cv.mean.per_class_auc[c], cv.std.per_class_auc[c]) =
        field([c](const MetricsReport& r) { return r.per_class_auc[c]; });
  }
  for (const auto& f : cv.folds) cv.mean.n += f.test.n;
  cv.std.n = cv.mean.n;
}

}  // namespace

CvResult run_cross_validation(const Dataset& dataset, const TrainConfig& config, std::size_t n_folds,
                              double val_fraction, AucMode mode,
                              const std::function<void(std::size_t, const EpochStats&)>& on_epoch) {
  const auto splits = make_cv_splits(dataset.manifest, n_folds, val_fraction, config.seed);
  CvResult cv;
  for (const auto& split : splits) {
    TrainConfig fold_config = config;
    fold_config.seed = derive_seed(config.seed, 1000 + split.fold_index);
    const BagRefs train = select_bags(dataset, split.train_ids);
    const BagRefs val = select_bags(dataset, split.val_ids);
    const BagRefs test = select_bags(dataset, split.test_ids);
    std::function<void(const EpochStats&)> cb;
    if (on_epoch) cb = [&](const EpochStats& s) { on_epoch(split.fold_index, s); };
    FoldOutcome outcome;
    outcome.split = split;
    outcome.fit = fit(train, val, fold_config, cb);
    outcome.test = evaluate_model(outcome.fit.best, test, mode, config.threads);
    cv.folds.push_back(std::move(outcome));
  }
  aggregate(cv);
  return cv;
}

}  // namespace tpmil
