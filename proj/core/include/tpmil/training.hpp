#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tpmil/data.hpp"
#include "tpmil/evaluation.hpp"
#include "tpmil/model.hpp"

namespace tpmil {

struct TrainConfig {
  ModelConfig model;
  double lr = 0.0002;
  double weight_decay = 1e-5;
  std::size_t epochs = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// AdamW-style decay applied to the weights instead of added to the gradient.
  bool decoupled_weight_decay = false;
  bool weighted_sampling = false;
  std::uint64_t seed = 1;
  /// Workers for validation/test scoring; results do not depend on it.
  std::size_t threads = 1;

  void validate() const;
};

struct AdamState {
  std::array<Matrix, kNumTensors> m;
  std::array<Matrix, kNumTensors> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const ModelParams& params);
};

/// One Adam update. Coupled L2 (default): g' = g + wd * theta. Decoupled:
/// theta -= lr * wd * theta before the moment update.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainConfig& config);

/// N = labels.size() draws with replacement, P(bag) proportional to 1 / count(its class).
std::vector<std::size_t> weighted_sample_order(std::span<const std::size_t> labels, std::uint64_t seed);

using BagRefs = std::vector<const FeatureBag*>;

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_ce = 0.0;
  double train_kld = 0.0;
  double train_total = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;  // NaN when the val set holds fewer than two classes
  double val_acc = 0.0;
};

struct FitResult {
  Model best;
  std::vector<EpochStats> curves;
  std::size_t selected_epoch = 0;  // 1-based
};

/// Class probabilities for each bag, one row per bag.
Matrix predict_probabilities(const Model& model, const BagRefs& bags, std::size_t threads = 1);
MetricsReport evaluate_model(const Model& model, const BagRefs& bags, AucMode mode = AucMode::kMacro,
                             std::size_t threads = 1);

/// Trains for exactly `config.epochs` epochs, one bag per optimizer step, and
/// keeps the parameters of the epoch with the best validation AUC (earliest on
/// ties). `on_epoch` sees every epoch's stats as they complete.
FitResult fit(const BagRefs& train, const BagRefs& val, const TrainConfig& config,
              const std::function<void(const EpochStats&)>& on_epoch = {});

/// Selects the bags named in `ids` (order preserved).
BagRefs select_bags(const Dataset& dataset, std::span<const std::string> ids);

struct FoldOutcome {
  CvSplit split;
  FitResult fit;
  MetricsReport test;
};

struct CvResult {
  std::vector<FoldOutcome> folds;
  MetricsReport mean;  // acc, auc and per-class AUC averaged over folds
  MetricsReport std;   // sample standard deviation of the same fields
};

/// Patient-level k-fold cross validation: per fold, fit on train/val, then
/// score the selected checkpoint on the held-out test patients.
CvResult run_cross_validation(const Dataset& dataset, const TrainConfig& config, std::size_t n_folds = 5,
                              double val_fraction = 0.2, AucMode mode = AucMode::kMacro,
                              const std::function<void(std::size_t fold, const EpochStats&)>& on_epoch = {});

}  // namespace tpmil
