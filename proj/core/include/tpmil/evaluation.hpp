#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpmil/numerics.hpp"

namespace tpmil {

enum class AucMode { kMacro, kMicro, kWeighted };
AucMode parse_auc_mode(std::string_view s);
std::string_view to_string(AucMode m);

struct MetricsReport {
  double acc = 0.0;
  double auc = 0.0;
  std::vector<double> per_class_auc;  // filled for K > 2
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t n = 0;
};

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

/// Mann-Whitney AUC with midranks; each tied positive/negative pair counts 1/2.
/// `labels` are 0/1. Throws InvalidInput("AUC undefined ...") unless both are present.
double auc_binary(std::span<const double> scores, std::span<const int> labels);

struct MacroAuc {
  double macro = 0.0;
  std::vector<double> per_class;
};

/// One-vs-rest AUC per column of `probabilities` (n x K) and their unweighted mean.
MacroAuc auc_macro(const Matrix& probabilities, std::span<const std::size_t> labels);
/// One-vs-rest pooled over all (sample, class) pairs.
double auc_micro(const Matrix& probabilities, std::span<const std::size_t> labels);
/// One-vs-rest per class, averaged with class prevalence weights.
double auc_weighted(const Matrix& probabilities, std::span<const std::size_t> labels);

/// Bag-level report from class probabilities. K = 2 uses the binary AUC of
/// column 1; K > 2 uses `mode` (macro by default) and fills per-class AUCs.
MetricsReport make_report(const Matrix& probabilities, std::span<const std::size_t> labels,
                          AucMode mode = AucMode::kMacro);

/// Macro AUC over the classes that have both positives and negatives in
/// `labels`; NaN when fewer than two classes are present. Used for
/// validation sets too small to contain every class.
double auc_over_present_classes(const Matrix& probabilities, std::span<const std::size_t> labels);

struct FoldReport {
  std::string fold;  // fold index or an aggregate tag ("mean", "std")
  MetricsReport metrics;
};

/// `fold,acc,auc[,auc_class_0..]`
void write_report_csv(std::ostream& out, std::span<const FoldReport> rows, std::size_t num_classes);
void write_report_table(std::ostream& out, std::span<const FoldReport> rows,
                        std::span<const std::string> class_names);

}  // namespace tpmil
