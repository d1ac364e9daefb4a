#include "tpmil/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "tpmil/error.hpp"

namespace tpmil {

AucMode parse_auc_mode(std::string_view s) {
  if (s == "macro") return AucMode::kMacro;
  if (s == "micro") return AucMode::kMicro;
  if (s == "weighted") return AucMode::kWeighted;
  throw InvalidInput("unknown AUC mode '" + std::string(s) + "' (expected macro|micro|weighted)");
}

std::string_view to_string(AucMode m) {
  switch (m) {
    case AucMode::kMacro: return "macro";
    case AucMode::kMicro: return "micro";
    case AucMode::kWeighted: return "weighted";
  }
  return "macro";
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.empty()) throw InvalidInput("accuracy of an empty set");
  if (predictions.size() != labels.size()) throw InvalidInput("accuracy: length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double auc_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidInput("auc_binary: length mismatch");
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidInput("auc_binary: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw InvalidInput("AUC undefined: only one class present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based midranks of the positives; half-integers are exact in double.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) rank_sum += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

namespace {

std::vector<int> one_vs_rest(std::span<const std::size_t> labels, std::size_t cls) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == cls ? 1 : 0;
  return out;
}

Vector column(const Matrix& m, std::size_t c) {
  Vector out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, c);
  return out;
}

void check_prob_inputs(const Matrix& p, std::span<const std::size_t> labels) {
  if (p.rows() != labels.size()) throw InvalidInput("AUC: probability rows != label count");
  if (p.rows() == 0) throw InvalidInput("AUC of an empty set");
  for (std::size_t l : labels) {
    if (l >= p.cols()) throw InvalidInput("AUC: label out of range");
  }
}

std::vector<std::size_t> class_counts(std::span<const std::size_t> labels, std::size_t k) {
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t l : labels) ++counts[l];
  return counts;
}

void require_all_classes(std::span<const std::size_t> labels, std::size_t k) {
  const auto counts = class_counts(labels, k);
  std::string missing;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) missing += (missing.empty() ? "" : ",") + std::to_string(c);
  }
  if (!missing.empty()) throw InvalidInput("AUC undefined: classes missing from labels: " + missing);
  if (labels.size() == counts[labels[0]]) throw InvalidInput("AUC undefined: only one class present");
}

}  // namespace

MacroAuc auc_macro(const Matrix& probabilities, std::span<const std::size_t> labels) {
  check_prob_inputs(probabilities, labels);
  const std::size_t k = probabilities.cols();
  require_all_classes(labels, k);
  MacroAuc out;
  out.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    out.per_class[c] = auc_binary(column(probabilities, c), one_vs_rest(labels, c));
  }
  out.macro = std::accumulate(out.per_class.begin(), out.per_class.end(), 0.0) / static_cast<double>(k);
  return out;
}

double auc_micro(const Matrix& probabilities, std::span<const std::size_t> labels) {
  check_prob_inputs(probabilities, labels);
  const std::size_t k = probabilities.cols();
  require_all_classes(labels, k);
  Vector scores;
  std::vector<int> flags;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      scores.push_back(probabilities(i, c));
      flags.push_back(labels[i] == c ? 1 : 0);
    }
  }
  return auc_binary(scores, flags);
}

double auc_weighted(const Matrix& probabilities, std::span<const std::size_t> labels) {
  const MacroAuc per = auc_macro(probabilities, labels);
  const auto counts = class_counts(labels, probabilities.cols());
  double s = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) s += per.per_class[c] * static_cast<double>(counts[c]);
  return s / static_cast<double>(labels.size());
}

double auc_over_present_classes(const Matrix& probabilities, std::span<const std::size_t> labels) {
  check_prob_inputs(probabilities, labels);
  const std::size_t k = probabilities.cols();
  const auto counts = class_counts(labels, k);
  std::size_t present = 0;
  for (std::size_t c : counts) present += c > 0 ? 1 : 0;
  if (present < 2) return std::numeric_limits<double>::quiet_NaN();
  if (k == 2) return auc_binary(column(probabilities, 1), one_vs_rest(labels, 1));
  double s = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    s += auc_binary(column(probabilities, c), one_vs_rest(labels, c));
  }
  return s / static_cast<double>(present);
}

MetricsReport make_report(const Matrix& probabilities, std::span<const std::size_t> labels, AucMode mode) {
  check_prob_inputs(probabilities, labels);
  const std::size_t k = probabilities.cols();
  MetricsReport r;
  r.n = labels.size();
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::vector<std::size_t> preds(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    preds[i] = argmax(probabilities.row(i));
    ++r.confusion[labels[i]][preds[i]];
  }
  r.acc = accuracy(preds, labels);
  const auto counts = class_counts(labels, k);
  const bool all_present = std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  if (!all_present) {
    // small folds: score what is scorable, NaN for the rest
    r.auc = auc_over_present_classes(probabilities, labels);
    if (k > 2) {
      r.per_class_auc.assign(k, std::numeric_limits<double>::quiet_NaN());
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] > 0 && counts[c] < labels.size()) {
          r.per_class_auc[c] = auc_binary(column(probabilities, c), one_vs_rest(labels, c));
        }
      }
    }
    return r;
  }
  if (k == 2) {
    r.auc = auc_binary(column(probabilities, 1), one_vs_rest(labels, 1));
    return r;
  }
  const MacroAuc macro = auc_macro(probabilities, labels);
  r.per_class_auc = macro.per_class;
  switch (mode) {
    case AucMode::kMacro: r.auc = macro.macro; break;
    case AucMode::kMicro: r.auc = auc_micro(probabilities, labels); break;
    case AucMode::kWeighted: r.auc = auc_weighted(probabilities, labels); break;
  }
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_report_csv(std::ostream& out, std::span<const FoldReport> rows, std::size_t num_classes) {
  out << "fold,acc,auc";
  if (num_classes > 2) {
    for (std::size_t c = 0; c < num_classes; ++c) out << ",auc_class_" << c;
  }
  out << '\n';
  for (const auto& r : rows) {
    out << r.fold << ',' << fmt(r.metrics.acc) << ',' << fmt(r.metrics.auc);
    if (num_classes > 2) {
      for (std::size_t c = 0; c < num_classes; ++c) {
        out << ',' << (c < r.metrics.per_class_auc.size() ? fmt(r.metrics.per_class_auc[c]) : "");
      }
    }
    out << '\n';
  }
}

void write_report_table(std::ostream& out, std::span<const FoldReport> rows,
                        std::span<const std::string> class_names) {
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %8s %8s", "fold", "ACC", "AUC");
  out << line;
  const bool multi = class_names.size() > 2;
  if (multi) {
    for (const auto& name : class_names) {
      std::snprintf(line, sizeof line, " %10s", ("AUC:" + name).c_str());
      out << line;
    }
  }
  out << '\n';
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-8s %8.4f %8.4f", r.fold.c_str(), r.metrics.acc, r.metrics.auc);
    out << line;
    if (multi) {
      for (std::size_t c = 0; c < class_names.size(); ++c) {
        const double v = c < r.metrics.per_class_auc.size() ? r.metrics.per_class_auc[c] : std::nan("");
        std::snprintf(line, sizeof line, " %10.4f", v);
        out << line;
      }
    }
    out << '\n';
  }
}

}  // namespace tpmil
