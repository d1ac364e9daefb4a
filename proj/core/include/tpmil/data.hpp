#pragma once

// Feature bags on disk (TPFB), dataset manifests, patient-level CV splits and
// the synthetic dataset generator.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tpmil/error.hpp"
#include "tpmil/numerics.hpp"

namespace tpmil {

struct PatchCoord {
  std::int32_t x = 0;
  std::int32_t y = 0;
  friend bool operator==(const PatchCoord&, const PatchCoord&) = default;
  friend auto operator<=>(const PatchCoord&, const PatchCoord&) = default;
};

/// One slide: M instance feature vectors (rows) with optional patch positions.
struct FeatureBag {
  std::string slide_id;
  std::string patient_id;
  std::size_t label = 0;
  Matrix features;
  std::optional<std::vector<PatchCoord>> coords;

  std::size_t num_instances() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

struct ManifestEntry {
  std::string slide_id;
  std::string patient_id;
  std::size_t label = 0;
  std::filesystem::path feature_path;  // resolved against the manifest directory
};

struct Manifest {
  std::vector<std::string> class_names;
  std::size_t feature_dim = 0;
  std::vector<ManifestEntry> entries;

  std::size_t num_classes() const { return class_names.size(); }
};

/// Manifest syntax error. `line()` is 1-based, 0 when not tied to a line.
class ManifestError : public InvalidInput {
 public:
  ManifestError(std::size_t line, const std::string& what)
      : InvalidInput(line ? "manifest line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class FeatureFileErrorCode {
  kIo = 1,
  kBadMagic,
  kBadVersion,
  kDimensionMismatch,
  kTruncated,
  kInvalidContent,
};

class FeatureFileError : public InvalidInput {
 public:
  FeatureFileError(FeatureFileErrorCode code, const std::string& what)
      : InvalidInput(what), code_(code) {}
  FeatureFileErrorCode code() const { return code_; }

 private:
  FeatureFileErrorCode code_;
};

inline constexpr char kFeatureMagic[4] = {'T', 'P', 'F', 'B'};
inline constexpr std::uint32_t kFeatureVersion = 1;

/// Parses and validates a manifest. Feature paths are resolved relative to
/// the manifest's directory and must exist.
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Reads a TPFB file. Identity fields (slide, patient, label) are left empty;
/// `load_dataset` fills them from the manifest.
FeatureBag load_feature_bag(const std::filesystem::path& path, std::size_t expected_dim);
/// Writes a TPFB file. Features are narrowed to float32.
void write_feature_bag(const std::filesystem::path& path, const FeatureBag& bag);

struct Dataset {
  Manifest manifest;
  std::vector<FeatureBag> bags;  // parallel to manifest.entries
};

/// Loads every bag named by the manifest. Loads fan out across up to
/// `threads` workers; the result does not depend on the thread count.
Dataset load_dataset(const std::filesystem::path& manifest_path, std::size_t threads = 1);

struct CvSplit {
  std::size_t fold_index = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
};

/// Patient-grouped k-fold splits. Patients are shuffled under `seed` and dealt
/// round-robin into folds; the non-test patients of each fold are split into
/// train/val with round(n * val_fraction) validation patients (halves go to
/// train, at least one patient on each side).
std::vector<CvSplit> make_cv_splits(const Manifest& manifest, std::size_t n_folds,
                                    double val_fraction, std::uint64_t seed);

struct SyntheticConfig {
  std::size_t num_classes = 3;
  std::size_t dim = 64;
  std::size_t num_bags = 200;
  std::pair<std::size_t, std::size_t> instances_per_bag{20, 60};
  std::pair<double, double> positive_fraction{0.1, 0.3};
  /// Minimum pairwise distance between cluster means, in units of noise_scale.
  double cluster_separation = 4.0;
  double noise_scale = 1.0;
  /// Probability that a bag shares the patient (and class) of the previous bag.
  double repeat_patient_probability = 0.25;
  std::uint64_t seed = 1;
  /// Optional explicit cluster means, rows 0..K-1 tumor classes then the
  /// negative class. Overrides the random layout when non-empty.
  std::vector<Vector> cluster_means;
};

inline constexpr int kNegativeInstance = -1;

struct SyntheticOracle {
  /// Per bag, per instance: class index in [0, K) or kNegativeInstance.
  std::vector<std::vector<int>> instance_labels;
  std::vector<Vector> cluster_means;  // K + 1 rows, negative last
  double noise_scale = 1.0;
  std::pair<double, double> positive_fraction;
};

struct SyntheticDataset {
  Dataset dataset;
  SyntheticOracle oracle;
};

/// Draws a synthetic MIL dataset in memory. Bag i of class k mixes class-k
/// instances (at least one, fraction drawn from positive_fraction) with
/// negatives from a single shared cluster. Patch coordinates lay instances
/// out on a square grid in shuffled order.
SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& config);

/// Writes bags as `<dir>/bags/<slide_id>.tpfb` plus `<dir>/manifest.csv` and
/// `<dir>/oracle.csv` (slide_id,instance,label with -1 for negative).
void write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticDataset& data);

}  // namespace tpmil
