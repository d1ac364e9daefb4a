#pragma once

// Per-patch score maps (attention and prototype closeness), the
// inter-prototype distance matrix, and a PPM rasterizer.

#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpmil/data.hpp"
#include "tpmil/model.hpp"

namespace tpmil {

enum class HeatmapMode { kAttention, kDistPred, kDistNeg };
std::string_view to_string(HeatmapMode m);
HeatmapMode parse_heatmap_mode(std::string_view s);

struct PatchScore {
  PatchCoord pos;
  double raw = 0.0;    // attention score or distance
  double score = 0.0;  // per-slide normalized, in [0, 1]; high = evidence for
};

struct PatchScoreMap {
  std::string slide_id;
  HeatmapMode mode = HeatmapMode::kAttention;
  std::vector<PatchScore> entries;  // one per instance, bag order
};

/// Min-max normalized attention; a flat bag maps to 0.5 everywhere.
PatchScoreMap attention_heat_scores(const ForwardTrace& trace, const FeatureBag& bag);

enum class DistanceTarget { kPredictedClass, kNegative };

/// Closeness 1 - minmax(d[., target]) to the predicted-class or negative
/// prototype; a flat bag maps to 0.5 everywhere.
PatchScoreMap distance_heat_scores(const ForwardTrace& trace, const FeatureBag& bag, DistanceTarget target);

/// Dispatches on mode: attention, dist-pred or dist-neg.
PatchScoreMap heat_scores(const ForwardTrace& trace, const FeatureBag& bag, HeatmapMode mode);

struct PrototypeDistanceMatrix {
  std::vector<std::string> labels;  // class names then "NEG"
  Matrix matrix;                    // (K+1) x (K+1)
};

PrototypeDistanceMatrix prototype_distance_matrix(const ModelParams& params,
                                                  std::span<const std::string> class_names);

/// Binary PPM (P6). Cell (x, y) spans cell_px pixels square with color
/// (round(255 s), 0, round(255 (1 - s))); grid cells without a patch are white.
std::vector<unsigned char> render_heatmap(const PatchScoreMap& map, std::size_t cell_px);

/// `# slide=... mode=... checkpoint=...` then `x,y,raw_value,normalized_score` rows.
void write_score_csv(std::ostream& out, const PatchScoreMap& map, std::string_view checkpoint_hash);
void write_distance_matrix_csv(std::ostream& out, const PrototypeDistanceMatrix& m);

}  // namespace tpmil
