#include "tpmil/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tpmil/error.hpp"

namespace tpmil {

std::string_view to_string(HeatmapMode m) {
  switch (m) {
    case HeatmapMode::kAttention: return "attention";
    case HeatmapMode::kDistPred: return "dist-pred";
    case HeatmapMode::kDistNeg: return "dist-neg";
  }
  return "attention";
}

HeatmapMode parse_heatmap_mode(std::string_view s) {
  if (s == "attention") return HeatmapMode::kAttention;
  if (s == "dist-pred") return HeatmapMode::kDistPred;
  if (s == "dist-neg") return HeatmapMode::kDistNeg;
  throw InvalidInput("unknown heatmap mode '" + std::string(s) + "' (expected attention|dist-pred|dist-neg)");
}

namespace {

const std::vector<PatchCoord>& require_coords(const ForwardTrace& trace, const FeatureBag& bag) {
  if (!bag.coords) throw InvalidInput("bag " + bag.slide_id + " has no patch coordinates");
  if (bag.coords->size() != trace.a.size()) {
    throw InvalidInput("bag " + bag.slide_id + ": coordinate count does not match trace");
  }
  return *bag.coords;
}

Vector minmax_or_half(std::span<const double> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  Vector out(v.size(), 0.5);
  if (range > 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp((v[i] - *lo) / range, 0.0, 1.0);
  }
  return out;
}

PatchScoreMap build(const FeatureBag& bag, const std::vector<PatchCoord>& coords, HeatmapMode mode,
                    std::span<const double> raw, std::span<const double> score) {
  PatchScoreMap map;
  map.slide_id = bag.slide_id;
  map.mode = mode;
  map.entries.resize(raw.size());
  for (std::size_t j = 0; j < raw.size(); ++j) map.entries[j] = {coords[j], raw[j], score[j]};
  return map;
}

}  // namespace

PatchScoreMap attention_heat_scores(const ForwardTrace& trace, const FeatureBag& bag) {
  const auto& coords = require_coords(trace, bag);
  return build(bag, coords, HeatmapMode::kAttention, trace.a, minmax_or_half(trace.a));
}

PatchScoreMap distance_heat_scores(const ForwardTrace& trace, const FeatureBag& bag, DistanceTarget target) {
  if (!trace.prototype_module || trace.dist.empty()) {
    throw InvalidInput("distance heatmaps need a model with the prototype module");
  }
  const auto& coords = require_coords(trace, bag);
  const std::size_t col = target == DistanceTarget::kNegative ? trace.dist.cols() - 1 : trace.predicted_class();
  Vector raw(trace.dist.rows());
  for (std::size_t j = 0; j < raw.size(); ++j) raw[j] = trace.dist(j, col);
  Vector score = minmax_or_half(raw);
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  if (*hi > *lo) {
    for (double& s : score) s = 1.0 - s;
  }
  return build(bag, coords, target == DistanceTarget::kNegative ? HeatmapMode::kDistNeg : HeatmapMode::kDistPred,
               raw, score);
}

PatchScoreMap heat_scores(const ForwardTrace& trace, const FeatureBag& bag, HeatmapMode mode) {
  switch (mode) {
    case HeatmapMode::kAttention: return attention_heat_scores(trace, bag);
    case HeatmapMode::kDistPred: return distance_heat_scores(trace, bag, DistanceTarget::kPredictedClass);
    case HeatmapMode::kDistNeg: return distance_heat_scores(trace, bag, DistanceTarget::kNegative);
  }
  throw InvalidInput("unknown heatmap mode");
}

PrototypeDistanceMatrix prototype_distance_matrix(const ModelParams& params,
                                                  std::span<const std::string> class_names) {
  const std::size_t n = params.prototypes.rows();
  if (class_names.size() + 1 != n) {
    throw InvalidInput("expected " + std::to_string(n - 1) + " class names, got " +
                       std::to_string(class_names.size()));
  }
  PrototypeDistanceMatrix out;
  out.labels.assign(class_names.begin(), class_names.end());
  out.labels.emplace_back("NEG");
  out.matrix = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = euclidean_distance(params.prototypes.row(i), params.prototypes.row(j));
      out.matrix(i, j) = d;
      out.matrix(j, i) = d;
    }
  }
  return out;
}

std::vector<unsigned char> render_heatmap(const PatchScoreMap& map, std::size_t cell_px) {
  if (map.entries.empty()) throw InvalidInput("cannot render an empty score map");
  if (cell_px < 1) throw InvalidInput("cell_px must be >= 1");
  std::int32_t max_x = 0;
  std::int32_t max_y = 0;
  for (const auto& e : map.entries) {
    if (e.pos.x < 0 || e.pos.y < 0) throw InvalidInput("negative patch coordinate");
    max_x = std::max(max_x, e.pos.x);
    max_y = std::max(max_y, e.pos.y);
  }
  const std::size_t width = static_cast<std::size_t>(max_x + 1) * cell_px;
  const std::size_t height = static_cast<std::size_t>(max_y + 1) * cell_px;
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<unsigned char> img(header.begin(), header.end());
  const std::size_t offset = img.size();
  img.resize(offset + width * height * 3, 255);
  for (const auto& e : map.entries) {
    const double s = std::clamp(e.score, 0.0, 1.0);
    const auto r = static_cast<unsigned char>(std::lround(255.0 * s));
    const auto b = static_cast<unsigned char>(std::lround(255.0 * (1.0 - s)));
    for (std::size_t dy = 0; dy < cell_px; ++dy) {
      const std::size_t py = static_cast<std::size_t>(e.pos.y) * cell_px + dy;
      for (std::size_t dx = 0; dx < cell_px; ++dx) {
        const std::size_t px = static_cast<std::size_t>(e.pos.x) * cell_px + dx;
        unsigned char* p = img.data() + offset + (py * width + px) * 3;
        p[0] = r;
        p[1] = 0;
        p[2] = b;
      }
    }
  }
  return img;
}

void write_score_csv(std::ostream& out, const PatchScoreMap& map, std::string_view checkpoint_hash) {
  out << "# slide=" << map.slide_id << " mode=" << to_string(map.mode) << " checkpoint=" << checkpoint_hash << '\n';
  out << "x,y,raw_value,normalized_score\n";
  char buf[96];
  for (const auto& e : map.entries) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g\n", e.pos.x, e.pos.y, e.raw, e.score);
    out << buf;
  }
}

void write_distance_matrix_csv(std::ostream& out, const PrototypeDistanceMatrix& m) {
  out << "prototype";
  for (const auto& l : m.labels) out << ',' << l;
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    out << m.labels[i];
    for (std::size_t j = 0; j < m.labels.size(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", m.matrix(i, j));
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace tpmil
