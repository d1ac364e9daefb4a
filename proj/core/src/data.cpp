#include "tpmil/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "binary_io.hpp"
#include "tpmil/parallel.hpp"

namespace tpmil {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FeatureFileError(FeatureFileErrorCode::kIo, "cannot open feature file: " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("manifest not found: " + path.string());
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");

  Manifest m;
  bool have_classes = false;
  bool have_dim = false;
  bool have_header = false;
  std::unordered_map<std::string, std::size_t> class_index;
  std::unordered_set<std::string> seen_slides;

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (have_header) continue;
      if (line.rfind("#classes=", 0) == 0) {
        m.class_names.clear();
        for (auto& name : split(line.substr(9), ',')) {
          name = trim(name);
          if (name.empty()) throw ManifestError(line_no, "empty class name");
          if (class_index.count(name)) throw ManifestError(line_no, "duplicate class name " + name);
          class_index[name] = m.class_names.size();
          m.class_names.push_back(name);
        }
        if (m.class_names.size() < 2) {
          throw ManifestError(line_no, "need at least 2 classes, got " +
                                           std::to_string(m.class_names.size()));
        }
        have_classes = true;
      } else if (line.rfind("#dim=", 0) == 0) {
        try {
          const long d = std::stol(line.substr(5));
          if (d < 1) throw std::out_of_range("dim");
          m.feature_dim = static_cast<std::size_t>(d);
        } catch (const std::exception&) {
          throw ManifestError(line_no, "invalid #dim value");
        }
        have_dim = true;
      }
      continue;
    }
    if (!have_header) {
      if (!have_classes) throw ManifestError(line_no, "missing #classes= comment line");
      if (!have_dim) throw ManifestError(line_no, "missing #dim= comment line");
      const auto cols = split(line, ',');
      const std::vector<std::string> expected{"slide_id", "patient_id", "label", "feature_path"};
      for (std::size_t i = 0; i < expected.size(); ++i) {
        if (i >= cols.size() || trim(cols[i]) != expected[i]) {
          throw ManifestError(line_no, "missing column '" + expected[i] + "' in header");
        }
      }
      if (cols.size() != expected.size()) throw ManifestError(line_no, "unexpected extra header columns");
      have_header = true;
      continue;
    }
    const auto cols = split(line, ',');
    if (cols.size() != 4) {
      throw ManifestError(line_no, "expected 4 columns, got " + std::to_string(cols.size()));
    }
    ManifestEntry e;
    e.slide_id = trim(cols[0]);
    e.patient_id = trim(cols[1]);
    const std::string label = trim(cols[2]);
    const std::string fpath = trim(cols[3]);
    if (e.slide_id.empty() || e.patient_id.empty() || fpath.empty()) {
      throw ManifestError(line_no, "empty field");
    }
    auto it = class_index.find(label);
    if (it == class_index.end()) throw ManifestError(line_no, "unknown label name '" + label + "'");
    e.label = it->second;
    if (!seen_slides.insert(e.slide_id).second) {
      throw ManifestError(line_no, "duplicate slide_id '" + e.slide_id + "'");
    }
    const fs::path p(fpath);
    e.feature_path = p.is_absolute() ? p : base / p;
    if (!fs::exists(e.feature_path)) {
      throw ManifestError(line_no, "feature file not found: " + e.feature_path.string());
    }
    m.entries.push_back(std::move(e));
  }
  if (!have_classes) throw ManifestError(0, "missing #classes= comment line");
  if (!have_dim) throw ManifestError(0, "missing #dim= comment line");
  if (!have_header) throw ManifestError(0, "missing header row");
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest: " + path.string());
  out << "#classes=";
  for (std::size_t i = 0; i < manifest.class_names.size(); ++i) {
    out << (i ? "," : "") << manifest.class_names[i];
  }
  out << "\n#dim=" << manifest.feature_dim << "\n";
  out << "slide_id,patient_id,label,feature_path\n";
  for (const auto& e : manifest.entries) {
    out << e.slide_id << ',' << e.patient_id << ',' << manifest.class_names.at(e.label) << ','
        << e.feature_path.generic_string() << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

FeatureBag load_feature_bag(const fs::path& path, std::size_t expected_dim) {
  const auto bytes = read_file(path);
  detail::ByteReader r(bytes);
  char magic[4] = {};
  if (!r.take(magic, 4) || !std::equal(magic, magic + 4, kFeatureMagic)) {
    throw FeatureFileError(FeatureFileErrorCode::kBadMagic, "bad magic in " + path.string());
  }
  const std::uint32_t version = r.u32();
  const std::uint32_t m = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint8_t has_coords = r.u8();
  if (r.truncated()) {
    throw FeatureFileError(FeatureFileErrorCode::kTruncated, "truncated header in " + path.string());
  }
  if (version != kFeatureVersion) {
    throw FeatureFileError(FeatureFileErrorCode::kBadVersion,
                           "unsupported version " + std::to_string(version) + " in " + path.string());
  }
  if (d != expected_dim) {
    throw FeatureFileError(FeatureFileErrorCode::kDimensionMismatch,
                           "dimension mismatch in " + path.string() + ": file D=" +
                               std::to_string(d) + ", expected " + std::to_string(expected_dim));
  }
  if (m == 0) {
    throw FeatureFileError(FeatureFileErrorCode::kInvalidContent, "empty bag in " + path.string());
  }
  if (has_coords > 1) {
    throw FeatureFileError(FeatureFileErrorCode::kInvalidContent,
                           "has_coords flag must be 0 or 1 in " + path.string());
  }
  const std::uint64_t need = std::uint64_t{m} * d * 4 + (has_coords ? std::uint64_t{m} * 8 : 0);
  if (r.remaining() < need) {
    throw FeatureFileError(FeatureFileErrorCode::kTruncated, "truncated payload in " + path.string());
  }

  FeatureBag bag;
  bag.features = Matrix(m, d);
  auto vals = bag.features.values();
  for (double& v : vals) {
    v = static_cast<double>(r.f32());
  }
  if (!all_finite(vals)) {
    throw FeatureFileError(FeatureFileErrorCode::kInvalidContent, "non-finite feature in " + path.string());
  }
  if (has_coords) {
    std::vector<PatchCoord> coords(m);
    for (auto& c : coords) {
      c.x = r.i32();
      c.y = r.i32();
    }
    std::set<PatchCoord> unique(coords.begin(), coords.end());
    if (unique.size() != coords.size()) {
      throw FeatureFileError(FeatureFileErrorCode::kInvalidContent,
                             "duplicate patch coordinates in " + path.string());
    }
    bag.coords = std::move(coords);
  }
  return bag;
}

void write_feature_bag(const fs::path& path, const FeatureBag& bag) {
  if (bag.num_instances() == 0) throw InvalidInput("cannot write an empty bag");
  if (bag.coords && bag.coords->size() != bag.num_instances()) {
    throw InvalidInput("coords length does not match instance count");
  }
  detail::ByteWriter w;
  w.bytes(kFeatureMagic, 4);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(bag.num_instances()));
  w.u32(static_cast<std::uint32_t>(bag.dim()));
  w.u8(bag.coords ? 1 : 0);
  for (double v : bag.features.values()) w.f32(static_cast<float>(v));
  if (bag.coords) {
    for (const auto& c : *bag.coords) {
      w.i32(c.x);
      w.i32(c.y);
    }
  }
  write_file(path, w.buffer());
}

Dataset load_dataset(const fs::path& manifest_path, std::size_t threads) {
  Dataset ds;
  ds.manifest = load_manifest(manifest_path);
  ds.bags.resize(ds.manifest.entries.size());
  parallel_for(ds.bags.size(), threads, [&](std::size_t i) {
    const auto& e = ds.manifest.entries[i];
    FeatureBag bag = load_feature_bag(e.feature_path, ds.manifest.feature_dim);
    bag.slide_id = e.slide_id;
    bag.patient_id = e.patient_id;
    bag.label = e.label;
    ds.bags[i] = std::move(bag);
  });
  return ds;
}

std::vector<CvSplit> make_cv_splits(const Manifest& manifest, std::size_t n_folds,
                                    double val_fraction, std::uint64_t seed) {
  if (n_folds < 2) throw InvalidInput("n_folds must be >= 2");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw InvalidInput("val_fraction must be in (0, 1)");
  }
  std::set<std::string> patient_set;
  for (const auto& e : manifest.entries) patient_set.insert(e.patient_id);
  std::vector<std::string> patients(patient_set.begin(), patient_set.end());
  if (patients.size() < n_folds) {
    throw InvalidInput("fewer patients (" + std::to_string(patients.size()) + ") than folds (" +
                       std::to_string(n_folds) + ")");
  }
  Rng rng(derive_seed(seed, 0));
  rng.shuffle(patients);

  std::vector<CvSplit> splits(n_folds);
  for (std::size_t f = 0; f < n_folds; ++f) {
    std::set<std::string> test;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < patients.size(); ++i) {
      if (i % n_folds == f) {
        test.insert(patients[i]);
      } else {
        rest.push_back(patients[i]);
      }
    }
    Rng fold_rng(derive_seed(seed, f + 1));
    fold_rng.shuffle(rest);
    const double exact = static_cast<double>(rest.size()) * val_fraction;
    // nearest integer, exact halves rounded toward train
    auto n_val = static_cast<std::size_t>(std::ceil(exact - 0.5));
    if (rest.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, rest.size() - 1);
    std::set<std::string> val(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));

    CvSplit& s = splits[f];
    s.fold_index = f;
    for (const auto& e : manifest.entries) {
      if (test.count(e.patient_id)) {
        s.test_ids.push_back(e.slide_id);
      } else if (val.count(e.patient_id)) {
        s.val_ids.push_back(e.slide_id);
      } else {
        s.train_ids.push_back(e.slide_id);
      }
    }
  }
  return splits;
}

namespace {

char hex_digit(unsigned v) { return "0123456789abcdef"[v & 0xF]; }

std::string padded(const char* prefix, std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return prefix + digits;
}

std::vector<Vector> draw_cluster_means(const SyntheticConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.num_classes + 1;
  std::vector<Vector> means(n, Vector(cfg.dim));
  for (auto& m : means) {
    for (double& v : m) v = rng.normal();
  }
  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) min_dist = std::min(min_dist, euclidean_distance(means[a], means[b]));
  }
  // rescale so the closest pair sits exactly at the requested separation
  const double scale = cfg.cluster_separation * cfg.noise_scale / min_dist;
  for (auto& m : means) {
    for (double& v : m) v *= scale;
  }
  return means;
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 2) throw InvalidInput("synthetic: need at least 2 classes");
  if (cfg.dim < 2) throw InvalidInput("synthetic: need dim >= 2");
  if (cfg.num_bags < 1) throw InvalidInput("synthetic: need at least one bag");
  if (!(cfg.cluster_separation > 0.0)) throw InvalidInput("synthetic: cluster_separation must be > 0");
  if (!(cfg.noise_scale > 0.0)) throw InvalidInput("synthetic: noise_scale must be > 0");
  const auto [m_lo, m_hi] = cfg.instances_per_bag;
  const auto [p_lo, p_hi] = cfg.positive_fraction;
  if (m_lo > m_hi) throw InvalidInput("synthetic: instances_per_bag min > max");
  if (m_lo < 2) throw InvalidInput("synthetic: bags need at least 2 instances");
  if (p_lo > p_hi) throw InvalidInput("synthetic: positive_fraction min > max");
  if (!(p_lo >= 0.0 && p_hi < 1.0)) throw InvalidInput("synthetic: positive_fraction must lie in [0, 1)");
  if (!(cfg.repeat_patient_probability >= 0.0 && cfg.repeat_patient_probability < 1.0)) {
    throw InvalidInput("synthetic: repeat_patient_probability must lie in [0, 1)");
  }

  Rng rng(cfg.seed);
  SyntheticDataset out;
  auto& oracle = out.oracle;
  if (!cfg.cluster_means.empty()) {
    if (cfg.cluster_means.size() != cfg.num_classes + 1) {
      throw InvalidInput("synthetic: cluster_means must have K+1 rows");
    }
    for (const auto& m : cfg.cluster_means) {
      if (m.size() != cfg.dim) throw InvalidInput("synthetic: cluster_means row width != dim");
    }
    oracle.cluster_means = cfg.cluster_means;
  } else {
    oracle.cluster_means = draw_cluster_means(cfg, rng);
  }
  oracle.noise_scale = cfg.noise_scale;
  oracle.positive_fraction = cfg.positive_fraction;

  Manifest& manifest = out.dataset.manifest;
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    std::string name = "C";
    name.push_back(hex_digit(static_cast<unsigned>(k / 16)));
    name.push_back(hex_digit(static_cast<unsigned>(k % 16)));
    manifest.class_names.push_back(name);
  }
  manifest.feature_dim = cfg.dim;

  const std::size_t neg = cfg.num_classes;
  std::size_t patient = 0;
  std::size_t label = 0;
  for (std::size_t i = 0; i < cfg.num_bags; ++i) {
    if (i == 0 || rng.uniform() >= cfg.repeat_patient_probability) {
      ++patient;
      label = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.num_classes) - 1));
    }
    const auto m = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(m_lo), static_cast<std::int64_t>(m_hi)));
    const double frac = rng.uniform(p_lo, p_hi);
    const auto lo = static_cast<std::size_t>(std::ceil(p_lo * static_cast<double>(m)));
    const auto hi = static_cast<std::size_t>(std::floor(p_hi * static_cast<double>(m)));
    auto n_pos = static_cast<std::size_t>(std::llround(frac * static_cast<double>(m)));
    if (lo <= hi) n_pos = std::clamp(n_pos, lo, hi);
    n_pos = std::clamp<std::size_t>(n_pos, 1, m - 1);

    std::vector<int> inst_labels(m, kNegativeInstance);
    std::fill(inst_labels.begin(), inst_labels.begin() + static_cast<std::ptrdiff_t>(n_pos),
              static_cast<int>(label));
    rng.shuffle(inst_labels);

    FeatureBag bag;
    bag.slide_id = padded("S", i);
    bag.patient_id = padded("P", patient);
    bag.label = label;
    bag.features = Matrix(m, cfg.dim);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t c = inst_labels[j] == kNegativeInstance ? neg : static_cast<std::size_t>(inst_labels[j]);
      auto row = bag.features.row(j);
      for (std::size_t t = 0; t < cfg.dim; ++t) {
        // values are stored as float32 on disk; round here so memory and disk agree
        row[t] = static_cast<double>(
            static_cast<float>(oracle.cluster_means[c][t] + cfg.noise_scale * rng.normal()));
      }
    }
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(m))));
    std::vector<std::size_t> cells(side * side);
    for (std::size_t c = 0; c < cells.size(); ++c) cells[c] = c;
    rng.shuffle(cells);
    std::vector<PatchCoord> coords(m);
    for (std::size_t j = 0; j < m; ++j) {
      coords[j] = {static_cast<std::int32_t>(cells[j] % side), static_cast<std::int32_t>(cells[j] / side)};
    }
    bag.coords = std::move(coords);

    ManifestEntry e;
    e.slide_id = bag.slide_id;
    e.patient_id = bag.patient_id;
    e.label = label;
    e.feature_path = fs::path("bags") / (bag.slide_id + ".tpfb");
    manifest.entries.push_back(std::move(e));
    out.dataset.bags.push_back(std::move(bag));
    oracle.instance_labels.push_back(std::move(inst_labels));
  }
  return out;
}

void write_synthetic_dataset(const fs::path& dir, const SyntheticDataset& data) {
  fs::create_directories(dir / "bags");
  const auto& ds = data.dataset;
  for (std::size_t i = 0; i < ds.bags.size(); ++i) {
    write_feature_bag(dir / ds.manifest.entries[i].feature_path, ds.bags[i]);
  }
  write_manifest(dir / "manifest.csv", ds.manifest);
  std::ofstream oracle(dir / "oracle.csv", std::ios::trunc);
  if (!oracle) throw Error("cannot write oracle file in " + dir.string());
  oracle << "slide_id,instance,label\n";
  for (std::size_t i = 0; i < ds.bags.size(); ++i) {
    const auto& labels = data.oracle.instance_labels[i];
    for (std::size_t j = 0; j < labels.size(); ++j) {
      oracle << ds.bags[i].slide_id << ',' << j << ',' << labels[j] << '\n';
    }
  }
}

}  // namespace tpmil
