#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>

#include "tpmil/checkpoint.hpp"
#include "tpmil/data.hpp"
#include "tpmil/error.hpp"
#include "tpmil/evaluation.hpp"
#include "tpmil/interpret.hpp"
#include "tpmil/model.hpp"
#include "tpmil/parallel.hpp"
#include "tpmil/training.hpp"

namespace tpmil::cli {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

void echo_config(std::ostream& out, const std::string& command, const ConfigEcho& items) {
  out << "# tpmil " << command;
  for (const auto& [k, v] : items) out << ' ' << k << '=' << v;
  out << '\n';
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

struct TrainFlags {
  std::string manifest;
  std::string out_dir = "tpmil_out";
  double lr = 0.0002;
  double weight_decay = 0.00001;
  std::size_t epochs = 200;
  double lambda = 1.0;
  bool no_prototype = false;
  std::string norm = "minmax";
  std::string activation = "relu";
  double tau = 1.0;
  std::size_t hidden = 512;
  std::size_t attn = 256;
  bool weighted_sampling = false;
  bool decoupled_wd = false;
  std::uint64_t seed = 1;
  std::size_t folds = 5;
  double val_fraction = 0.2;
  std::string auc_mode = "macro";
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  sub->add_option("--manifest", f.manifest, "Dataset manifest CSV")->required();
  sub->add_option("--out", f.out_dir, "Output directory")->capture_default_str();
  sub->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  sub->add_option("--weight-decay", f.weight_decay, "Weight decay")->capture_default_str();
  sub->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--lambda", f.lambda, "Weight of the prototype KLD loss")->capture_default_str();
  sub->add_flag("--no-prototype", f.no_prototype, "Disable the prototype module (attention-MIL baseline)");
  sub->add_option("--norm", f.norm, "Pseudo-label attention normalization: minmax|softmax-raw")->capture_default_str();
  sub->add_option("--activation", f.activation, "Projector activation: relu|none")->capture_default_str();
  sub->add_option("--tau", f.tau, "Distance softmax temperature")->capture_default_str();
  sub->add_option("--hidden", f.hidden, "Projector output width L")->capture_default_str();
  sub->add_option("--attn", f.attn, "Attention hidden width A")->capture_default_str();
  sub->add_flag("--weighted-sampling", f.weighted_sampling, "Sample bags inversely to class frequency");
  sub->add_flag("--decoupled-wd", f.decoupled_wd, "Decoupled (AdamW-style) weight decay");
  sub->add_option("--seed", f.seed, "Random seed")->capture_default_str();
  sub->add_option("--folds", f.folds, "Cross-validation folds")->capture_default_str();
  sub->add_option("--val-fraction", f.val_fraction, "Validation share of non-test patients")->capture_default_str();
  sub->add_option("--auc-mode", f.auc_mode, "Multi-class AUC: macro|micro|weighted")->capture_default_str();
}

TrainConfig make_train_config(const TrainFlags& f, const Manifest& manifest) {
  TrainConfig c;
  c.model.num_classes = manifest.num_classes();
  c.model.feature_dim = manifest.feature_dim;
  c.model.hidden_dim = f.hidden;
  c.model.attention_dim = f.attn;
  c.model.tau = f.tau;
  c.model.lambda = f.lambda;
  c.model.norm = parse_attention_norm(f.norm);
  c.model.activation = parse_activation(f.activation);
  c.model.prototype_module = !f.no_prototype;
  c.lr = f.lr;
  c.weight_decay = f.weight_decay;
  c.epochs = f.epochs;
  c.weighted_sampling = f.weighted_sampling;
  c.decoupled_weight_decay = f.decoupled_wd;
  c.seed = f.seed;
  c.threads = thread_count_from_env();
  c.validate();
  return c;
}

ConfigEcho echo_train(const TrainFlags& f, const TrainConfig& c) {
  return {{"manifest", f.manifest},
          {"out", f.out_dir},
          {"K", std::to_string(c.model.num_classes)},
          {"D", std::to_string(c.model.feature_dim)},
          {"L", std::to_string(c.model.hidden_dim)},
          {"A", std::to_string(c.model.attention_dim)},
          {"lr", num(c.lr)},
          {"weight_decay", num(c.weight_decay)},
          {"decoupled_wd", c.decoupled_weight_decay ? "1" : "0"},
          {"epochs", std::to_string(c.epochs)},
          {"lambda", num(c.model.lambda)},
          {"prototype", c.model.prototype_module ? "1" : "0"},
          {"norm", std::string(to_string(c.model.norm))},
          {"activation", std::string(to_string(c.model.activation))},
          {"tau", num(c.model.tau)},
          {"weighted_sampling", c.weighted_sampling ? "1" : "0"},
          {"beta1", num(c.beta1)},
          {"beta2", num(c.beta2)},
          {"adam_eps", num(c.adam_eps)},
          {"seed", std::to_string(c.seed)},
          {"folds", std::to_string(f.folds)},
          {"val_fraction", num(f.val_fraction)},
          {"auc_mode", f.auc_mode}};
}

void write_log_header(std::ostream& log) { log << "epoch,train_ce,train_kld,train_total,val_auc,val_acc\n"; }

void write_log_row(std::ostream& log, const EpochStats& s) {
  log << s.epoch << ',' << num(s.train_ce) << ',' << num(s.train_kld) << ',' << num(s.train_total) << ','
      << num(s.val_auc) << ',' << num(s.val_acc) << '\n';
}

FoldReport fold_row(std::string tag, const MetricsReport& m) { return {std::move(tag), m}; }

int run_synth(std::ostream& out, SyntheticConfig cfg, const std::string& out_dir) {
  echo_config(out, "synth",
              {{"classes", std::to_string(cfg.num_classes)},
               {"bags", std::to_string(cfg.num_bags)},
               {"dim", std::to_string(cfg.dim)},
               {"min_instances", std::to_string(cfg.instances_per_bag.first)},
               {"max_instances", std::to_string(cfg.instances_per_bag.second)},
               {"pos_min", num(cfg.positive_fraction.first)},
               {"pos_max", num(cfg.positive_fraction.second)},
               {"separation", num(cfg.cluster_separation)},
               {"noise", num(cfg.noise_scale)},
               {"seed", std::to_string(cfg.seed)},
               {"out", out_dir}});
  const SyntheticDataset data = generate_synthetic_dataset(cfg);
  write_synthetic_dataset(out_dir, data);
  out << "wrote " << data.dataset.bags.size() << " bags to " << (fs::path(out_dir) / "manifest.csv").string()
      << '\n';
  return kExitOk;
}

int run_train(std::ostream& out, const TrainFlags& f, std::size_t fold) {
  const std::size_t threads = thread_count_from_env();
  const Dataset ds = load_dataset(f.manifest, threads);
  const TrainConfig config = make_train_config(f, ds.manifest);
  auto echo = echo_train(f, config);
  echo.emplace_back("fold", std::to_string(fold));
  echo_config(out, "train", echo);
  const auto splits = make_cv_splits(ds.manifest, f.folds, f.val_fraction, config.seed);
  if (fold >= splits.size()) throw InvalidInput("--fold must be < --folds");
  const CvSplit& split = splits[fold];
  const fs::path dir(f.out_dir);
  auto log = open_out(dir / "train_log.csv");
  write_log_header(log);
  const FitResult result = fit(select_bags(ds, split.train_ids), select_bags(ds, split.val_ids), config,
                               [&](const EpochStats& s) { write_log_row(log, s); });
  save_checkpoint(dir / "model.ckpt", result.best);
  const MetricsReport test =
      evaluate_model(result.best, select_bags(ds, split.test_ids), parse_auc_mode(f.auc_mode), threads);
  const std::vector<FoldReport> rows{fold_row(std::to_string(fold), test)};
  auto report = open_out(dir / "report.csv");
  write_report_csv(report, rows, ds.manifest.num_classes());
  out << "selected epoch " << result.selected_epoch << '\n';
  write_report_table(out, rows, ds.manifest.class_names);
  return kExitOk;
}

int run_cv(std::ostream& out, const TrainFlags& f) {
  const std::size_t threads = thread_count_from_env();
  const Dataset ds = load_dataset(f.manifest, threads);
  const TrainConfig config = make_train_config(f, ds.manifest);
  echo_config(out, "cv", echo_train(f, config));
  const fs::path dir(f.out_dir);
  fs::create_directories(dir);
  std::vector<std::ofstream> logs;
  for (std::size_t i = 0; i < f.folds; ++i) {
    logs.push_back(open_out(dir / ("fold_" + std::to_string(i) + "_log.csv")));
    write_log_header(logs.back());
  }
  const CvResult cv = run_cross_validation(ds, config, f.folds, f.val_fraction, parse_auc_mode(f.auc_mode),
                                           [&](std::size_t fold, const EpochStats& s) { write_log_row(logs[fold], s); });
  std::vector<FoldReport> rows;
  for (const auto& fold : cv.folds) {
    save_checkpoint(dir / ("fold_" + std::to_string(fold.split.fold_index) + ".ckpt"), fold.fit.best);
    rows.push_back(fold_row(std::to_string(fold.split.fold_index), fold.test));
  }
  rows.push_back(fold_row("mean", cv.mean));
  rows.push_back(fold_row("std", cv.std));
  auto report = open_out(dir / "report.csv");
  write_report_csv(report, rows, ds.manifest.num_classes());
  write_report_table(out, rows, ds.manifest.class_names);
  return kExitOk;
}

int run_eval(std::ostream& out, const std::string& manifest, const std::string& ckpt, const std::string& report_path,
             const std::string& auc_mode, std::uint64_t seed) {
  const std::size_t threads = thread_count_from_env();
  const Model model = load_checkpoint(ckpt);
  echo_config(out, "eval",
              {{"manifest", manifest}, {"checkpoint", ckpt}, {"checkpoint_hash", checkpoint_hash(model)},
               {"auc_mode", auc_mode}, {"seed", std::to_string(seed)}});
  const Dataset ds = load_dataset(manifest, threads);
  if (ds.manifest.num_classes() != model.config.num_classes || ds.manifest.feature_dim != model.config.feature_dim) {
    throw InvalidInput("manifest classes/dim do not match the checkpoint");
  }
  BagRefs bags;
  for (const auto& b : ds.bags) bags.push_back(&b);
  const MetricsReport m = evaluate_model(model, bags, parse_auc_mode(auc_mode), threads);
  const std::vector<FoldReport> rows{fold_row("all", m)};
  if (!report_path.empty()) {
    auto report = open_out(report_path);
    write_report_csv(report, rows, ds.manifest.num_classes());
  }
  write_report_table(out, rows, ds.manifest.class_names);
  return kExitOk;
}

int run_heatmap(std::ostream& out, const std::string& manifest, const std::string& ckpt, const std::string& slide,
                const std::string& mode_name, std::size_t cell_px, const std::string& prefix, std::uint64_t seed) {
  const HeatmapMode mode = parse_heatmap_mode(mode_name);
  const Model model = load_checkpoint(ckpt);
  const std::string hash = checkpoint_hash(model);
  echo_config(out, "heatmap",
              {{"manifest", manifest}, {"checkpoint", ckpt}, {"checkpoint_hash", hash}, {"slide", slide},
               {"mode", mode_name}, {"cell_px", std::to_string(cell_px)}, {"out", prefix},
               {"seed", std::to_string(seed)}});
  const Manifest m = load_manifest(manifest);
  const auto it = std::find_if(m.entries.begin(), m.entries.end(), [&](const ManifestEntry& e) { return e.slide_id == slide; });
  if (it == m.entries.end()) throw InvalidInput("slide " + slide + " not in manifest");
  FeatureBag bag = load_feature_bag(it->feature_path, m.feature_dim);
  bag.slide_id = it->slide_id;
  bag.patient_id = it->patient_id;
  bag.label = it->label;
  const ForwardResult fr = forward(model.params, bag.features, bag.label, model.config);
  const PatchScoreMap map = heat_scores(fr.trace, bag, mode);
  {
    auto csv = open_out(prefix + ".csv");
    write_score_csv(csv, map, hash);
  }
  const auto ppm = render_heatmap(map, cell_px);
  auto img = open_out(prefix + ".ppm");
  img.write(reinterpret_cast<const char*>(ppm.data()), static_cast<std::streamsize>(ppm.size()));
  out << "predicted class " << m.class_names.at(fr.trace.predicted_class()) << "; wrote " << prefix << ".csv and "
      << prefix << ".ppm\n";
  return kExitOk;
}

int run_protodist(std::ostream& out, const std::string& ckpt, const std::string& manifest, const std::string& path,
                  std::uint64_t seed) {
  const Model model = load_checkpoint(ckpt);
  echo_config(out, "protodist",
              {{"checkpoint", ckpt}, {"checkpoint_hash", checkpoint_hash(model)}, {"manifest", manifest},
               {"out", path}, {"seed", std::to_string(seed)}});
  std::vector<std::string> names;
  if (!manifest.empty()) {
    names = load_manifest(manifest).class_names;
  } else {
    for (std::size_t k = 0; k < model.config.num_classes; ++k) names.push_back("class_" + std::to_string(k));
  }
  const PrototypeDistanceMatrix dm = prototype_distance_matrix(model.params, names);
  if (!path.empty()) {
    auto f = open_out(path);
    write_distance_matrix_csv(f, dm);
  }
  write_distance_matrix_csv(out, dm);
  return kExitOk;
}

struct GradFlags {
  std::uint64_t seed = 1;
  std::size_t seeds = 1;
  std::size_t dim = 16;
  std::size_t hidden = 8;
  std::size_t attn = 4;
  std::size_t classes = 3;
  std::size_t instances = 12;
  double lambda = 1.0;
  double tau = 1.0;
  double eps = 1e-5;
  double tol = 1e-4;
  std::string norm = "minmax";
  std::string activation = "relu";
  bool no_prototype = false;
};

int run_gradcheck(std::ostream& out, const GradFlags& g) {
  ModelConfig c;
  c.num_classes = g.classes;
  c.feature_dim = g.dim;
  c.hidden_dim = g.hidden;
  c.attention_dim = g.attn;
  c.lambda = g.lambda;
  c.tau = g.tau;
  c.norm = parse_attention_norm(g.norm);
  c.activation = parse_activation(g.activation);
  c.prototype_module = !g.no_prototype;
  c.validate();
  if (g.seeds < 1) throw InvalidInput("--seeds must be >= 1");
  echo_config(out, "gradcheck",
              {{"seed", std::to_string(g.seed)}, {"seeds", std::to_string(g.seeds)}, {"D", std::to_string(g.dim)},
               {"L", std::to_string(g.hidden)}, {"A", std::to_string(g.attn)}, {"K", std::to_string(g.classes)},
               {"M", std::to_string(g.instances)}, {"lambda", num(g.lambda)}, {"tau", num(g.tau)},
               {"norm", g.norm}, {"activation", g.activation}, {"prototype", g.no_prototype ? "0" : "1"},
               {"eps", num(g.eps)}, {"tol", num(g.tol)}});
  double worst = 0.0;
  for (std::size_t i = 0; i < g.seeds; ++i) {
    const std::uint64_t seed = g.seed + i;
    const GradCheckReport r = gradient_check(c, g.instances, seed, g.eps);
    out << "seed " << seed << " max_relative_error " << num(r.max_relative_error) << " (" << r.worst_tensor << "["
        << r.worst_index << "])\n";
    worst = std::max(worst, r.max_relative_error);
  }
  out << "max relative error " << num(worst) << (worst <= g.tol ? " PASS" : " FAIL") << '\n';
  return worst <= g.tol ? kExitOk : kExitRuntime;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trainable-prototype attention MIL over precomputed patch features", "tpmil"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  SyntheticConfig synth;
  std::string synth_out = "synthetic";
  auto* s = app.add_subcommand("synth", "Generate a synthetic MIL dataset with oracle instance labels");
  s->add_option("--classes", synth.num_classes, "Number of bag classes K")->capture_default_str();
  s->add_option("--bags", synth.num_bags, "Number of bags")->capture_default_str();
  s->add_option("--dim", synth.dim, "Feature dimension D")->capture_default_str();
  s->add_option("--min-instances", synth.instances_per_bag.first, "Minimum instances per bag")->capture_default_str();
  s->add_option("--max-instances", synth.instances_per_bag.second, "Maximum instances per bag")->capture_default_str();
  s->add_option("--pos-min", synth.positive_fraction.first, "Minimum positive fraction")->capture_default_str();
  s->add_option("--pos-max", synth.positive_fraction.second, "Maximum positive fraction")->capture_default_str();
  s->add_option("--separation", synth.cluster_separation, "Cluster separation in noise units")->capture_default_str();
  s->add_option("--noise", synth.noise_scale, "Instance noise scale")->capture_default_str();
  s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  s->add_option("--out", synth_out, "Output directory")->capture_default_str();

  TrainFlags train_flags;
  std::size_t train_fold = 0;
  auto* t = app.add_subcommand("train", "Fit one train/val split and score its test fold");
  add_train_flags(t, train_flags);
  t->add_option("--fold", train_fold, "Which CV fold to hold out as test")->capture_default_str();

  TrainFlags cv_flags;
  auto* c = app.add_subcommand("cv", "Patient-level k-fold cross validation");
  add_train_flags(c, cv_flags);

  std::string eval_manifest, eval_ckpt, eval_report, eval_auc = "macro";
  std::uint64_t eval_seed = 1;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on every bag of a manifest");
  e->add_option("--manifest", eval_manifest, "Dataset manifest CSV")->required();
  e->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  e->add_option("--out", eval_report, "Report CSV path");
  e->add_option("--auc-mode", eval_auc, "Multi-class AUC: macro|micro|weighted")->capture_default_str();
  e->add_option("--seed", eval_seed, "Random seed (unused by scoring)")->capture_default_str();

  std::string hm_manifest, hm_ckpt, hm_slide, hm_mode = "attention", hm_out = "heatmap";
  std::size_t hm_cell = 16;
  std::uint64_t hm_seed = 1;
  auto* h = app.add_subcommand("heatmap", "Per-patch attention or prototype-closeness map for one slide");
  h->add_option("--manifest", hm_manifest, "Dataset manifest CSV")->required();
  h->add_option("--checkpoint", hm_ckpt, "Checkpoint file")->required();
  h->add_option("--slide", hm_slide, "Slide id")->required();
  h->add_option("--mode", hm_mode, "attention|dist-pred|dist-neg")->capture_default_str();
  h->add_option("--cell-px", hm_cell, "Pixels per patch cell")->capture_default_str();
  h->add_option("--out", hm_out, "Output prefix for .csv and .ppm")->capture_default_str();
  h->add_option("--seed", hm_seed, "Random seed (unused by scoring)")->capture_default_str();

  std::string pd_ckpt, pd_manifest, pd_out;
  std::uint64_t pd_seed = 1;
  auto* p = app.add_subcommand("protodist", "Pairwise distances between trained prototypes");
  p->add_option("--checkpoint", pd_ckpt, "Checkpoint file")->required();
  p->add_option("--manifest", pd_manifest, "Manifest supplying class names");
  p->add_option("--out", pd_out, "CSV output path");
  p->add_option("--seed", pd_seed, "Random seed (unused)")->capture_default_str();

  GradFlags grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  g->add_option("--seed", grad.seed, "First seed")->capture_default_str();
  g->add_option("--seeds", grad.seeds, "Number of consecutive seeds")->capture_default_str();
  g->add_option("--dim", grad.dim, "Feature dimension D")->capture_default_str();
  g->add_option("--hidden", grad.hidden, "Projector width L")->capture_default_str();
  g->add_option("--attn", grad.attn, "Attention width A")->capture_default_str();
  g->add_option("--classes", grad.classes, "Classes K")->capture_default_str();
  g->add_option("--instances", grad.instances, "Instances M")->capture_default_str();
  g->add_option("--lambda", grad.lambda, "KLD weight")->capture_default_str();
  g->add_option("--tau", grad.tau, "Distance softmax temperature")->capture_default_str();
  g->add_option("--eps", grad.eps, "Finite-difference step")->capture_default_str();
  g->add_option("--tol", grad.tol, "Maximum allowed relative error")->capture_default_str();
  g->add_option("--norm", grad.norm, "minmax|softmax-raw")->capture_default_str();
  g->add_option("--activation", grad.activation, "relu|none")->capture_default_str();
  g->add_flag("--no-prototype", grad.no_prototype, "Disable the prototype module");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitInvalid;
  }

  try {
    if (s->parsed()) return run_synth(out, synth, synth_out);
    if (t->parsed()) return run_train(out, train_flags, train_fold);
    if (c->parsed()) return run_cv(out, cv_flags);
    if (e->parsed()) return run_eval(out, eval_manifest, eval_ckpt, eval_report, eval_auc, eval_seed);
    if (h->parsed()) return run_heatmap(out, hm_manifest, hm_ckpt, hm_slide, hm_mode, hm_cell, hm_out, hm_seed);
    if (p->parsed()) return run_protodist(out, pd_ckpt, pd_manifest, pd_out, pd_seed);
    if (g->parsed()) return run_gradcheck(out, grad);
  } catch (const InvalidInput& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& ex) {
    err << "runtime failure: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitInvalid;
}

}  // namespace tpmil::cli
