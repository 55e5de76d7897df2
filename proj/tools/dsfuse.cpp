// dsfuse: pilot -> select -> train -> fuse / eval / freq workflow.
#include "dsf/freqprobe.hpp"
#include "dsf/metrics.hpp"
#include "dsf/pilot.hpp"
#include "dsf/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Bad flags, config files or input layout: exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key \"" + key + "\"");
  }
}

/// Relative dataset roots live under $DSF_CACHE when it is set.
fs::path resolve_dataset(const std::string& root) {
  fs::path p(root);
  if (p.is_relative()) {
    if (const char* cache = std::getenv("DSF_CACHE"); cache != nullptr && *cache != '\0') p = fs::path(cache) / p;
  }
  return p;
}

void prepare_out(const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_directory(out)) throw ConfigError(out.string() + " exists and is not a directory");
  if (fs::is_directory(out) && !fs::is_empty(out)) {
    if (!force) throw ConfigError(out.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(out);
  }
  fs::create_directories(out);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

std::vector<dsf::PairRef> scan_training(const fs::path& root) {
  const fs::path train = root / "train";
  if (!fs::is_directory(train)) throw ConfigError("dataset split " + train.string() + " does not exist");
  if (!fs::is_directory(train / "labels")) throw ConfigError("missing labels directory " + (train / "labels").string());
  try {
    return dsf::scan_dataset(train);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
}

template <typename T>
void take(const json& j, const char* key, T& field) {
  try {
    if (j.contains(key)) field = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key \"") + key + "\": " + e.what());
  }
}

template <typename T>
void override_with(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

// ---------------------------------------------------------------------------

struct PilotArgs {
  std::string modality, config, out, dataset;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch_size;
  std::optional<double> lr;
  bool force = false;
};

int run_pilot_cmd(const PilotArgs& a) {
  dsf::Modality modality;
  try {
    modality = dsf::parse_modality(a.modality);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const json cfg = read_config(a.config);
  reject_unknown(cfg,
                 {"dataset", "epochs", "batch_size", "lr", "weight_lr_scale", "clip_norm", "val_fraction", "num_classes",
                  "seed", "patch_size", "stride", "ohem_thresh", "ohem_min_kept_fraction", "streams"},
                 "pilot config");
  dsf::PilotConfig pc;
  dsf::PatchGridSpec grid;
  std::string dataset = a.dataset;
  if (dataset.empty()) take(cfg, "dataset", dataset);
  take(cfg, "epochs", pc.epochs);
  take(cfg, "batch_size", pc.batch_size);
  take(cfg, "lr", pc.lr);
  take(cfg, "weight_lr_scale", pc.weight_lr_scale);
  take(cfg, "clip_norm", pc.clip_norm);
  take(cfg, "val_fraction", pc.val_fraction);
  take(cfg, "num_classes", pc.num_classes);
  take(cfg, "seed", pc.seed);
  take(cfg, "patch_size", grid.patch_size);
  take(cfg, "stride", grid.stride);
  take(cfg, "ohem_thresh", pc.ohem.thresh);
  take(cfg, "ohem_min_kept_fraction", pc.ohem.min_kept_fraction);
  try {
    if (cfg.contains("streams")) pc.streams = dsf::stream_config_from_json(cfg.at("streams"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("streams: ") + e.what());
  }
  override_with(a.seed, pc.seed);
  override_with(a.epochs, pc.epochs);
  override_with(a.batch_size, pc.batch_size);
  override_with(a.lr, pc.lr);
  if (pc.epochs < 0 || pc.batch_size < 1 || !(pc.lr > 0.0)) throw ConfigError("need epochs >= 0, batch_size >= 1, lr > 0");
  if (dataset.empty()) throw ConfigError("no dataset given (--dataset or config \"dataset\")");

  const auto refs = scan_training(resolve_dataset(dataset));
  prepare_out(a.out, a.force);
  json record = cfg;
  record["dataset"] = dataset;
  record["seed"] = pc.seed;
  record["epochs"] = pc.epochs;
  record["batch_size"] = pc.batch_size;
  record["lr"] = pc.lr;
  record["modality"] = a.modality;
  write_json(fs::path(a.out) / "config.json", record);

  const auto samples = dsf::prepare_samples(refs, grid, pc.num_classes);
  const auto result = dsf::run_pilot(modality, samples, pc, a.out, [](const dsf::PilotEpoch& e) {
    std::cout << "epoch " << e.epoch << " loss " << e.mean_loss << " val_miou " << e.val_miou << " entropy "
              << dsf::shannon_entropy(e.weights) << '\n';
  });
  std::cout << "checkpoint " << result.checkpoint.string() << " (epoch " << result.best_epoch << ")\n"
            << "trajectory " << result.trajectory_csv.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct SelectArgs {
  std::string trajectory, out, modality;
  double tau = 0.6;
  int k_min = 1;
  int k_max = 3;
};

int run_select_cmd(const SelectArgs& a) {
  std::string mod = a.modality;
  if (mod.empty()) {
    const std::string stem = fs::path(a.trajectory).stem().string();
    if (stem.ends_with("_ir")) mod = "ir";
    if (stem.ends_with("_vi")) mod = "vi";
    if (mod.empty()) throw ConfigError("cannot infer modality from " + a.trajectory + "; pass --modality");
  }
  dsf::Modality modality;
  dsf::SelectionRule rule{a.tau, a.k_min, a.k_max};
  try {
    modality = dsf::parse_modality(mod);
    rule.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!fs::is_regular_file(a.trajectory)) throw ConfigError("trajectory " + a.trajectory + " does not exist");
  auto selection = dsf::select_significant(dsf::WeightTrajectory::read_csv(a.trajectory, modality), rule);
  selection.trajectory = a.trajectory;
  selection.save(a.out);
  std::cout << selection.to_json().dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, out, dataset;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, max_steps, batch_size;
  std::optional<double> lr;
  bool force = false;
};

int run_train_cmd(const TrainArgs& a) {
  json cfg = read_config(a.config);
  std::string dataset = a.dataset;
  if (dataset.empty()) take(cfg, "dataset", dataset);
  cfg.erase("dataset");
  dsf::TrainConfig tc;
  try {
    tc = dsf::TrainConfig::from_json(cfg);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  override_with(a.seed, tc.seed);
  override_with(a.epochs, tc.epochs);
  override_with(a.max_steps, tc.max_steps);
  override_with(a.batch_size, tc.batch_size);
  override_with(a.lr, tc.lr);
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (dataset.empty()) throw ConfigError("no dataset given (--dataset or config \"dataset\")");
  for (const auto& [p, what] : {std::pair{tc.pilot_ir, "pilot_ir"}, std::pair{tc.pilot_vi, "pilot_vi"},
                                std::pair{tc.selection_ir, "selection_ir"}, std::pair{tc.selection_vi, "selection_vi"}}) {
    if (p.empty() || !fs::is_regular_file(p)) {
      throw ConfigError(std::string(what) + " '" + p.string() + "' not found; run `dsfuse pilot` and `dsfuse select` first");
    }
  }
  const auto refs = scan_training(resolve_dataset(dataset));
  prepare_out(a.out, a.force);
  const auto samples = dsf::prepare_samples(refs, {tc.patch_size, tc.stride}, tc.num_classes);
  const auto result = dsf::train_joint(tc, samples, a.out, [](const dsf::TrainStep& s) {
    std::cout << "step " << s.step << " epoch " << s.epoch << " l_total " << s.loss.l_total << '\n';
  });
  std::cout << "run " << result.run_dir.string() << ", " << result.steps << " steps\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct FuseArgs {
  std::string checkpoint, input, ir, vi, out;
  bool rgb = false;
  bool force = false;
};

int run_fuse_cmd(const FuseArgs& a) {
  if (!fs::is_regular_file(a.checkpoint)) throw ConfigError("checkpoint " + a.checkpoint + " does not exist");
  std::vector<dsf::PairRef> pairs;
  if (!a.input.empty()) {
    try {
      pairs = dsf::scan_dataset(a.input);
    } catch (const std::runtime_error& e) {
      throw ConfigError(e.what());
    }
  } else {
    if (a.ir.empty() || a.vi.empty()) throw ConfigError("give --input DIR or both --ir and --vi");
    if (!fs::is_regular_file(a.ir)) throw ConfigError("infrared image " + a.ir + " does not exist");
    if (!fs::is_regular_file(a.vi)) throw ConfigError("visible image " + a.vi + " does not exist");
    pairs.push_back({fs::path(a.ir).stem().string(), a.ir, a.vi, std::nullopt});
  }
  prepare_out(a.out, a.force);
  const auto report = dsf::fuse_inference(a.checkpoint, pairs, a.out, {a.rgb});
  std::cout << report.ids.size() << " images, mean " << report.mean_seconds() << " s\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string fused, source, pred, out;
  int num_classes = 9;
  bool force = false;
};

std::map<std::string, fs::path> list_png(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) throw ConfigError("directory " + dir.string() + " does not exist");
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}

dsf::Raster load_luma(const fs::path& png) {
  const auto img = dsf::read_png(png);
  if (img.channels >= 3) {
    return dsf::to_luma_chroma({dsf::to_unit_raster(img, 0), dsf::to_unit_raster(img, 1), dsf::to_unit_raster(img, 2)}).y;
  }
  return dsf::to_unit_raster(img, 0);
}

int run_eval_cmd(const EvalArgs& a) {
  std::vector<dsf::PairRef> refs;
  try {
    refs = dsf::scan_dataset(a.source);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  const auto fused = list_png(a.fused);
  std::string missing;
  std::set<std::string> source_ids;
  for (const auto& r : refs) {
    source_ids.insert(r.id);
    if (!fused.contains(r.id)) missing += " " + r.id + " (no fused image)";
  }
  for (const auto& [id, _] : fused) {
    if (!source_ids.contains(id)) missing += " " + id + " (no source pair)";
  }
  if (!missing.empty()) throw ConfigError("id sets differ:" + missing);
  std::map<std::string, fs::path> preds;
  if (!a.pred.empty()) {
    preds = list_png(a.pred);
    for (const auto& r : refs) {
      if (!r.label) throw ConfigError("segmentation evaluation needs labels; missing for " + r.id);
      if (!preds.contains(r.id)) throw ConfigError("id sets differ: " + r.id + " (no prediction)");
    }
  }
  prepare_out(a.out, a.force);

  std::vector<dsf::metrics::MetricsRecord> records;
  dsf::metrics::ConfusionMatrix confusion(a.num_classes);
  for (const auto& r : refs) {
    const auto pair = dsf::load_pair(r);
    const dsf::Raster f = load_luma(fused.at(r.id));
    if (f.rows() != pair.infrared.rows() || f.cols() != pair.infrared.cols()) {
      throw ConfigError(r.id + ": fused image size differs from the source pair");
    }
    records.push_back(dsf::metrics::evaluate_fusion(r.id, f, pair.infrared, dsf::to_luma_chroma(pair.visible).y));
    if (!a.pred.empty()) {
      const auto img = dsf::read_png(preds.at(r.id), true);
      dsf::LabelRaster p(img.height, img.width);
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        p.data()[i] = img.pixels[static_cast<std::size_t>(i) * static_cast<std::size_t>(img.channels)];
      }
      confusion.add(p, *pair.label);
    }
  }
  dsf::metrics::write_metrics_csv(fs::path(a.out) / "metrics.csv", records);
  const auto mean = dsf::metrics::mean_record(records);
  std::cout << "mean mi " << mean.mi << " ssim " << mean.ssim << " psnr " << mean.psnr << " scd " << mean.scd << '\n';
  if (!a.pred.empty()) {
    const auto score = dsf::metrics::seg_scores(confusion);
    dsf::metrics::write_seg_csv(fs::path(a.out) / "segmentation.csv", score);
    std::cout << "miou " << score.miou << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct FreqArgs {
  std::string checkpoint, ir, vi, out, grid = "common";
  int bins = 32;
  double cutoff = 0.1;
  bool force = false;
};

int run_freq_cmd(const FreqArgs& a) {
  if (!fs::is_regular_file(a.checkpoint)) throw ConfigError("checkpoint " + a.checkpoint + " does not exist");
  if (!fs::is_regular_file(a.ir)) throw ConfigError("infrared image " + a.ir + " does not exist");
  if (!fs::is_regular_file(a.vi)) throw ConfigError("visible image " + a.vi + " does not exist");
  if (a.bins < 1) throw ConfigError("--bins must be >= 1");
  const auto grid = a.grid == "native" ? dsf::freq::ProbeGrid::native : dsf::freq::ProbeGrid::common;
  prepare_out(a.out, a.force);
  const auto model = dsf::JointModel::load(a.checkpoint);
  const auto pair = dsf::load_pair({"probe", a.ir, a.vi, std::nullopt});
  const dsf::Raster ir = dsf::pad_reflect(pair.infrared, 16);
  const dsf::Raster vi = dsf::pad_reflect(dsf::to_luma_chroma(pair.visible).y, 16);
  std::vector<dsf::freq::SpectralProfile> profiles;
  std::vector<std::pair<std::string, double>> ratios;
  for (const auto& m : dsf::freq::probe_maps(*model, ir, vi, grid)) {
    profiles.push_back(dsf::freq::spectral_profile(m.map, a.bins, m.tag));
    ratios.emplace_back(m.tag, dsf::freq::low_freq_ratio(m.map, a.cutoff));
  }
  dsf::freq::write_profiles_csv(fs::path(a.out) / "profiles.csv", profiles);
  dsf::freq::write_ratio_csv(fs::path(a.out) / "low_freq.csv", ratios);
  for (const auto& [tag, r] : ratios) std::cout << tag << ' ' << r << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int train = 200;
  int test = 20;
  int size = 32;
  std::uint64_t seed = 0;
  bool force = false;
};

int run_synth_cmd(const SynthArgs& a) {
  if (a.size < 16 || a.train < 0 || a.test < 0) throw ConfigError("need --size >= 16 and non-negative counts");
  prepare_out(a.out, a.force);
  dsf::ShapesOptions opt;
  opt.size = a.size;
  if (a.train > 0) dsf::write_shapes_dataset(fs::path(a.out) / "train", a.train, a.seed, opt);
  if (a.test > 0) dsf::write_shapes_dataset(fs::path(a.out) / "test", a.test, a.seed + 1, opt);
  std::cout << "wrote " << a.train << " train and " << a.test << " test pairs\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prior-semantic-guided infrared/visible image fusion"};
  app.require_subcommand(1);

  PilotArgs pilot;
  auto* p = app.add_subcommand("pilot", "Train one modality's segmentation branch and record RFaM weights");
  p->add_option("--modality", pilot.modality, "ir or vi")->required();
  p->add_option("--config", pilot.config, "JSON config");
  p->add_option("--out", pilot.out, "Output directory")->required();
  p->add_option("--dataset", pilot.dataset, "Dataset root with train/{ir,vi,labels}");
  p->add_option("--seed", pilot.seed);
  p->add_option("--epochs", pilot.epochs);
  p->add_option("--batch-size", pilot.batch_size);
  p->add_option("--lr", pilot.lr);
  p->add_flag("--force", pilot.force, "Overwrite a non-empty output directory");

  SelectArgs select;
  auto* s = app.add_subcommand("select", "Pick significant features from a pilot weight trajectory");
  s->add_option("--trajectory", select.trajectory, "weights_<mod>.csv")->required();
  s->add_option("--modality", select.modality, "ir or vi (inferred from the file name if omitted)");
  s->add_option("--tau", select.tau, "Cumulative mass threshold")->capture_default_str();
  s->add_option("--k-min", select.k_min)->capture_default_str();
  s->add_option("--k-max", select.k_max)->capture_default_str();
  s->add_option("--out", select.out, "Selection JSON")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Joint training of both branches and the fusion branch");
  t->add_option("--config", train.config, "JSON config");
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_option("--dataset", train.dataset, "Dataset root with train/{ir,vi,labels}");
  t->add_option("--seed", train.seed);
  t->add_option("--epochs", train.epochs);
  t->add_option("--max-steps", train.max_steps);
  t->add_option("--batch-size", train.batch_size);
  t->add_option("--lr", train.lr);
  t->add_flag("--force", train.force, "Overwrite a non-empty output directory");

  FuseArgs fuse;
  auto* f = app.add_subcommand("fuse", "Fuse image pairs with a trained checkpoint");
  f->add_option("--checkpoint", fuse.checkpoint)->required();
  f->add_option("--input", fuse.input, "Directory with ir/ and vi/");
  f->add_option("--ir", fuse.ir, "Single infrared image");
  f->add_option("--vi", fuse.vi, "Single visible image");
  f->add_option("--out", fuse.out, "Output directory")->required();
  f->add_flag("--rgb", fuse.rgb, "Recombine with visible chroma");
  f->add_flag("--force", fuse.force, "Overwrite a non-empty output directory");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Fusion and segmentation metrics");
  e->add_option("--fused", eval.fused, "Directory of fused PNGs")->required();
  e->add_option("--source", eval.source, "Directory with ir/, vi/ (and labels/)")->required();
  e->add_option("--pred", eval.pred, "Directory of predicted label PNGs");
  e->add_option("--num-classes", eval.num_classes)->capture_default_str();
  e->add_option("--out", eval.out, "Output directory")->required();
  e->add_flag("--force", eval.force, "Overwrite a non-empty output directory");

  FreqArgs freq;
  auto* q = app.add_subcommand("freq", "Spectral profiles of SsF and Hfd feature maps");
  q->add_option("--checkpoint", freq.checkpoint)->required();
  q->add_option("--ir", freq.ir)->required();
  q->add_option("--vi", freq.vi)->required();
  q->add_option("--out", freq.out)->required();
  q->add_option("--grid", freq.grid, "common or native")->check(CLI::IsMember({"common", "native"}))->capture_default_str();
  q->add_option("--bins", freq.bins)->capture_default_str();
  q->add_option("--cutoff", freq.cutoff)->capture_default_str();
  q->add_flag("--force", freq.force, "Overwrite a non-empty output directory");

  SynthArgs synth;
  auto* y = app.add_subcommand("synth", "Write the synthetic two-class shapes dataset");
  y->add_option("--out", synth.out)->required();
  y->add_option("--train", synth.train)->capture_default_str();
  y->add_option("--test", synth.test)->capture_default_str();
  y->add_option("--size", synth.size)->capture_default_str();
  y->add_option("--seed", synth.seed)->capture_default_str();
  y->add_flag("--force", synth.force, "Overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (*p) return run_pilot_cmd(pilot);
    if (*s) return run_select_cmd(select);
    if (*t) return run_train_cmd(train);
    if (*f) return run_fuse_cmd(fuse);
    if (*e) return run_eval_cmd(eval);
    if (*q) return run_freq_cmd(freq);
    if (*y) return run_synth_cmd(synth);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 2;
}
