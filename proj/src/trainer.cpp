#include "dsf/trainer.hpp"

#include "dsf/optim.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace dsf {

namespace fs = std::filesystem;

namespace {

const std::set<std::string>& train_keys() {
  static const std::set<std::string> keys{
      "lr",         "batch_size",  "lambda",        "patch_size",     "stride",       "epochs",
      "max_steps",  "seed",        "clip_norm",     "weight_lr_scale", "val_fraction", "num_classes",
      "sample_images", "pilot_ir", "pilot_vi",      "selection_ir",   "selection_vi", "ohem_thresh",
      "ohem_min_kept_fraction", "streams"};
  return keys;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty() || !fs::is_regular_file(p)) {
    throw std::runtime_error("missing " + what + " '" + p.string() +
                             "'; run the pilot and select steps for both modalities first");
  }
}

struct LossSum {
  double l_int = 0, l_tex = 0, l_seg_ir = 0, l_seg_vi = 0;
  std::size_t n = 0;

  void add(const losses::LossBreakdown& b) {
    l_int += b.l_int;
    l_tex += b.l_tex;
    l_seg_ir += b.l_seg_ir;
    l_seg_vi += b.l_seg_vi;
    ++n;
  }
  [[nodiscard]] losses::LossBreakdown mean(double lambda) const {
    const double d = n == 0 ? 1.0 : static_cast<double>(n);
    return losses::combine(l_int / d, l_tex / d, l_seg_ir / d, l_seg_vi / d, lambda);
  }
};

void check_weights(const JointModel& model, TrainStep& info) {
  info.rfam_ir = to_vector(model.branch(Modality::ir).rfam().effective_weights());
  info.rfam_vi = to_vector(model.branch(Modality::vi).rfam().effective_weights());
  info.mraf = to_vector(model.mraf().effective_weights());
  if (!weights_valid(info.rfam_ir) || !weights_valid(info.rfam_vi) || !weights_valid(info.mraf)) {
    throw std::runtime_error("modulation weights left the simplex after step " + std::to_string(info.step));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (max_steps < 0) throw std::invalid_argument("max_steps must be >= 0");
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  if (patch_size < 16 || patch_size % 16 != 0) throw std::invalid_argument("patch_size must be a multiple of 16");
  if (stride < 1 || stride > patch_size) throw std::invalid_argument("stride must lie in [1, patch_size]");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw std::invalid_argument("val_fraction must lie in [0, 1)");
  if (num_classes < 1 || num_classes > 255) throw std::invalid_argument("num_classes must lie in [1, 255]");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"lambda", lambda},
          {"patch_size", patch_size},
          {"stride", stride},
          {"epochs", epochs},
          {"max_steps", max_steps},
          {"seed", seed},
          {"clip_norm", clip_norm},
          {"weight_lr_scale", weight_lr_scale},
          {"val_fraction", val_fraction},
          {"num_classes", num_classes},
          {"sample_images", sample_images},
          {"pilot_ir", pilot_ir.string()},
          {"pilot_vi", pilot_vi.string()},
          {"selection_ir", selection_ir.string()},
          {"selection_vi", selection_vi.string()},
          {"ohem_thresh", ohem.thresh},
          {"ohem_min_kept_fraction", ohem.min_kept_fraction},
          {"streams", dsf::to_json(streams)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("training config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!train_keys().contains(key)) throw std::invalid_argument("unknown training config key \"" + key + "\"");
  }
  TrainConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    auto get_path = [&](const char* key, fs::path& field) {
      if (j.contains(key)) field = j.at(key).get<std::string>();
    };
    get("lr", c.lr);
    get("batch_size", c.batch_size);
    get("lambda", c.lambda);
    get("patch_size", c.patch_size);
    get("stride", c.stride);
    get("epochs", c.epochs);
    get("max_steps", c.max_steps);
    get("seed", c.seed);
    get("clip_norm", c.clip_norm);
    get("weight_lr_scale", c.weight_lr_scale);
    get("val_fraction", c.val_fraction);
    get("num_classes", c.num_classes);
    get("sample_images", c.sample_images);
    get_path("pilot_ir", c.pilot_ir);
    get_path("pilot_vi", c.pilot_vi);
    get_path("selection_ir", c.selection_ir);
    get_path("selection_vi", c.selection_vi);
    get("ohem_thresh", c.ohem.thresh);
    get("ohem_min_kept_fraction", c.ohem.min_kept_fraction);
    if (j.contains("streams")) c.streams = stream_config_from_json(j.at("streams"));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

void write_loss_header(std::ostream& out) { out << "step,l_int,l_tex,l_visual,l_seg_ir,l_seg_vi,l_total\n"; }

void write_loss_row(std::ostream& out, int step, const losses::LossBreakdown& b) {
  out << step << ',' << fmt(b.l_int) << ',' << fmt(b.l_tex) << ',' << fmt(b.l_visual) << ',' << fmt(b.l_seg_ir)
      << ',' << fmt(b.l_seg_vi) << ',' << fmt(b.l_total) << '\n';
}

losses::LossBreakdown evaluate_loss(const JointModel& model, const std::vector<TrainingSample>& samples,
                                    const std::vector<std::size_t>& indices, double lambda,
                                    const losses::OhemOptions& ohem) {
  const NoGradGuard no_grad;
  LossSum sum;
  for (const auto i : indices) {
    const auto& s = samples[i];
    const auto out = model.forward(s.infrared, s.visible_luma);
    sum.add(losses::total_loss(out.fusion.y, s.infrared, s.visible_luma, out.ir.segmentation.logits,
                               out.vi.segmentation.logits, s.label, lambda, ohem)
                .breakdown);
  }
  return sum.mean(lambda);
}

TrainResult train_joint(const TrainConfig& config, const std::vector<TrainingSample>& samples, const fs::path& run_dir,
                        const TrainObserver& observer) {
  config.validate();
  require_file(config.selection_ir, "infrared selection");
  require_file(config.selection_vi, "visible selection");
  require_file(config.pilot_ir, "infrared pilot checkpoint");
  require_file(config.pilot_vi, "visible pilot checkpoint");
  if (samples.empty()) throw std::invalid_argument("joint training needs at least one labelled sample");

  const auto sel_ir = SignificantFeatureSelection::load(config.selection_ir);
  const auto sel_vi = SignificantFeatureSelection::load(config.selection_vi);
  JointModel model(config.num_classes, ssf_layout(sel_ir, sel_vi), config.seed, config.streams);
  model.warm_start(Checkpoint::load(config.pilot_ir));
  model.warm_start(Checkpoint::load(config.pilot_vi));

  fs::create_directories(run_dir / "pilots");
  fs::create_directories(run_dir / "checkpoints");
  fs::create_directories(run_dir / "samples");
  {
    std::ofstream cfg(run_dir / "config.json");
    cfg << config.to_json().dump(2) << '\n';
  }
  sel_ir.save(run_dir / "pilots" / "selection_ir.json");
  sel_vi.save(run_dir / "pilots" / "selection_vi.json");
  model.save(run_dir / "checkpoints" / "initial.ckpt");

  std::ofstream loss_csv(run_dir / "losses.csv");
  write_loss_header(loss_csv);

  TrainResult result;
  result.run_dir = run_dir;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  const HoldoutSplit split = holdout_split(samples.size(), config.val_fraction, config.seed);
  const auto& val = split.validation.empty() ? split.train : split.validation;
  WeightTrajectory traj_ir(Modality::ir), traj_vi(Modality::vi);
  Adam adam(model.parameters(), {config.lr}, weight_lr_hook(config.weight_lr_scale));
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  auto end_epoch = [&](int epoch) {
    traj_ir.record(epoch, to_vector(model.branch(Modality::ir).rfam().effective_weights()));
    traj_vi.record(epoch, to_vector(model.branch(Modality::vi).rfam().effective_weights()));
    const double v = evaluate_loss(model, samples, val, config.lambda, config.ohem).l_total;
    if (v < result.best_val_loss) {
      result.best_val_loss = v;
      model.save(run_dir / "checkpoints" / "best.ckpt");
    }
  };

  std::vector<std::size_t> order = split.train;
  bool stop = false;
  for (int epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size() && !stop; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto inv = static_cast<float>(1.0 / static_cast<double>(end - start));
      model.parameters().zero_grad();
      LossSum sum;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = samples[order[k]];
        const auto out = model.forward(s.infrared, s.visible_luma);
        const auto loss = losses::total_loss(out.fusion.y, s.infrared, s.visible_luma, out.ir.segmentation.logits,
                                             out.vi.segmentation.logits, s.label, config.lambda, config.ohem);
        sum.add(loss.breakdown);
        backward(ops::scale(loss.total, inv));
      }
      clip_grad_norm(model.parameters(), config.clip_norm);
      adam.step();

      TrainStep info;
      info.step = ++result.steps;
      info.epoch = epoch;
      info.loss = sum.mean(config.lambda);
      check_weights(model, info);
      write_loss_row(loss_csv, info.step, info.loss);
      result.history.push_back(info.loss);
      if (observer) observer(info);
      if (config.max_steps > 0 && result.steps >= config.max_steps) stop = true;
    }
    end_epoch(epoch);
  }
  loss_csv.close();

  if (result.steps > 0) {
    model.save(run_dir / "checkpoints" / "last.ckpt");
    traj_ir.write_csv(run_dir / "weights_ir.csv");
    traj_vi.write_csv(run_dir / "weights_vi.csv");
    const NoGradGuard no_grad;
    const auto count = std::min<std::size_t>(val.size(), static_cast<std::size_t>(std::max(config.sample_images, 0)));
    for (std::size_t k = 0; k < count; ++k) {
      const auto& s = samples[val[k]];
      write_png(run_dir / "samples" / (s.id + ".png"), to_image8(fuse_image(model, s.infrared, s.visible_luma)));
    }
  }
  return result;
}

Raster fuse_image(const JointModel& model, const Raster& infrared, const Raster& visible_luma) {
  const NoGradGuard no_grad;
  const Raster ir = pad_reflect(infrared, 16);
  const Raster vi = pad_reflect(visible_luma, 16);
  const auto out = model.forward(ir, vi);
  const auto& y = out.fusion.y.value();
  const Raster full = Eigen::Map<const Raster>(y.data.data(), y.height, y.width);
  return full.topLeftCorner(infrared.rows(), infrared.cols());
}

double FuseReport::mean_seconds() const {
  if (seconds.empty()) return 0.0;
  return std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(seconds.size());
}

FuseReport fuse_inference(const fs::path& checkpoint, const std::vector<PairRef>& pairs, const fs::path& out_dir,
                          const FuseOptions& options) {
  const auto model = JointModel::load(checkpoint);
  fs::create_directories(out_dir);
  FuseReport report;
  for (const auto& ref : pairs) {
    const ImagePair pair = load_pair(ref);
    pair.validate(256);
    const LumaChroma lc = to_luma_chroma(pair.visible);
    const auto t0 = std::chrono::steady_clock::now();
    const Raster y = fuse_image(*model, pair.infrared, lc.y);
    const auto t1 = std::chrono::steady_clock::now();
    const fs::path out = out_dir / (pair.id + ".png");
    if (options.rgb) {
      write_png(out, to_image8(recombine(y, lc.cb, lc.cr)));
    } else {
      write_png(out, to_image8(y));
    }
    report.ids.push_back(pair.id);
    report.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::ofstream timing(out_dir / "timing.csv");
  timing << "id,seconds\n";
  for (std::size_t i = 0; i < report.ids.size(); ++i) timing << report.ids[i] << ',' << fmt(report.seconds[i]) << '\n';
  timing << "mean," << fmt(report.mean_seconds()) << '\n';
  return report;
}

}  // namespace dsf
