#pragma once

#include "dsf/data.hpp"
#include "dsf/losses.hpp"
#include "dsf/model.hpp"
#include "dsf/pilot.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace dsf {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 20;
  double lambda = 0.1;
  int patch_size = 256;
  int stride = 100;
  int epochs = 10;
  /// Stops after this many optimizer steps when > 0.
  int max_steps = 0;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;
  double weight_lr_scale = 1.0;
  double val_fraction = 0.1;
  int num_classes = 9;
  /// Number of validation patches written to samples/ at the end.
  int sample_images = 4;
  std::filesystem::path pilot_ir, pilot_vi;          // branch checkpoints
  std::filesystem::path selection_ir, selection_vi;  // selection JSON
  losses::OhemOptions ohem;
  StreamConfig streams;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainStep {
  int step = 0;
  int epoch = 0;
  losses::LossBreakdown loss;  // batch mean
  Eigen::VectorXd rfam_ir, rfam_vi, mraf;
};

using TrainObserver = std::function<void(const TrainStep&)>;

struct TrainResult {
  std::filesystem::path run_dir;
  int steps = 0;
  std::vector<losses::LossBreakdown> history;
  double best_val_loss = 0;
};

/// Joint training of both branches and MRaF from pilot artifacts. Writes
/// config.json, pilots/, checkpoints/{initial,best,last}.ckpt, losses.csv,
/// weights_ir.csv, weights_vi.csv and samples/ under `run_dir`.
TrainResult train_joint(const TrainConfig& config, const std::vector<TrainingSample>& samples,
                        const std::filesystem::path& run_dir, const TrainObserver& observer = {});

/// Batch-mean loss of one sample list without gradient tracking.
losses::LossBreakdown evaluate_loss(const JointModel& model, const std::vector<TrainingSample>& samples,
                                    const std::vector<std::size_t>& indices, double lambda,
                                    const losses::OhemOptions& ohem = {});

/// Fused luminance for arbitrary sizes: reflect-pad to a multiple of 16,
/// run the model, crop back.
Raster fuse_image(const JointModel& model, const Raster& infrared, const Raster& visible_luma);

struct FuseOptions {
  bool rgb = false;  // recombine with the visible chroma
};

struct FuseReport {
  std::vector<std::string> ids;
  std::vector<double> seconds;
  [[nodiscard]] double mean_seconds() const;
};

/// Writes <id>.png per pair and timing.csv (`id,seconds` plus a mean row).
FuseReport fuse_inference(const std::filesystem::path& checkpoint, const std::vector<PairRef>& pairs,
                          const std::filesystem::path& out_dir, const FuseOptions& options = {});

void write_loss_header(std::ostream& out);
void write_loss_row(std::ostream& out, int step, const losses::LossBreakdown& b);

}  // namespace dsf
