#pragma once

#include "dsf/data.hpp"
#include "dsf/losses.hpp"
#include "dsf/model.hpp"
#include "dsf/rfam.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace dsf {

struct PilotConfig {
  int epochs = 100;
  int batch_size = 20;
  double lr = 1e-4;
  /// Learning-rate multiplier for the modulation weight logits only.
  double weight_lr_scale = 1.0;
  double clip_norm = 5.0;
  double val_fraction = 0.1;
  int num_classes = 9;
  std::uint64_t seed = 0;
  losses::OhemOptions ohem;
  StreamConfig streams;
};

struct PilotEpoch {
  int epoch = 0;
  double mean_loss = 0;
  double val_miou = 0;
  Eigen::VectorXd weights;
};

using PilotObserver = std::function<void(const PilotEpoch&)>;

struct PilotResult {
  WeightTrajectory trajectory{Modality::ir};
  std::filesystem::path checkpoint;
  std::filesystem::path trajectory_csv;
  int best_epoch = 0;
  double best_miou = 0;
};

/// Trains encoder + RFaM of one modality with the OHEM loss and writes
/// `branch_<mod>.ckpt` (best validation mIoU) and `weights_<mod>.csv` to
/// `out_dir`. Zero epochs saves the initial branch.
PilotResult run_pilot(Modality modality, const std::vector<TrainingSample>& samples, const PilotConfig& config,
                      const std::filesystem::path& out_dir, const PilotObserver& observer = {});

/// Per-pixel argmax over the class planes.
LabelRaster argmax_labels(const nn::Tensor& logits);

/// Learning-rate scale hook for Adam: `scale` for every modulation weight
/// vector (RFaM and MRaF), 1 elsewhere.
std::function<double(const std::string&)> weight_lr_hook(double scale);

// ---------------------------------------------------------------------------
// Significant feature selection

struct SelectionRule {
  double tau = 0.6;
  int k_min = 1;
  int k_max = 3;

  void validate() const;
};

struct SignificantFeatureSelection {
  Modality modality = Modality::ir;
  SelectionRule rule;
  std::vector<FeatureIndex> entries;  // in selection order
  Eigen::VectorXd final_weights;
  std::string trajectory;  // source CSV path, informational

  [[nodiscard]] nlohmann::json to_json() const;
  /// Validates against the selection schema; throws std::invalid_argument.
  static SignificantFeatureSelection from_json(const nlohmann::json& j);

  void save(const std::filesystem::path& path) const;
  static SignificantFeatureSelection load(const std::filesystem::path& path);
};

/// Smallest prefix of the descending final weights reaching `tau`, clipped
/// to [k_min, k_max]; equal weights keep stacking order.
SignificantFeatureSelection select_significant(const WeightTrajectory& trajectory, const SelectionRule& rule = {});

/// Stacking indices of `weights` sorted by descending weight, ties by index.
std::vector<int> rank_weights(const Eigen::VectorXd& weights);

/// Infrared entries followed by visible entries, each in selection order.
std::vector<FeatureIndex> ssf_layout(const SignificantFeatureSelection& ir, const SignificantFeatureSelection& vi);

double shannon_entropy(const Eigen::VectorXd& weights);

}  // namespace dsf
