#pragma once

#include "dsf/checkpoint.hpp"
#include "dsf/mraf.hpp"
#include "dsf/rfam.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <vector>

namespace dsf {

/// One modality's segmentation branch: both streams plus RFaM.
class Branch {
 public:
  Branch(const nn::Scope& scope, const StreamConfig& streams, const RfamConfig& rfam, Modality modality);

  struct Output {
    ModalityEncoder::Output features;
    Rfam::Output segmentation;
  };
  [[nodiscard]] Output forward(const nn::Var& image) const;

  [[nodiscard]] Modality modality() const { return modality_; }
  [[nodiscard]] const ModalityEncoder& encoder() const { return encoder_; }
  [[nodiscard]] const Rfam& rfam() const { return rfam_; }

 private:
  Modality modality_;
  ModalityEncoder encoder_;
  Rfam rfam_;
};

std::vector<RefinedMap> refine_all(const ModalityEncoder::Output& features);

/// A standalone branch with its own parameters (pilot experiments).
class BranchModel {
 public:
  BranchModel(Modality modality, int num_classes, std::uint64_t seed, const StreamConfig& streams = {});

  [[nodiscard]] Branch::Output forward(const Raster& image) const;
  nn::ParameterRegistry& parameters() { return registry_; }
  [[nodiscard]] const nn::ParameterRegistry& parameters() const { return registry_; }
  [[nodiscard]] const Branch& branch() const { return *branch_; }
  [[nodiscard]] nlohmann::json meta() const;

 private:
  nn::ParameterRegistry registry_;
  int num_classes_;
  StreamConfig streams_;
  std::unique_ptr<Branch> branch_;
};

/// Branches I (ir) and III (vi) plus the fusion branch II (MRaF).
class JointModel {
 public:
  JointModel(int num_classes, std::vector<FeatureIndex> ssf_layout, std::uint64_t seed,
             const StreamConfig& streams = {});

  /// Rebuilds architecture and weights from a checkpoint saved by `save`.
  static std::unique_ptr<JointModel> load(const std::filesystem::path& checkpoint);
  void save(const std::filesystem::path& checkpoint) const;

  struct Output {
    Branch::Output ir;
    Branch::Output vi;
    FusionInputs fusion_inputs;
    Mraf::Output fusion;
  };
  /// `infrared` and `visible_luma` share one H x W divisible by 16.
  [[nodiscard]] Output forward(const Raster& infrared, const Raster& visible_luma) const;

  nn::ParameterRegistry& parameters() { return registry_; }
  [[nodiscard]] const nn::ParameterRegistry& parameters() const { return registry_; }
  [[nodiscard]] const Branch& branch(Modality m) const { return m == Modality::ir ? *ir_ : *vi_; }
  [[nodiscard]] const Mraf& mraf() const { return *mraf_; }
  [[nodiscard]] const std::vector<FeatureIndex>& ssf_layout() const { return ssf_layout_; }
  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] nlohmann::json meta() const;

  /// Copies a pilot branch checkpoint's parameters into the matching branch.
  void warm_start(const Checkpoint& pilot);

 private:
  nn::ParameterRegistry registry_;
  int num_classes_;
  StreamConfig streams_;
  std::vector<FeatureIndex> ssf_layout_;
  std::unique_ptr<Branch> ir_, vi_;
  std::unique_ptr<Mraf> mraf_;
};

nlohmann::json to_json(const StreamConfig& c);
StreamConfig stream_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FeatureIndex& idx);
FeatureIndex feature_index_from_json(const nlohmann::json& j);

nn::Var to_var(const Raster& image);

}  // namespace dsf
