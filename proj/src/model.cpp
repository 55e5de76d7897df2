#include "dsf/model.hpp"

#include <stdexcept>

namespace dsf {

nn::Var to_var(const Raster& image) { return nn::Var(nn::Tensor::from_plane(image)); }

std::vector<RefinedMap> refine_all(const ModalityEncoder::Output& features) {
  std::vector<RefinedMap> out;
  out.reserve(kRefinedEntries);
  for (const auto& m : features.global.maps) out.push_back(refine(m));
  for (const auto& m : features.local.maps) out.push_back(refine(m));
  return out;
}

Branch::Branch(const nn::Scope& scope, const StreamConfig& streams, const RfamConfig& rfam, Modality modality)
    : modality_(modality), encoder_(scope, streams, modality), rfam_(scope.sub("rfam"), rfam) {}

Branch::Output Branch::forward(const nn::Var& image) const {
  Output out;
  out.features = encoder_.forward(image);
  out.segmentation = rfam_.forward(refine_all(out.features));
  return out;
}

nlohmann::json to_json(const StreamConfig& c) {
  return {{"channels", c.channels}, {"heads", c.heads},       {"reduction", c.reduction},
          {"depth", c.depth},       {"mlp_ratio", c.mlp_ratio}, {"norm_groups", c.norm_groups}};
}

StreamConfig stream_config_from_json(const nlohmann::json& j) {
  StreamConfig c;
  c.channels = j.at("channels").get<std::array<int, kScales>>();
  c.heads = j.at("heads").get<std::array<int, kScales>>();
  c.reduction = j.at("reduction").get<std::array<int, kScales>>();
  c.depth = j.at("depth").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.norm_groups = j.at("norm_groups").get<int>();
  return c;
}

nlohmann::json to_json(const FeatureIndex& idx) {
  return {{"modality", to_string(idx.modality)}, {"stream", to_string(idx.stream)}, {"scale", idx.scale}};
}

FeatureIndex feature_index_from_json(const nlohmann::json& j) {
  return {parse_modality(j.at("modality").get<std::string>()), parse_stream(j.at("stream").get<std::string>()),
          j.at("scale").get<int>()};
}

BranchModel::BranchModel(Modality modality, int num_classes, std::uint64_t seed, const StreamConfig& streams)
    : num_classes_(num_classes), streams_(streams) {
  nn::Initializer init(seed);
  nn::Scope scope{registry_, init, to_string(modality) + "."};
  branch_ = std::make_unique<Branch>(scope, streams, RfamConfig{num_classes}, modality);
}

Branch::Output BranchModel::forward(const Raster& image) const { return branch_->forward(to_var(image)); }

nlohmann::json BranchModel::meta() const {
  return {{"kind", "branch"},
          {"modality", to_string(branch_->modality())},
          {"num_classes", num_classes_},
          {"streams", to_json(streams_)}};
}

JointModel::JointModel(int num_classes, std::vector<FeatureIndex> ssf_layout, std::uint64_t seed,
                       const StreamConfig& streams)
    : num_classes_(num_classes), streams_(streams), ssf_layout_(std::move(ssf_layout)) {
  nn::Initializer init(seed);
  const nn::Scope root{registry_, init, ""};
  ir_ = std::make_unique<Branch>(root.sub("ir"), streams, RfamConfig{num_classes}, Modality::ir);
  vi_ = std::make_unique<Branch>(root.sub("vi"), streams, RfamConfig{num_classes}, Modality::vi);
  mraf_ = std::make_unique<Mraf>(root.sub("mraf"), streams, ssf_layout_);
}

nlohmann::json JointModel::meta() const {
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& idx : ssf_layout_) layout.push_back(to_json(idx));
  return {{"kind", "joint"}, {"num_classes", num_classes_}, {"streams", to_json(streams_)}, {"ssf", layout}};
}

void JointModel::save(const std::filesystem::path& checkpoint) const {
  Checkpoint::capture(registry_, meta()).save(checkpoint);
}

std::unique_ptr<JointModel> JointModel::load(const std::filesystem::path& checkpoint) {
  const Checkpoint ckpt = Checkpoint::load(checkpoint);
  if (ckpt.meta.value("kind", "") != "joint") {
    throw std::runtime_error(checkpoint.string() + " is not a joint fusion checkpoint");
  }
  std::vector<FeatureIndex> layout;
  for (const auto& j : ckpt.meta.at("ssf")) layout.push_back(feature_index_from_json(j));
  auto model = std::make_unique<JointModel>(ckpt.meta.at("num_classes").get<int>(), layout, 0,
                                            stream_config_from_json(ckpt.meta.at("streams")));
  const std::string diff = manifest_diff(model->registry_, ckpt);
  if (!diff.empty()) {
    throw std::runtime_error(checkpoint.string() + " does not match its declared architecture:\n" + diff);
  }
  restore(model->registry_, ckpt);
  return model;
}

void JointModel::warm_start(const Checkpoint& pilot) {
  if (pilot.meta.value("kind", "") != "branch") throw std::runtime_error("warm start needs a pilot branch checkpoint");
  if (pilot.meta.at("num_classes").get<int>() != num_classes_) {
    throw std::runtime_error("pilot checkpoint was trained for " + pilot.meta.at("num_classes").dump() +
                             " classes, model has " + std::to_string(num_classes_));
  }
  restore(registry_, pilot, true);
}

JointModel::Output JointModel::forward(const Raster& infrared, const Raster& visible_luma) const {
  if (infrared.rows() != visible_luma.rows() || infrared.cols() != visible_luma.cols()) {
    throw std::invalid_argument("infrared and visible inputs differ in size");
  }
  Output out;
  out.ir = ir_->forward(to_var(infrared));
  out.vi = vi_->forward(to_var(visible_luma));
  out.fusion_inputs.ssf = gather_ssf(ssf_layout_, out.ir.features, out.vi.features);
  out.fusion_inputs.hfd = extract_hfd(out.ir.features, out.vi.features);
  out.fusion = mraf_->forward(out.fusion_inputs);
  return out;
}

}  // namespace dsf
