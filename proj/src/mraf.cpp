#include "dsf/mraf.hpp"

#include <cmath>
#include <stdexcept>

namespace dsf {

std::array<FeatureIndex, kHfdEntries> hfd_indices() {
  return {{{Modality::ir, Stream::local, 1},
           {Modality::vi, Stream::local, 1},
           {Modality::ir, Stream::global, 1},
           {Modality::vi, Stream::global, 1}}};
}

std::array<std::string, kHfdEntries> hfd_tags() { return {"ic", "vc", "it", "vt"}; }

std::array<FeatureMap, kHfdEntries> extract_hfd(const ModalityEncoder::Output& ir, const ModalityEncoder::Output& vi) {
  return {ir.local.at_scale(1), vi.local.at_scale(1), ir.global.at_scale(1), vi.global.at_scale(1)};
}

std::vector<FeatureMap> gather_ssf(const std::vector<FeatureIndex>& selected, const ModalityEncoder::Output& ir,
                                   const ModalityEncoder::Output& vi) {
  std::vector<FeatureMap> out;
  out.reserve(selected.size());
  for (const auto& idx : selected) {
    const auto& enc = idx.modality == Modality::ir ? ir : vi;
    const auto& pyramid = idx.stream == Stream::global ? enc.global : enc.local;
    out.push_back(pyramid.at_scale(idx.scale));
  }
  return out;
}

namespace {
int channels_of(const StreamConfig& streams, const FeatureIndex& idx) {
  if (idx.scale < 1 || idx.scale > kScales) throw std::invalid_argument("feature scale out of range");
  return streams.channels[static_cast<std::size_t>(idx.scale - 1)];
}

std::string entry_name(const FeatureIndex& idx) {
  return to_string(idx.modality) + "_" + (idx.stream == Stream::global ? "g" : "l") + std::to_string(idx.scale);
}

constexpr ops::ConvGeometry kHeadConv{3, 1, 1, ops::Padding::replicate};
}  // namespace

Mraf::Mraf(const nn::Scope& scope, const StreamConfig& streams, std::vector<FeatureIndex> ssf_layout,
           const MrafConfig& config)
    : ssf_layout_(std::move(ssf_layout)) {
  if (ssf_layout_.empty()) throw std::invalid_argument("MRaF needs at least one significant feature");
  raw_ = scope.registry.create(scope.name("weights"), scope.init.constant(1, 1, entry_count(), 0));
  auto add_projection = [&](const std::string& name, int in) {
    projections_.emplace_back(scope.sub(name), in, config.embed, 1.0F / std::sqrt(static_cast<float>(in)));
  };
  for (std::size_t i = 0; i < ssf_layout_.size(); ++i) {
    add_projection("proj_ssf" + std::to_string(i) + "_" + entry_name(ssf_layout_[i]),
                   channels_of(streams, ssf_layout_[i]));
  }
  const auto tags = hfd_tags();
  for (std::size_t j = 0; j < tags.size(); ++j) {
    add_projection("proj_hfd_" + tags[j], channels_of(streams, hfd_indices()[j]));
  }
  head1_ = nn::Conv2d(scope.sub("head1"), config.embed, config.head_hidden, kHeadConv);
  head2_ = nn::Conv2d(scope.sub("head2"), config.head_hidden, 1, kHeadConv);
}

Mraf::Output Mraf::forward(const FusionInputs& inputs) const { return fuse(inputs, effective_weights()); }

Mraf::Output Mraf::fuse(const FusionInputs& inputs, const nn::Var& effective) const {
  if (inputs.ssf.size() != ssf_layout_.size()) {
    throw std::invalid_argument("MRaF built for " + std::to_string(ssf_layout_.size()) + " SsF entries, got " +
                                std::to_string(inputs.ssf.size()));
  }
  if (effective.value().size() != entry_count()) {
    throw std::invalid_argument("MRaF weight vector has length " + std::to_string(effective.value().size()) +
                                ", expected " + std::to_string(entry_count()));
  }
  for (std::size_t i = 0; i < inputs.ssf.size(); ++i) {
    if (!(inputs.ssf[i].index() == ssf_layout_[i])) {
      throw std::invalid_argument("SsF entry " + std::to_string(i) + " is " + inputs.ssf[i].tag() +
                                  ", which does not match the selection layout");
    }
  }
  const auto expected = hfd_indices();
  for (std::size_t j = 0; j < expected.size(); ++j) {
    if (!(inputs.hfd[j].index() == expected[j])) {
      throw std::invalid_argument("Hfd slot " + hfd_tags()[j] + " holds " + inputs.hfd[j].tag());
    }
  }

  const int grid_h = inputs.hfd[0].values.height();
  const int grid_w = inputs.hfd[0].values.width();
  std::vector<nn::Var> projected;
  projected.reserve(static_cast<std::size_t>(entry_count()));
  auto project = [&](const FeatureMap& m, std::size_t slot) {
    if (!m.values.value().all_finite()) throw std::invalid_argument("MRaF input " + m.tag() + " is not finite");
    projected.push_back(ops::resize_bilinear(projections_[slot](m.values), grid_h, grid_w));
  };
  for (std::size_t i = 0; i < inputs.ssf.size(); ++i) project(inputs.ssf[i], i);
  for (std::size_t j = 0; j < inputs.hfd.size(); ++j) project(inputs.hfd[j], inputs.ssf.size() + j);

  Output out;
  out.effective = effective;
  out.pre_head = ops::weighted_sum(projected, effective);
  const nn::Var h = ops::relu(head1_(out.pre_head));
  out.y = ops::sigmoid(ops::resize_bilinear(head2_(h), 2 * grid_h, 2 * grid_w));
  return out;
}

}  // namespace dsf
