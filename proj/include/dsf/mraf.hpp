#pragma once

#include "dsf/encoder.hpp"

#include <array>
#include <vector>

namespace dsf {

inline constexpr int kHfdEntries = 4;

/// Significant semantic features plus the four shallow high-frequency maps.
struct FusionInputs {
  std::vector<FeatureMap> ssf;
  std::array<FeatureMap, kHfdEntries> hfd;
};

/// Block-1 maps in the fixed order (ir-local, vi-local, ir-global, vi-global).
std::array<FeatureMap, kHfdEntries> extract_hfd(const ModalityEncoder::Output& ir, const ModalityEncoder::Output& vi);

/// Expected identity of each Hfd slot.
std::array<FeatureIndex, kHfdEntries> hfd_indices();

/// Short Hfd tags: ic, vc, it, vt.
std::array<std::string, kHfdEntries> hfd_tags();

/// Gathers the SsF maps for `selected` (in order) from both modalities.
std::vector<FeatureMap> gather_ssf(const std::vector<FeatureIndex>& selected, const ModalityEncoder::Output& ir,
                                   const ModalityEncoder::Output& vi);

struct MrafConfig {
  int embed = 64;
  int head_hidden = 32;
};

/// Multi-level representation-adaptive fusion: per-entry 1x1 projection,
/// upsampling to the stride-2 grid, one joint softmax weight per entry,
/// weighted sum, and a shallow reconstruction head with sigmoid output.
class Mraf {
 public:
  Mraf(const nn::Scope& scope, const StreamConfig& streams, std::vector<FeatureIndex> ssf_layout,
       const MrafConfig& config = {});

  struct Output {
    nn::Var y;          // 1 x H x W in [0, 1]
    nn::Var pre_head;   // embed x H/2 x W/2
    nn::Var effective;  // 1 x 1 x (|ssf| + 4)
  };

  [[nodiscard]] Output forward(const FusionInputs& inputs) const;
  [[nodiscard]] Output fuse(const FusionInputs& inputs, const nn::Var& effective) const;

  [[nodiscard]] nn::Var effective_weights() const { return ops::softmax_vector(raw_); }
  [[nodiscard]] const nn::Var& raw_weights() const { return raw_; }
  [[nodiscard]] int entry_count() const { return static_cast<int>(ssf_layout_.size()) + kHfdEntries; }
  [[nodiscard]] const std::vector<FeatureIndex>& ssf_layout() const { return ssf_layout_; }

 private:
  std::vector<FeatureIndex> ssf_layout_;
  nn::Var raw_;
  std::vector<nn::Linear> projections_;
  nn::Conv2d head1_, head2_;
};

}  // namespace dsf
