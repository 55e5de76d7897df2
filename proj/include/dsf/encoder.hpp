#pragma once

#include "dsf/nn.hpp"

#include <array>
#include <string>
#include <vector>

namespace dsf {

enum class Modality { ir, vi };
enum class Stream { global, local };

std::string to_string(Modality m);
std::string to_string(Stream s);
Modality parse_modality(const std::string& text);
Stream parse_stream(const std::string& text);

inline constexpr int kScales = 4;

/// Architecture of one stream; both streams share the stride schedule
/// (2, 4, 8, 16) so refined maps line up scale by scale.
struct StreamConfig {
  std::array<int, kScales> channels{32, 64, 160, 256};
  std::array<int, kScales> heads{1, 2, 5, 8};
  std::array<int, kScales> reduction{8, 4, 2, 1};
  int depth = 2;
  int mlp_ratio = 4;
  int norm_groups = 8;
};

/// Identifies one stream output: (modality, stream, scale).
struct FeatureIndex {
  Modality modality = Modality::ir;
  Stream stream = Stream::global;
  int scale = 1;

  bool operator==(const FeatureIndex&) const = default;
};

struct FeatureMap {
  nn::Var values;  // C x H x W
  Stream stream = Stream::global;
  int scale = 1;  // 1..4, stride 2^scale
  Modality modality = Modality::ir;

  [[nodiscard]] std::string tag() const;
  [[nodiscard]] FeatureIndex index() const { return {modality, stream, scale}; }
};

/// Four maps i = 1..4 of one (modality, stream).
struct FeaturePyramid {
  std::array<FeatureMap, kScales> maps;

  [[nodiscard]] const FeatureMap& at_scale(int scale) const { return maps.at(static_cast<std::size_t>(scale - 1)); }
};

/// Channel-max plane and channel-mean plane of one feature map.
struct RefinedMap {
  nn::Var values;  // 2 x H x W
  Stream stream = Stream::global;
  int scale = 1;
  Modality modality = Modality::ir;
};

RefinedMap refine(const FeatureMap& map);

/// Rejects inputs the streams cannot process (wrong shape, non-finite).
void check_stream_input(const nn::Var& x);

/// Self-attention stream: overlapping patch embedding, efficient
/// (spatially reduced) attention and Mix-FFN per block.
class GlobalStream {
 public:
  GlobalStream(const nn::Scope& scope, const StreamConfig& config, Modality modality);
  [[nodiscard]] FeaturePyramid forward(const nn::Var& x) const;

  /// Final per-block norms; exposed for tests that zero them.
  [[nodiscard]] const std::vector<nn::LayerNorm>& output_norms() const { return out_norm_; }

 private:
  struct Layer {
    nn::LayerNorm norm1;
    nn::Linear query, key, value, proj;
    bool reduce = false;
    nn::Conv2d reduction;
    nn::LayerNorm reduction_norm;
    nn::LayerNorm norm2;
    nn::Linear fc1;
    nn::DepthwiseConv2d mix;
    nn::Linear fc2;
  };
  struct Block {
    nn::Conv2d embed;
    nn::LayerNorm embed_norm;
    std::vector<Layer> layers;
    int heads = 1;
  };

  [[nodiscard]] nn::Var layer_forward(const Layer& layer, int heads, const nn::Var& x) const;

  StreamConfig config_;
  Modality modality_;
  std::vector<Block> blocks_;
  std::vector<nn::LayerNorm> out_norm_;
};

/// Convolutional stream: (conv3x3, group norm, ReLU) x 2 then 2x max pooling
/// per block.
class LocalStream {
 public:
  LocalStream(const nn::Scope& scope, const StreamConfig& config, Modality modality);
  [[nodiscard]] FeaturePyramid forward(const nn::Var& x) const;

  [[nodiscard]] const nn::Conv2d& first_conv() const { return blocks_.front().conv1; }

 private:
  struct Block {
    nn::Conv2d conv1, conv2;
    nn::GroupNorm norm1, norm2;
  };

  StreamConfig config_;
  Modality modality_;
  std::vector<Block> blocks_;
};

/// Both streams of one modality.
class ModalityEncoder {
 public:
  ModalityEncoder(const nn::Scope& scope, const StreamConfig& config, Modality modality);

  struct Output {
    FeaturePyramid global;
    FeaturePyramid local;
  };
  [[nodiscard]] Output forward(const nn::Var& x) const;

  [[nodiscard]] const GlobalStream& global() const { return global_; }
  [[nodiscard]] const LocalStream& local() const { return local_; }

 private:
  GlobalStream global_;
  LocalStream local_;
};

}  // namespace dsf
