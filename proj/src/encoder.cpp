#include "dsf/encoder.hpp"

#include <stdexcept>

namespace dsf {

std::string to_string(Modality m) { return m == Modality::ir ? "ir" : "vi"; }
std::string to_string(Stream s) { return s == Stream::global ? "global" : "local"; }

Modality parse_modality(const std::string& text) {
  if (text == "ir") return Modality::ir;
  if (text == "vi") return Modality::vi;
  throw std::invalid_argument("unknown modality '" + text + "' (expected ir or vi)");
}

Stream parse_stream(const std::string& text) {
  if (text == "global") return Stream::global;
  if (text == "local") return Stream::local;
  throw std::invalid_argument("unknown stream '" + text + "' (expected global or local)");
}

std::string FeatureMap::tag() const {
  return to_string(modality) + "_" + to_string(stream) + std::to_string(scale);
}

RefinedMap refine(const FeatureMap& map) {
  return {ops::channel_max_mean(map.values), map.stream, map.scale, map.modality};
}

void check_stream_input(const nn::Var& x) {
  const auto& v = x.value();
  if (v.channels != 1) throw std::invalid_argument("stream input must have 1 channel, got " + v.shape_string());
  if (v.height <= 0 || v.width <= 0 || v.height % 16 != 0 || v.width % 16 != 0) {
    throw std::invalid_argument("stream input " + v.shape_string() +
                                " must have height and width divisible by 16; pad the image first");
  }
  if (!v.all_finite()) throw std::invalid_argument("stream input contains non-finite values");
}

namespace {
constexpr ops::ConvGeometry kConv3{3, 1, 1, ops::Padding::zeros};
constexpr ops::ConvGeometry kEmbed{3, 2, 1, ops::Padding::zeros};
}  // namespace

GlobalStream::GlobalStream(const nn::Scope& scope, const StreamConfig& config, Modality modality)
    : config_(config), modality_(modality) {
  int in = 1;
  for (int i = 0; i < kScales; ++i) {
    const int c = config.channels[static_cast<std::size_t>(i)];
    const int sr = config.reduction[static_cast<std::size_t>(i)];
    const auto bs = scope.sub("block" + std::to_string(i + 1));
    Block block;
    block.heads = config.heads[static_cast<std::size_t>(i)];
    if (c % block.heads != 0) throw std::invalid_argument("channel count not divisible by head count");
    block.embed = nn::Conv2d(bs.sub("embed"), in, c, kEmbed);
    block.embed_norm = nn::LayerNorm(bs.sub("embed_norm"), c);
    for (int d = 0; d < config.depth; ++d) {
      const auto ls = bs.sub("layer" + std::to_string(d));
      Layer layer;
      layer.norm1 = nn::LayerNorm(ls.sub("norm1"), c);
      layer.query = nn::Linear(ls.sub("query"), c, c);
      layer.key = nn::Linear(ls.sub("key"), c, c);
      layer.value = nn::Linear(ls.sub("value"), c, c);
      layer.proj = nn::Linear(ls.sub("proj"), c, c);
      layer.reduce = sr > 1;
      if (layer.reduce) {
        layer.reduction = nn::Conv2d(ls.sub("reduction"), c, c, {sr, sr, 0, ops::Padding::zeros});
        layer.reduction_norm = nn::LayerNorm(ls.sub("reduction_norm"), c);
      }
      layer.norm2 = nn::LayerNorm(ls.sub("norm2"), c);
      const int hidden = c * config.mlp_ratio;
      layer.fc1 = nn::Linear(ls.sub("fc1"), c, hidden);
      layer.mix = nn::DepthwiseConv2d(ls.sub("mix"), hidden, kConv3);
      layer.fc2 = nn::Linear(ls.sub("fc2"), hidden, c);
      block.layers.push_back(std::move(layer));
    }
    blocks_.push_back(std::move(block));
    out_norm_.emplace_back(bs.sub("out_norm"), c);
    in = c;
  }
}

nn::Var GlobalStream::layer_forward(const Layer& layer, int heads, const nn::Var& x) const {
  const nn::Var h = layer.norm1(x);
  const nn::Var q = layer.query(h);
  nn::Var kv_source = h;
  if (layer.reduce) kv_source = layer.reduction_norm(layer.reduction(h));
  const nn::Var attn = ops::attention(q, layer.key(kv_source), layer.value(kv_source), heads);
  const nn::Var x1 = ops::add(x, layer.proj(attn));
  const nn::Var m = layer.fc2(ops::gelu(layer.mix(layer.fc1(layer.norm2(x1)))));
  return ops::add(x1, m);
}

FeaturePyramid GlobalStream::forward(const nn::Var& x) const {
  check_stream_input(x);
  FeaturePyramid out;
  nn::Var current = x;
  for (int i = 0; i < kScales; ++i) {
    const auto& block = blocks_[static_cast<std::size_t>(i)];
    current = block.embed_norm(block.embed(current));
    for (const auto& layer : block.layers) current = layer_forward(layer, block.heads, current);
    current = out_norm_[static_cast<std::size_t>(i)](current);
    out.maps[static_cast<std::size_t>(i)] = {current, Stream::global, i + 1, modality_};
  }
  return out;
}

LocalStream::LocalStream(const nn::Scope& scope, const StreamConfig& config, Modality modality)
    : config_(config), modality_(modality) {
  int in = 1;
  for (int i = 0; i < kScales; ++i) {
    const int c = config.channels[static_cast<std::size_t>(i)];
    const auto bs = scope.sub("block" + std::to_string(i + 1));
    Block block;
    block.conv1 = nn::Conv2d(bs.sub("conv1"), in, c, kConv3);
    block.norm1 = nn::GroupNorm(bs.sub("norm1"), config.norm_groups, c);
    block.conv2 = nn::Conv2d(bs.sub("conv2"), c, c, kConv3);
    block.norm2 = nn::GroupNorm(bs.sub("norm2"), config.norm_groups, c);
    blocks_.push_back(std::move(block));
    in = c;
  }
}

FeaturePyramid LocalStream::forward(const nn::Var& x) const {
  check_stream_input(x);
  FeaturePyramid out;
  nn::Var current = x;
  for (int i = 0; i < kScales; ++i) {
    const auto& b = blocks_[static_cast<std::size_t>(i)];
    current = ops::relu(b.norm1(b.conv1(current)));
    current = ops::relu(b.norm2(b.conv2(current)));
    current = ops::max_pool2(current);
    out.maps[static_cast<std::size_t>(i)] = {current, Stream::local, i + 1, modality_};
  }
  return out;
}

ModalityEncoder::ModalityEncoder(const nn::Scope& scope, const StreamConfig& config, Modality modality)
    : global_(scope.sub("global"), config, modality), local_(scope.sub("local"), config, modality) {}

ModalityEncoder::Output ModalityEncoder::forward(const nn::Var& x) const {
  return {global_.forward(x), local_.forward(x)};
}

}  // namespace dsf
