#pragma once

#include "dsf/ops.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dsf::nn {

using Real = float;
using Var = dsf::Var<Real>;
using Tensor = dsf::Tensor<Real>;

/// Ordered, named collection of trainable leaves. Names are hierarchical
/// ("ir.global.block1.embed.weight") and unique.
class ParameterRegistry {
 public:
  struct Entry {
    std::string name;
    Var var;
  };

  Var create(const std::string& name, Tensor init);

  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
  [[nodiscard]] std::vector<Entry>& entries() { return entries_; }
  [[nodiscard]] const Entry* find(const std::string& name) const;
  [[nodiscard]] std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

/// Deterministic initializer stream.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : engine_(seed) {}

  Tensor normal(int c, int h, int w, Real stddev);
  Tensor constant(int c, int h, int w, Real value);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

struct Scope {
  ParameterRegistry& registry;
  Initializer& init;
  std::string prefix;

  [[nodiscard]] Scope sub(const std::string& name) const { return {registry, init, prefix + name + "."}; }
  [[nodiscard]] std::string name(const std::string& leaf) const { return prefix + leaf; }
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const Scope& scope, int in_channels, int out_channels, ops::ConvGeometry geometry);
  [[nodiscard]] Var operator()(const Var& x) const { return ops::conv2d(x, weight_, bias_, geometry_); }

  [[nodiscard]] const Var& weight() const { return weight_; }
  [[nodiscard]] const Var& bias() const { return bias_; }

 private:
  Var weight_, bias_;
  ops::ConvGeometry geometry_;
};

class DepthwiseConv2d {
 public:
  DepthwiseConv2d() = default;
  DepthwiseConv2d(const Scope& scope, int channels, ops::ConvGeometry geometry);
  [[nodiscard]] Var operator()(const Var& x) const { return ops::depthwise_conv2d(x, weight_, bias_, geometry_); }

 private:
  Var weight_, bias_;
  ops::ConvGeometry geometry_;
};

class Linear {
 public:
  Linear() = default;
  Linear(const Scope& scope, int in_features, int out_features, Real init_std = 0.02F);
  [[nodiscard]] Var operator()(const Var& x) const { return ops::linear(x, weight_, bias_); }

  [[nodiscard]] const Var& weight() const { return weight_; }
  [[nodiscard]] const Var& bias() const { return bias_; }

 private:
  Var weight_, bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const Scope& scope, int channels);
  [[nodiscard]] Var operator()(const Var& x) const { return ops::layer_norm(x, gamma_, beta_, Real(1e-6)); }

  [[nodiscard]] const Var& gamma() const { return gamma_; }
  [[nodiscard]] const Var& beta() const { return beta_; }

 private:
  Var gamma_, beta_;
};

class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(const Scope& scope, int groups, int channels);
  [[nodiscard]] Var operator()(const Var& x) const { return ops::group_norm(x, groups_, gamma_, beta_, Real(1e-5)); }

 private:
  int groups_ = 1;
  Var gamma_, beta_;
};

}  // namespace dsf::nn
