#include "dsf/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dsf::nn {

Var ParameterRegistry::create(const std::string& name, Tensor init) {
  if (find(name) != nullptr) throw std::logic_error("duplicate parameter name " + name);
  Var v(std::move(init), true);
  entries_.push_back({name, v});
  return v;
}

const ParameterRegistry::Entry* ParameterRegistry::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t ParameterRegistry::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.var.value().size());
  return n;
}

void ParameterRegistry::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

Tensor Initializer::normal(int c, int h, int w, Real stddev) {
  Tensor t(c, h, w);
  std::normal_distribution<Real> dist(0.0F, stddev);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = dist(engine_);
  return t;
}

Tensor Initializer::constant(int c, int h, int w, Real value) {
  Tensor t(c, h, w);
  t.data.setConstant(value);
  return t;
}

Conv2d::Conv2d(const Scope& scope, int in_channels, int out_channels, ops::ConvGeometry geometry)
    : geometry_(geometry) {
  const int k2 = geometry.kernel * geometry.kernel;
  // He initialization over the receptive field.
  const Real stddev = std::sqrt(Real(2) / static_cast<Real>(in_channels * k2));
  weight_ = scope.registry.create(scope.name("weight"), scope.init.normal(out_channels, in_channels, k2, stddev));
  bias_ = scope.registry.create(scope.name("bias"), scope.init.constant(out_channels, 1, 1, 0));
}

DepthwiseConv2d::DepthwiseConv2d(const Scope& scope, int channels, ops::ConvGeometry geometry)
    : geometry_(geometry) {
  const int k2 = geometry.kernel * geometry.kernel;
  const Real stddev = std::sqrt(Real(2) / static_cast<Real>(k2));
  weight_ = scope.registry.create(scope.name("weight"), scope.init.normal(channels, 1, k2, stddev));
  bias_ = scope.registry.create(scope.name("bias"), scope.init.constant(channels, 1, 1, 0));
}

Linear::Linear(const Scope& scope, int in_features, int out_features, Real init_std) {
  weight_ = scope.registry.create(scope.name("weight"), scope.init.normal(out_features, 1, in_features, init_std));
  bias_ = scope.registry.create(scope.name("bias"), scope.init.constant(out_features, 1, 1, 0));
}

LayerNorm::LayerNorm(const Scope& scope, int channels) {
  gamma_ = scope.registry.create(scope.name("gamma"), scope.init.constant(channels, 1, 1, 1));
  beta_ = scope.registry.create(scope.name("beta"), scope.init.constant(channels, 1, 1, 0));
}

GroupNorm::GroupNorm(const Scope& scope, int groups, int channels) : groups_(groups) {
  if (channels % groups != 0) throw std::invalid_argument("GroupNorm: channels not divisible by groups");
  gamma_ = scope.registry.create(scope.name("gamma"), scope.init.constant(channels, 1, 1, 1));
  beta_ = scope.registry.create(scope.name("beta"), scope.init.constant(channels, 1, 1, 0));
}

}  // namespace dsf::nn
