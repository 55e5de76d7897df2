#include "dsf/optim.hpp"

#include <cmath>

namespace dsf {

Adam::Adam(nn::ParameterRegistry& registry, AdamOptions options, std::function<double(const std::string&)> lr_scale)
    : options_(options) {
  for (auto& e : registry.entries()) {
    State s;
    s.param = e.var;
    s.scale = lr_scale ? lr_scale(e.name) : 1.0;
    const auto& d = e.var.value().data;
    s.m = Matrix<double>::Zero(d.rows(), d.cols());
    s.v = Matrix<double>::Zero(d.rows(), d.cols());
    states_.push_back(std::move(s));
  }
}

void Adam::step() {
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& s : states_) {
    if (!s.param.has_grad()) continue;
    const Matrix<double> g = s.param.grad().cast<double>();
    s.m = b1 * s.m + (1.0 - b1) * g;
    s.v = b2 * s.v + (1.0 - b2) * g.cwiseAbs2();
    const double lr = options_.lr * s.scale;
    const Matrix<double> update =
        ((s.m / correction1).array() / ((s.v / correction2).array().sqrt() + options_.eps)).matrix() * lr;
    s.param.mutable_value().data -= update.cast<float>();
  }
}

double clip_grad_norm(nn::ParameterRegistry& registry, double max_norm) {
  double sq = 0.0;
  for (const auto& e : registry.entries()) {
    if (e.var.has_grad()) sq += e.var.grad().cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) scale_gradients(registry, max_norm / norm);
  return norm;
}

void scale_gradients(nn::ParameterRegistry& registry, double factor) {
  for (auto& e : registry.entries()) {
    if (e.var.has_grad()) e.var.mutable_grad() *= static_cast<float>(factor);
  }
}

}  // namespace dsf
