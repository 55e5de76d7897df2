#pragma once

#include "dsf/nn.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dsf {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over every registry entry. `lr_scale` lets selected parameters
/// (by name) run at a multiple of the base rate.
class Adam {
 public:
  Adam(nn::ParameterRegistry& registry, AdamOptions options,
       std::function<double(const std::string&)> lr_scale = nullptr);

  /// Applies one update from the accumulated gradients; entries without a
  /// gradient are left untouched.
  void step();
  [[nodiscard]] long steps() const { return t_; }
  [[nodiscard]] const AdamOptions& options() const { return options_; }

 private:
  struct State {
    nn::Var param;
    double scale = 1.0;
    Matrix<double> m, v;
  };
  AdamOptions options_;
  std::vector<State> states_;
  long t_ = 0;
};

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(nn::ParameterRegistry& registry, double max_norm);

/// Multiplies every accumulated gradient by `factor`.
void scale_gradients(nn::ParameterRegistry& registry, double factor);

}  // namespace dsf
