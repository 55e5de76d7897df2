#pragma once

#include "dsf/autograd.hpp"

#include <vector>

namespace dsf::ops {

enum class Padding { zeros, replicate };

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  Padding padding = Padding::zeros;
};

// Weight layout conventions:
//   conv2d           weight (Cout, Cin, k*k)  -> data Cout x (Cin*k*k)
//   depthwise_conv2d weight (C, 1, k*k)
//   linear           weight (Cout, 1, Cin)
//   biases / affine  (C, 1, 1)

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, ConvGeometry g);

template <typename Scalar>
Var<Scalar> depthwise_conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                             ConvGeometry g);

/// Per-pixel (per-token) affine map: out = W * x + b.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor);

/// sum_k weights[k] * inputs[k]; `weights` is a (1, 1, N) tensor.
template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<Var<Scalar>>& inputs, const Var<Scalar>& weights);

/// Softmax over all entries of a (1, 1, N) tensor.
template <typename Scalar>
Var<Scalar> softmax_vector(const Var<Scalar>& raw);

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x);

/// Exact (erf) GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x);

/// Normalizes every pixel/token over the channel axis.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps = 1e-6);

template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, int groups, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = 1e-5);

/// 2x2 max pooling with stride 2; spatial dims must be even.
template <typename Scalar>
Var<Scalar> max_pool2(const Var<Scalar>& x);

/// Bilinear resampling with half-pixel centers (align_corners = false).
template <typename Scalar>
Var<Scalar> resize_bilinear(const Var<Scalar>& x, int out_height, int out_width);

/// Two-plane output: channel-wise max, channel-wise mean.
template <typename Scalar>
Var<Scalar> channel_max_mean(const Var<Scalar>& x);

/// Scaled dot-product attention. q is C x N, k and v are C x M, C divisible
/// by `heads`. Output has q's shape.
template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, int heads);

/// Attaches an externally computed scalar function of x, given its value
/// and gradient d value / d x.
template <typename Scalar>
Var<Scalar> scalar_function(const Var<Scalar>& x, Scalar value, Matrix<Scalar> gradient);

}  // namespace dsf::ops
