#pragma once

#include "dsf/autograd.hpp"
#include "dsf/tensor.hpp"

#include <cstddef>

namespace dsf::losses {

/// Mean squared residual (1/HW) * ||fused - infrared||_F^2.
template <typename Scalar>
Scalar intensity_loss(const RasterT<Scalar>& fused, const RasterT<Scalar>& infrared);

template <typename Scalar>
RasterT<Scalar> intensity_loss_grad(const RasterT<Scalar>& fused, const RasterT<Scalar>& infrared);

/// |Gx * img| + |Gy * img| with 3x3 Sobel kernels and replicate padding.
template <typename Scalar>
RasterT<Scalar> sobel_magnitude(const RasterT<Scalar>& img);

/// (1/HW) * || |grad F| - max(|grad ir|, |grad vi|) ||_1.
template <typename Scalar>
Scalar texture_loss(const RasterT<Scalar>& fused, const RasterT<Scalar>& infrared, const RasterT<Scalar>& visible);

/// Subgradient with sign(0) = 0.
template <typename Scalar>
RasterT<Scalar> texture_loss_grad(const RasterT<Scalar>& fused, const RasterT<Scalar>& infrared,
                                  const RasterT<Scalar>& visible);

struct OhemOptions {
  double thresh = 0.7;
  double min_kept_fraction = 1.0 / 16.0;
};

template <typename Scalar>
struct OhemResult {
  Scalar loss = 0;
  Matrix<Scalar> grad;  // classes x HW, d loss / d logits
  std::size_t valid = 0;
  std::size_t kept = 0;
  bool no_valid_pixels = false;
};

/// Cross-entropy averaged over hard pixels: those whose true-class
/// probability is below `thresh`, topped up to ceil(fraction * valid) by
/// highest loss. Ignore-labelled pixels never count.
template <typename Scalar>
OhemResult<Scalar> ohem_ce(const Tensor<Scalar>& logits, const LabelRaster& labels, const OhemOptions& options = {});

struct LossBreakdown {
  double l_int = 0;
  double l_tex = 0;
  double l_visual = 0;
  double l_seg_ir = 0;
  double l_seg_vi = 0;
  double l_seg = 0;
  double l_total = 0;
  double lambda = 0.1;
};

LossBreakdown combine(double l_int, double l_tex, double l_seg_ir, double l_seg_vi, double lambda = 0.1);

/// Identities l_visual = lambda*l_int + l_tex, l_seg = ir + vi, l_total = visual + seg.
bool consistent(const LossBreakdown& b, double tolerance = 1e-9);

// Graph-attached variants returning scalar nodes.
template <typename Scalar>
Var<Scalar> intensity_loss(const Var<Scalar>& fused, const RasterT<Scalar>& infrared);

template <typename Scalar>
Var<Scalar> texture_loss(const Var<Scalar>& fused, const RasterT<Scalar>& infrared, const RasterT<Scalar>& visible);

template <typename Scalar>
Var<Scalar> ohem_ce(const Var<Scalar>& logits, const LabelRaster& labels, const OhemOptions& options = {});

struct TotalLoss {
  Var<float> total;
  LossBreakdown breakdown;
};

/// L_total = lambda * L_int + L_tex + OHEM(ir logits) + OHEM(vi logits).
TotalLoss total_loss(const Var<float>& fused, const Raster& infrared, const Raster& visible_luma,
                     const Var<float>& logits_ir, const Var<float>& logits_vi, const LabelRaster& labels,
                     double lambda = 0.1, const OhemOptions& ohem = {});

}  // namespace dsf::losses
