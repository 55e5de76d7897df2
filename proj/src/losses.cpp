#include "dsf/losses.hpp"

#include "dsf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsf::losses {

namespace {

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};

template <typename Scalar>
struct SobelPair {
  RasterT<Scalar> gx, gy;
};

template <typename Scalar>
SobelPair<Scalar> sobel_responses(const RasterT<Scalar>& img) {
  const auto h = img.rows();
  const auto w = img.cols();
  if (h < 3 || w < 3) throw std::invalid_argument("sobel: image must be at least 3x3");
  SobelPair<Scalar> out{RasterT<Scalar>::Zero(h, w), RasterT<Scalar>::Zero(h, w)};
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      // Differences of opposite neighbours, so flat regions give exact zeros.
      auto at = [&](Eigen::Index dy, Eigen::Index dx) {
        return img(std::clamp<Eigen::Index>(y + dy, 0, h - 1), std::clamp<Eigen::Index>(x + dx, 0, w - 1));
      };
      Scalar sx = 0, sy = 0;
      for (int k = -1; k <= 1; ++k) {
        const auto weight = static_cast<Scalar>(kSobelX[k + 1][2]);
        sx += weight * (at(k, 1) - at(k, -1));
        sy += weight * (at(1, k) - at(-1, k));
      }
      out.gx(y, x) = sx;
      out.gy(y, x) = sy;
    }
  }
  return out;
}

template <typename Scalar>
Scalar sign(Scalar v) {
  return static_cast<Scalar>((v > 0) - (v < 0));
}

}  // namespace

template <typename Scalar>
Scalar intensity_loss(const RasterT<Scalar>& fused, const RasterT<Scalar>& infrared) {
  require_same_shape(fused, infrared, "intensity_loss");
  return (fused - infrared).square().mean();
}

template <typename Scalar>
RasterT<Scalar> intensity_loss_grad(const RasterT<Scalar>& fused, const RasterT<Scalar>& infrared) {
  require_same_shape(fused, infrared, "intensity_loss");
  return (fused - infrared) * (Scalar(2) / static_cast<Scalar>(fused.size()));
}

template <typename Scalar>
RasterT<Scalar> sobel_magnitude(const RasterT<Scalar>& img) {
  const auto r = sobel_responses(img);
  return r.gx.abs() + r.gy.abs();
}

template <typename Scalar>
Scalar texture_loss(const RasterT<Scalar>& fused, const RasterT<Scalar>& infrared, const RasterT<Scalar>& visible) {
  require_same_shape(fused, infrared, "texture_loss");
  require_same_shape(fused, visible, "texture_loss");
  const RasterT<Scalar> target = sobel_magnitude(infrared).max(sobel_magnitude(visible));
  return (sobel_magnitude(fused) - target).abs().mean();
}

template <typename Scalar>
RasterT<Scalar> texture_loss_grad(const RasterT<Scalar>& fused, const RasterT<Scalar>& infrared,
                                  const RasterT<Scalar>& visible) {
  require_same_shape(fused, infrared, "texture_loss");
  require_same_shape(fused, visible, "texture_loss");
  const auto h = fused.rows();
  const auto w = fused.cols();
  const auto f = sobel_responses(fused);
  const RasterT<Scalar> target = sobel_magnitude(infrared).max(sobel_magnitude(visible));
  const RasterT<Scalar> residual = f.gx.abs() + f.gy.abs() - target;
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(fused.size());
  RasterT<Scalar> grad = RasterT<Scalar>::Zero(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const Scalar s = sign(residual(y, x)) * inv_n;
      if (s == 0) continue;
      const Scalar ax = s * sign(f.gx(y, x));
      const Scalar ay = s * sign(f.gy(y, x));
      for (int dy = -1; dy <= 1; ++dy) {
        const auto yy = std::clamp<Eigen::Index>(y + dy, 0, h - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const auto xx = std::clamp<Eigen::Index>(x + dx, 0, w - 1);
          grad(yy, xx) += ax * kSobelX[dy + 1][dx + 1] + ay * kSobelX[dx + 1][dy + 1];
        }
      }
    }
  }
  return grad;
}

template <typename Scalar>
OhemResult<Scalar> ohem_ce(const Tensor<Scalar>& logits, const LabelRaster& labels, const OhemOptions& options) {
  if (logits.height != labels.rows() || logits.width != labels.cols()) {
    throw std::invalid_argument("ohem_ce: logits " + logits.shape_string() + " vs labels " +
                                std::to_string(labels.rows()) + "x" + std::to_string(labels.cols()));
  }
  const int classes = logits.channels;
  const Eigen::Index pixels = logits.pixels();
  OhemResult<Scalar> result;
  result.grad = Matrix<Scalar>::Zero(classes, pixels);

  std::vector<Eigen::Index> valid;
  std::vector<Scalar> pixel_loss;
  std::vector<Scalar> true_prob;
  valid.reserve(static_cast<std::size_t>(pixels));
  Matrix<Scalar> prob(classes, pixels);
  for (Eigen::Index j = 0; j < pixels; ++j) {
    const auto label = labels.data()[j];
    if (label == kIgnoreLabel) continue;
    if (label >= classes) {
      throw std::invalid_argument("ohem_ce: label " + std::to_string(label) + " outside " +
                                  std::to_string(classes) + " classes");
    }
    const auto col = logits.data.col(j);
    const Scalar m = col.maxCoeff();
    const Scalar log_z = m + std::log((col.array() - m).exp().sum());
    prob.col(j) = (col.array() - log_z).exp().matrix();
    valid.push_back(j);
    pixel_loss.push_back(log_z - col(label));
    true_prob.push_back(prob(label, j));
  }
  result.valid = valid.size();
  if (valid.empty()) {
    result.no_valid_pixels = true;
    return result;
  }

  const auto min_kept = static_cast<std::size_t>(
      std::ceil(options.min_kept_fraction * static_cast<double>(valid.size()) - 1e-9));
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (static_cast<double>(true_prob[i]) < options.thresh) kept.push_back(i);
  }
  if (kept.size() < std::max<std::size_t>(min_kept, 1)) {
    std::vector<std::size_t> order(valid.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t take = std::min(valid.size(), std::max<std::size_t>(min_kept, 1));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (pixel_loss[a] != pixel_loss[b]) return pixel_loss[a] > pixel_loss[b];
                        return a < b;
                      });
    kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
  }

  result.kept = kept.size();
  const Scalar inv_k = Scalar(1) / static_cast<Scalar>(kept.size());
  Scalar total = 0;
  for (const auto i : kept) {
    const Eigen::Index j = valid[i];
    total += pixel_loss[i];
    result.grad.col(j) = prob.col(j) * inv_k;
    result.grad(labels.data()[j], j) -= inv_k;
  }
  result.loss = total * inv_k;
  return result;
}

LossBreakdown combine(double l_int, double l_tex, double l_seg_ir, double l_seg_vi, double lambda) {
  LossBreakdown b;
  b.lambda = lambda;
  b.l_int = l_int;
  b.l_tex = l_tex;
  b.l_visual = lambda * l_int + l_tex;
  b.l_seg_ir = l_seg_ir;
  b.l_seg_vi = l_seg_vi;
  b.l_seg = l_seg_ir + l_seg_vi;
  b.l_total = b.l_visual + b.l_seg;
  return b;
}

bool consistent(const LossBreakdown& b, double tolerance) {
  return std::abs(b.l_visual - (b.lambda * b.l_int + b.l_tex)) <= tolerance &&
         std::abs(b.l_seg - (b.l_seg_ir + b.l_seg_vi)) <= tolerance &&
         std::abs(b.l_total - (b.l_visual + b.l_seg)) <= tolerance;
}

template <typename Scalar>
Var<Scalar> intensity_loss(const Var<Scalar>& fused, const RasterT<Scalar>& infrared) {
  const RasterT<Scalar> f = fused.value().plane(0);
  const RasterT<Scalar> g = intensity_loss_grad(f, infrared);
  return ops::scalar_function(fused, intensity_loss(f, infrared),
                              Matrix<Scalar>(Eigen::Map<const Matrix<Scalar>>(g.data(), 1, g.size())));
}

template <typename Scalar>
Var<Scalar> texture_loss(const Var<Scalar>& fused, const RasterT<Scalar>& infrared, const RasterT<Scalar>& visible) {
  const RasterT<Scalar> f = fused.value().plane(0);
  const RasterT<Scalar> g = texture_loss_grad(f, infrared, visible);
  return ops::scalar_function(fused, texture_loss(f, infrared, visible),
                              Matrix<Scalar>(Eigen::Map<const Matrix<Scalar>>(g.data(), 1, g.size())));
}

template <typename Scalar>
Var<Scalar> ohem_ce(const Var<Scalar>& logits, const LabelRaster& labels, const OhemOptions& options) {
  auto r = ohem_ce(logits.value(), labels, options);
  return ops::scalar_function(logits, r.loss, std::move(r.grad));
}

TotalLoss total_loss(const Var<float>& fused, const Raster& infrared, const Raster& visible_luma,
                     const Var<float>& logits_ir, const Var<float>& logits_vi, const LabelRaster& labels,
                     double lambda, const OhemOptions& ohem) {
  const auto l_int = intensity_loss(fused, infrared);
  const auto l_tex = texture_loss(fused, infrared, visible_luma);
  const auto l_ir = ohem_ce(logits_ir, labels, ohem);
  const auto l_vi = ohem_ce(logits_vi, labels, ohem);
  TotalLoss out;
  out.total = ops::add(ops::add(ops::scale(l_int, static_cast<float>(lambda)), l_tex), ops::add(l_ir, l_vi));
  out.breakdown = combine(l_int.value().data(0, 0), l_tex.value().data(0, 0), l_ir.value().data(0, 0),
                          l_vi.value().data(0, 0), lambda);
  return out;
}

#define DSF_INSTANTIATE_LOSSES(S)                                                                              \
  template S intensity_loss(const RasterT<S>&, const RasterT<S>&);                                             \
  template RasterT<S> intensity_loss_grad(const RasterT<S>&, const RasterT<S>&);                               \
  template RasterT<S> sobel_magnitude(const RasterT<S>&);                                                      \
  template S texture_loss(const RasterT<S>&, const RasterT<S>&, const RasterT<S>&);                            \
  template RasterT<S> texture_loss_grad(const RasterT<S>&, const RasterT<S>&, const RasterT<S>&);              \
  template OhemResult<S> ohem_ce(const Tensor<S>&, const LabelRaster&, const OhemOptions&);                   \
  template Var<S> intensity_loss(const Var<S>&, const RasterT<S>&);                                            \
  template Var<S> texture_loss(const Var<S>&, const RasterT<S>&, const RasterT<S>&);                           \
  template Var<S> ohem_ce(const Var<S>&, const LabelRaster&, const OhemOptions&);

DSF_INSTANTIATE_LOSSES(float)
DSF_INSTANTIATE_LOSSES(double)

#undef DSF_INSTANTIATE_LOSSES

}  // namespace dsf::losses
