#pragma once

#include "dsf/tensor.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace dsf::metrics {

/// 8-bit quantization used by the histogram metrics: round(clamp(v) * 255).
int quantize8(double v);

/// MI(X, Y) in bits from a 256 x 256 joint histogram of quantized values.
template <typename Scalar>
double mutual_information(const RasterT<Scalar>& x, const RasterT<Scalar>& y);

/// Histogram entropy in bits of the quantized image.
template <typename Scalar>
double entropy(const RasterT<Scalar>& x);

/// MI(F, A) + MI(F, B).
template <typename Scalar>
double mi(const RasterT<Scalar>& f, const RasterT<Scalar>& a, const RasterT<Scalar>& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// Mean SSIM over every fully contained Gaussian window position.
template <typename Scalar>
double ssim(const RasterT<Scalar>& x, const RasterT<Scalar>& y, const SsimOptions& options = {});

/// SSIM(F, A) + SSIM(F, B).
template <typename Scalar>
double ssim_sum(const RasterT<Scalar>& f, const RasterT<Scalar>& a, const RasterT<Scalar>& b,
                const SsimOptions& options = {});

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(1 / mean(MSE(F,A), MSE(F,B))); zero error gives kInfinitePsnr.
template <typename Scalar>
double psnr(const RasterT<Scalar>& f, const RasterT<Scalar>& a, const RasterT<Scalar>& b);

/// Pearson correlation; 0 when either argument has zero variance.
template <typename Scalar>
double correlation(const RasterT<Scalar>& x, const RasterT<Scalar>& y);

/// r(F - B, A) + r(F - A, B).
template <typename Scalar>
double scd(const RasterT<Scalar>& f, const RasterT<Scalar>& a, const RasterT<Scalar>& b);

struct MetricsRecord {
  std::string id;
  double mi = 0;
  double ssim = 0;
  double psnr = 0;
  double scd = 0;
};

MetricsRecord evaluate_fusion(const std::string& id, const Raster& fused, const Raster& infrared,
                              const Raster& visible);

/// Column-wise arithmetic mean with id "mean".
MetricsRecord mean_record(const std::vector<MetricsRecord>& records);

/// `id,mi,ssim,psnr,scd` rows followed by the mean row.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);

// ---------------------------------------------------------------------------
// Segmentation

/// Rows: ground truth class, columns: predicted class. Ignore pixels skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(const LabelRaster& pred, const LabelRaster& gt);
  [[nodiscard]] int num_classes() const { return static_cast<int>(counts_.rows()); }
  [[nodiscard]] long long total() const { return counts_.sum(); }
  [[nodiscard]] const Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>& counts() const { return counts_; }

 private:
  Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic> counts_;
};

struct SegScore {
  Eigen::VectorXd iou;        // NaN for classes absent from prediction and ground truth
  std::vector<bool> defined;  // false for those classes
  double miou = 0;
};

SegScore seg_scores(const ConfusionMatrix& confusion);
SegScore seg_scores(const LabelRaster& pred, const LabelRaster& gt, int num_classes);

/// `class,iou` rows followed by a `miou` row.
void write_seg_csv(const std::filesystem::path& path, const SegScore& score);

}  // namespace dsf::metrics
