#include "dsf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dsf::metrics {

namespace {

template <typename Scalar>
void require_same_shape(const RasterT<Scalar>& x, const RasterT<Scalar>& y, const char* what) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + std::to_string(x.rows()) + "x" +
                                std::to_string(x.cols()) + " vs " + std::to_string(y.rows()) + "x" +
                                std::to_string(y.cols()));
  }
}

using Histogram = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::VectorXd gaussian_kernel(int size, double sigma) {
  Eigen::VectorXd g(size);
  const double c = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) g(i) = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
  return g / g.sum();
}

// Separable filter keeping only positions where the window fits entirely.
RasterD filter_valid(const RasterD& m, const Eigen::VectorXd& g) {
  const auto k = g.size();
  const auto oh = m.rows() - k + 1;
  const auto ow = m.cols() - k + 1;
  RasterD rows = RasterD::Zero(m.rows(), ow);
  for (Eigen::Index u = 0; u < k; ++u) rows += g(u) * m.middleCols(u, ow);
  RasterD out = RasterD::Zero(oh, ow);
  for (Eigen::Index u = 0; u < k; ++u) out += g(u) * rows.middleRows(u, oh);
  return out;
}

std::string format_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

int quantize8(double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

template <typename Scalar>
double mutual_information(const RasterT<Scalar>& x, const RasterT<Scalar>& y) {
  require_same_shape(x, y, "mutual information");
  if (x.size() == 0) throw std::invalid_argument("mutual information of an empty image");
  Histogram joint = Histogram::Zero(256, 256);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    joint(quantize8(static_cast<double>(x.data()[i])), quantize8(static_cast<double>(y.data()[i]))) += 1.0;
  }
  joint /= static_cast<double>(x.size());
  const Eigen::VectorXd px = joint.rowwise().sum();
  const Eigen::RowVectorXd py = joint.colwise().sum();
  double total = 0.0;
  for (int a = 0; a < 256; ++a) {
    for (int b = 0; b < 256; ++b) {
      const double p = joint(a, b);
      if (p > 0.0) total += p * std::log2(p / (px(a) * py(b)));
    }
  }
  return std::max(total, 0.0);
}

template <typename Scalar>
double entropy(const RasterT<Scalar>& x) {
  Eigen::Matrix<double, 256, 1> hist = Eigen::Matrix<double, 256, 1>::Zero();
  for (Eigen::Index i = 0; i < x.size(); ++i) hist(quantize8(static_cast<double>(x.data()[i]))) += 1.0;
  hist /= static_cast<double>(x.size());
  double h = 0.0;
  for (int a = 0; a < 256; ++a) {
    if (hist(a) > 0.0) h -= hist(a) * std::log2(hist(a));
  }
  return h;
}

template <typename Scalar>
double mi(const RasterT<Scalar>& f, const RasterT<Scalar>& a, const RasterT<Scalar>& b) {
  return mutual_information(f, a) + mutual_information(f, b);
}

template <typename Scalar>
double ssim(const RasterT<Scalar>& x, const RasterT<Scalar>& y, const SsimOptions& options) {
  require_same_shape(x, y, "ssim");
  if (x.rows() < options.window || x.cols() < options.window) {
    throw std::invalid_argument("ssim: image smaller than the " + std::to_string(options.window) + "x" +
                                std::to_string(options.window) + " window");
  }
  const RasterD xd = x.template cast<double>();
  const RasterD yd = y.template cast<double>();
  const Eigen::VectorXd g = gaussian_kernel(options.window, options.sigma);
  const RasterD mx = filter_valid(xd, g);
  const RasterD my = filter_valid(yd, g);
  const RasterD sxx = filter_valid((xd * xd), g) - (mx * mx);
  const RasterD syy = filter_valid((yd * yd), g) - (my * my);
  const RasterD sxy = filter_valid((xd * yd), g) - (mx * my);
  const double c1 = (options.k1 * options.range) * (options.k1 * options.range);
  const double c2 = (options.k2 * options.range) * (options.k2 * options.range);
  const auto num = (2.0 * mx.array() * my.array() + c1) * (2.0 * sxy.array() + c2);
  const auto den = (mx.array() * mx.array() + my.array() * my.array() + c1) * (sxx.array() + syy.array() + c2);
  return (num / den).mean();
}

template <typename Scalar>
double ssim_sum(const RasterT<Scalar>& f, const RasterT<Scalar>& a, const RasterT<Scalar>& b,
                const SsimOptions& options) {
  return ssim(f, a, options) + ssim(f, b, options);
}

template <typename Scalar>
double psnr(const RasterT<Scalar>& f, const RasterT<Scalar>& a, const RasterT<Scalar>& b) {
  require_same_shape(f, a, "psnr");
  require_same_shape(f, b, "psnr");
  const RasterD fd = f.template cast<double>();
  const double mse_a = (fd - a.template cast<double>()).square().mean();
  const double mse_b = (fd - b.template cast<double>()).square().mean();
  const double mse = 0.5 * (mse_a + mse_b);
  if (mse <= 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(1.0 / mse);
}

template <typename Scalar>
double correlation(const RasterT<Scalar>& x, const RasterT<Scalar>& y) {
  require_same_shape(x, y, "correlation");
  const RasterD xc = x.template cast<double>() - static_cast<double>(x.template cast<double>().mean());
  const RasterD yc = y.template cast<double>() - static_cast<double>(y.template cast<double>().mean());
  const double sxx = xc.square().sum();
  const double syy = yc.square().sum();
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return (xc * yc).sum() / std::sqrt(sxx * syy);
}

template <typename Scalar>
double scd(const RasterT<Scalar>& f, const RasterT<Scalar>& a, const RasterT<Scalar>& b) {
  require_same_shape(f, a, "scd");
  require_same_shape(f, b, "scd");
  const RasterT<Scalar> fb = f - b;
  const RasterT<Scalar> fa = f - a;
  return correlation<Scalar>(fb, a) + correlation<Scalar>(fa, b);
}

#define DSF_METRICS_INSTANTIATE(S)                                                                   \
  template double mutual_information<S>(const RasterT<S>&, const RasterT<S>&);                      \
  template double entropy<S>(const RasterT<S>&);                                                     \
  template double mi<S>(const RasterT<S>&, const RasterT<S>&, const RasterT<S>&);                   \
  template double ssim<S>(const RasterT<S>&, const RasterT<S>&, const SsimOptions&);                \
  template double ssim_sum<S>(const RasterT<S>&, const RasterT<S>&, const RasterT<S>&, const SsimOptions&); \
  template double psnr<S>(const RasterT<S>&, const RasterT<S>&, const RasterT<S>&);                 \
  template double correlation<S>(const RasterT<S>&, const RasterT<S>&);                             \
  template double scd<S>(const RasterT<S>&, const RasterT<S>&, const RasterT<S>&);

DSF_METRICS_INSTANTIATE(float)
DSF_METRICS_INSTANTIATE(double)
#undef DSF_METRICS_INSTANTIATE

MetricsRecord evaluate_fusion(const std::string& id, const Raster& fused, const Raster& infrared,
                              const Raster& visible) {
  return {id, mi(fused, infrared, visible), ssim_sum(fused, infrared, visible), psnr(fused, infrared, visible),
          scd(fused, infrared, visible)};
}

MetricsRecord mean_record(const std::vector<MetricsRecord>& records) {
  MetricsRecord m{"mean"};
  if (records.empty()) return m;
  for (const auto& r : records) {
    m.mi += r.mi;
    m.ssim += r.ssim;
    m.psnr += r.psnr;
    m.scd += r.scd;
  }
  const auto n = static_cast<double>(records.size());
  m.mi /= n;
  m.ssim /= n;
  m.psnr /= n;
  m.scd /= n;
  return m;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id,mi,ssim,psnr,scd\n";
  auto row = [&](const MetricsRecord& r) {
    out << r.id << ',' << format_value(r.mi) << ',' << format_value(r.ssim) << ',' << format_value(r.psnr) << ','
        << format_value(r.scd) << '\n';
  };
  for (const auto& r : records) row(r);
  row(mean_record(records));
}

ConfusionMatrix::ConfusionMatrix(int num_classes) {
  if (num_classes < 1 || num_classes > 255) throw std::invalid_argument("num_classes must be in [1, 255]");
  counts_.setZero(num_classes, num_classes);
}

void ConfusionMatrix::add(const LabelRaster& pred, const LabelRaster& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw std::invalid_argument("prediction and ground truth differ in shape");
  }
  const int c = num_classes();
  for (Eigen::Index i = 0; i < gt.size(); ++i) {
    const int t = gt.data()[i];
    if (t == kIgnoreLabel) continue;
    const int p = pred.data()[i];
    if (t >= c || p >= c) throw std::invalid_argument("label value outside " + std::to_string(c) + " classes");
    ++counts_(t, p);
  }
}

SegScore seg_scores(const ConfusionMatrix& confusion) {
  if (confusion.total() == 0) throw std::invalid_argument("segmentation scores need at least one labelled pixel");
  const auto& m = confusion.counts();
  const int c = confusion.num_classes();
  SegScore s;
  s.iou = Eigen::VectorXd::Constant(c, std::numeric_limits<double>::quiet_NaN());
  s.defined.assign(static_cast<std::size_t>(c), false);
  double sum = 0.0;
  int defined = 0;
  for (int k = 0; k < c; ++k) {
    const long long tp = m(k, k);
    const long long fn = m.row(k).sum() - tp;
    const long long fp = m.col(k).sum() - tp;
    const long long denom = tp + fp + fn;
    if (denom == 0) continue;
    s.iou(k) = static_cast<double>(tp) / static_cast<double>(denom);
    s.defined[static_cast<std::size_t>(k)] = true;
    sum += s.iou(k);
    ++defined;
  }
  s.miou = sum / defined;
  return s;
}

SegScore seg_scores(const LabelRaster& pred, const LabelRaster& gt, int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt);
  return seg_scores(cm);
}

void write_seg_csv(const std::filesystem::path& path, const SegScore& score) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "class,iou\n";
  for (Eigen::Index k = 0; k < score.iou.size(); ++k) out << k << ',' << format_value(score.iou(k)) << '\n';
  out << "miou," << format_value(score.miou) << '\n';
}

}  // namespace dsf::metrics
