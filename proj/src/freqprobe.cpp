#include "dsf/freqprobe.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace dsf::freq {

namespace {

template <typename Scalar>
void check_map(const Tensor<Scalar>& map) {
  if (map.channels < 1 || map.height < 4 || map.width < 4) {
    throw std::invalid_argument("spectral analysis needs at least 4x4 maps, got " + map.shape_string());
  }
  if (!map.all_finite()) throw std::invalid_argument("spectral analysis of a non-finite map");
}

template <typename Scalar>
RasterD centred_plane(const Tensor<Scalar>& map, int c) {
  RasterD p = map.plane(c).template cast<double>();
  return p - p.mean();
}

int bin_of(double r, int bins) { return std::min(static_cast<int>(std::floor(r * bins)), bins - 1); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

ComplexMatrix fft2(const RasterD& x) {
  Eigen::FFT<double> fft;
  const auto h = x.rows();
  const auto w = x.cols();
  ComplexMatrix out(h, w);
  Eigen::VectorXcd buffer;
  for (Eigen::Index r = 0; r < h; ++r) {
    const Eigen::VectorXd row = x.row(r).transpose();
    fft.fwd(buffer, row);
    out.row(r) = buffer.transpose();
  }
  for (Eigen::Index c = 0; c < w; ++c) {
    const Eigen::VectorXcd col = out.col(c);
    fft.fwd(buffer, col);
    out.col(c) = buffer;
  }
  return out / std::sqrt(static_cast<double>(h * w));
}

double radial_frequency(int u, int v, int h, int w) {
  // Signed frequency in cycles per sample, then scaled so 0.5 -> 1.
  auto signed_freq = [](int k, int n) { return (k <= n / 2 ? k : k - n) / static_cast<double>(n); };
  const double fy = 2.0 * std::abs(signed_freq(u, h));
  const double fx = 2.0 * std::abs(signed_freq(v, w));
  return std::sqrt(fx * fx + fy * fy);
}

template <typename Scalar>
SpectralProfile spectral_profile(const Tensor<Scalar>& map, int bins, const std::string& tag) {
  check_map(map);
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(bins);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(bins);
  for (int c = 0; c < map.channels; ++c) {
    const ComplexMatrix f = fft2(centred_plane(map, c));
    for (int u = 0; u < map.height; ++u) {
      for (int v = 0; v < map.width; ++v) {
        const int b = bin_of(radial_frequency(u, v, map.height, map.width), bins);
        sum(b) += std::log1p(std::abs(f(u, v)));
        count(b) += 1.0;
      }
    }
  }
  std::vector<double> freqs, amps;
  for (int b = 0; b < bins; ++b) {
    if (count(b) == 0.0) continue;
    freqs.push_back((b + 0.5) / bins);
    amps.push_back(sum(b) / count(b));
  }
  SpectralProfile p;
  p.tag = tag;
  p.frequencies = Eigen::Map<Eigen::VectorXd>(freqs.data(), static_cast<Eigen::Index>(freqs.size()));
  p.log_amplitude = Eigen::Map<Eigen::VectorXd>(amps.data(), static_cast<Eigen::Index>(amps.size()));
  return p;
}

template <typename Scalar>
Eigen::VectorXd radial_power(const Tensor<Scalar>& map, int bins) {
  check_map(map);
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  Eigen::VectorXd power = Eigen::VectorXd::Zero(bins);
  for (int c = 0; c < map.channels; ++c) {
    const ComplexMatrix f = fft2(centred_plane(map, c));
    for (int u = 0; u < map.height; ++u) {
      for (int v = 0; v < map.width; ++v) {
        power(bin_of(radial_frequency(u, v, map.height, map.width), bins)) += std::norm(f(u, v));
      }
    }
  }
  return power;
}

template <typename Scalar>
double low_freq_ratio(const Tensor<Scalar>& map, double cutoff) {
  check_map(map);
  double low = 0.0;
  double total = 0.0;
  for (int c = 0; c < map.channels; ++c) {
    const ComplexMatrix f = fft2(centred_plane(map, c));
    for (int u = 0; u < map.height; ++u) {
      for (int v = 0; v < map.width; ++v) {
        const double p = std::norm(f(u, v));
        total += p;
        if (radial_frequency(u, v, map.height, map.width) <= cutoff) low += p;
      }
    }
  }
  if (total <= 0.0) return 1.0;
  return low / total;
}

template SpectralProfile spectral_profile<float>(const Tensor<float>&, int, const std::string&);
template SpectralProfile spectral_profile<double>(const Tensor<double>&, int, const std::string&);
template Eigen::VectorXd radial_power<float>(const Tensor<float>&, int);
template Eigen::VectorXd radial_power<double>(const Tensor<double>&, int);
template double low_freq_ratio<float>(const Tensor<float>&, double);
template double low_freq_ratio<double>(const Tensor<double>&, double);

std::string ssf_tag(const FeatureIndex& index) {
  return std::string("SsF_") + (index.modality == Modality::ir ? "i" : "v") + "_" +
         (index.stream == Stream::global ? "g" : "l") + std::to_string(index.scale);
}

std::vector<ProbeMap> probe_maps(const JointModel& model, const Raster& infrared, const Raster& visible_luma,
                                 ProbeGrid grid) {
  const NoGradGuard no_grad;
  const auto out = model.forward(infrared, visible_luma);
  const int h = static_cast<int>(infrared.rows()) / 2;
  const int w = static_cast<int>(infrared.cols()) / 2;
  auto place = [&](const nn::Var& v) {
    return grid == ProbeGrid::common ? ops::resize_bilinear(v, h, w).value() : v.value();
  };
  std::vector<ProbeMap> maps;
  for (const auto& m : out.fusion_inputs.ssf) maps.push_back({ssf_tag(m.index()), place(m.values), true});
  const auto tags = hfd_tags();
  for (std::size_t k = 0; k < out.fusion_inputs.hfd.size(); ++k) {
    maps.push_back({"Hfd_" + tags[k], place(out.fusion_inputs.hfd[k].values), false});
  }
  return maps;
}

void write_profiles_csv(const std::filesystem::path& path, const std::vector<SpectralProfile>& profiles) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "tag,bin_center,log_amplitude\n";
  for (const auto& p : profiles) {
    for (Eigen::Index i = 0; i < p.frequencies.size(); ++i) {
      out << p.tag << ',' << fmt(p.frequencies(i)) << ',' << fmt(p.log_amplitude(i)) << '\n';
    }
  }
}

void write_ratio_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& ratios) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "tag,low_freq_ratio\n";
  for (const auto& [tag, r] : ratios) out << tag << ',' << fmt(r) << '\n';
}

}  // namespace dsf::freq
