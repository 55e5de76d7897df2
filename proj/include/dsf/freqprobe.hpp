#pragma once

#include "dsf/model.hpp"
#include "dsf/tensor.hpp"

#include <Eigen/Core>

#include <complex>
#include <filesystem>
#include <string>
#include <vector>

namespace dsf::freq {

using ComplexMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Orthonormally scaled 2-D DFT (sum of |X|^2 equals sum of |x|^2).
ComplexMatrix fft2(const RasterD& x);

/// Radial frequency of DFT bin (u, v) on an h x w grid, Nyquist = 1 along
/// each axis (diagonal corners reach sqrt(2)).
double radial_frequency(int u, int v, int h, int w);

struct SpectralProfile {
  std::string tag;
  Eigen::VectorXd frequencies;    // bin centres of non-empty bins, increasing
  Eigen::VectorXd log_amplitude;  // mean of log(1 + |X|) per bin, channel-averaged
};

/// Mean-subtracted per channel, radially binned into `bins` bins over
/// [0, 1]; frequencies above Nyquist fall into the last bin.
template <typename Scalar>
SpectralProfile spectral_profile(const Tensor<Scalar>& map, int bins = 32, const std::string& tag = "");

/// Total spectral power per radial bin, summed over channels (raw power
/// path; the sum over bins equals the mean-subtracted energy).
template <typename Scalar>
Eigen::VectorXd radial_power(const Tensor<Scalar>& map, int bins = 32);

/// Fraction of mean-subtracted spectral energy at radial frequency <=
/// cutoff; 1 when the map carries no energy.
template <typename Scalar>
double low_freq_ratio(const Tensor<Scalar>& map, double cutoff = 0.1);

enum class ProbeGrid {
  common,  // every map resampled to the stride-2 grid MRaF fuses on
  native,  // each map at its own resolution
};

struct ProbeMap {
  std::string tag;
  nn::Tensor map;
  bool ssf = false;
};

/// SsF maps (tags SsF_<i|v>_<g|l><scale>) in layout order, then Hfd maps
/// (Hfd_ic, Hfd_vc, Hfd_it, Hfd_vt).
std::vector<ProbeMap> probe_maps(const JointModel& model, const Raster& infrared, const Raster& visible_luma,
                                 ProbeGrid grid = ProbeGrid::common);

std::string ssf_tag(const FeatureIndex& index);

/// `tag,bin_center,log_amplitude`
void write_profiles_csv(const std::filesystem::path& path, const std::vector<SpectralProfile>& profiles);

/// `tag,low_freq_ratio`
void write_ratio_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& ratios);

}  // namespace dsf::freq
