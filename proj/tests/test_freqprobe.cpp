#include "dsf/freqprobe.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

using namespace dsf;

namespace {

/// Direct O(N^4) orthonormal DFT.
freq::ComplexMatrix naive_dft(const RasterD& x) {
  const auto h = x.rows();
  const auto w = x.cols();
  freq::ComplexMatrix out(h, w);
  for (Eigen::Index u = 0; u < h; ++u) {
    for (Eigen::Index v = 0; v < w; ++v) {
      std::complex<double> acc = 0;
      for (Eigen::Index y = 0; y < h; ++y) {
        for (Eigen::Index xx = 0; xx < w; ++xx) {
          const double phase = -2.0 * std::numbers::pi * (static_cast<double>(u * y) / h + static_cast<double>(v * xx) / w);
          acc += x(y, xx) * std::polar(1.0, phase);
        }
      }
      out(u, v) = acc / std::sqrt(static_cast<double>(h * w));
    }
  }
  return out;
}

Tensor<double> plane_tensor(const RasterD& r) { return Tensor<double>::from_plane(r); }

RasterD sinusoid(int h, int w, double cycles_y, double cycles_x) {
  RasterD r(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      r(y, x) = std::cos(2.0 * std::numbers::pi * (cycles_y * y / h + cycles_x * x / w));
    }
  }
  return r;
}

}  // namespace

TEST_SUITE("freqprobe") {
  TEST_CASE("fft agrees with the direct transform and preserves energy") {
    std::mt19937_64 rng(1);
    for (auto [h, w] : {std::pair{8, 8}, std::pair{6, 10}, std::pair{16, 12}}) {
      const RasterD x = testing::random_raster(rng, h, w, -1.0, 1.0);
      const auto f = freq::fft2(x);
      CHECK((f - naive_dft(x)).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(f.cwiseAbs2().sum() == doctest::Approx(x.square().sum()).epsilon(1e-6));
    }
  }

  TEST_CASE("radial frequency normalisation") {
    CHECK(freq::radial_frequency(0, 0, 16, 16) == 0.0);
    CHECK(freq::radial_frequency(8, 0, 16, 16) == doctest::Approx(1.0));
    CHECK(freq::radial_frequency(0, 8, 16, 32) == doctest::Approx(0.5));
    CHECK(freq::radial_frequency(8, 8, 16, 16) == doctest::Approx(std::sqrt(2.0)));
    CHECK(freq::radial_frequency(15, 0, 16, 16) == doctest::Approx(freq::radial_frequency(1, 0, 16, 16)));
  }

  TEST_CASE("constant map") {
    const auto t = plane_tensor(RasterD::Constant(16, 16, 0.7));
    const auto p = freq::spectral_profile(t, 8);
    CHECK(p.log_amplitude.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(freq::low_freq_ratio(t) == 1.0);
  }

  TEST_CASE("checkerboard puts its energy at the highest frequency") {
    RasterD r(16, 16);
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) r(y, x) = ((x + y) % 2 == 0) ? 1.0 : 0.0;
    }
    const auto t = plane_tensor(r);
    CHECK(freq::low_freq_ratio(t, 0.1) < 1e-12);
    const Eigen::VectorXd power = freq::radial_power(t, 8);
    CHECK(power(7) == doctest::Approx(power.sum()));
    const auto p = freq::spectral_profile(t, 8);
    Eigen::Index arg = 0;
    p.log_amplitude.maxCoeff(&arg);
    CHECK(arg == p.log_amplitude.size() - 1);
  }

  TEST_CASE("low sinusoid keeps its energy below the cutoff") {
    const auto t = plane_tensor(sinusoid(64, 64, 1, 1));
    CHECK(freq::low_freq_ratio(t, 0.1) == doctest::Approx(1.0));
    const auto hi = plane_tensor(sinusoid(64, 64, 16, 0));
    CHECK(freq::low_freq_ratio(hi, 0.1) < 1e-12);
  }

  TEST_CASE("white noise is roughly flat") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    RasterD r(64, 64);
    for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = n(rng);
    const auto p = freq::spectral_profile(plane_tensor(r), 8);
    const double mean = p.log_amplitude.mean();
    CHECK((p.log_amplitude.array() - mean).abs().maxCoeff() < 0.25 * mean);
  }

  TEST_CASE("radial power sums to the centred energy") {
    std::mt19937_64 rng(3);
    Tensor<double> t(3, 12, 20);
    for (int c = 0; c < 3; ++c) {
      const RasterD plane = testing::random_raster(rng, 12, 20);
      t.data.row(c) = Eigen::Map<const Eigen::RowVectorXd>(plane.data(), plane.size());
    }
    double energy = 0;
    for (int c = 0; c < 3; ++c) energy += (t.plane(c) - t.plane(c).mean()).square().sum();
    CHECK(freq::radial_power(t, 16).sum() == doctest::Approx(energy).epsilon(1e-9));
  }

  TEST_CASE("circular translation and scaling invariance") {
    std::mt19937_64 rng(4);
    const RasterD r = testing::random_raster(rng, 16, 16);
    RasterD shifted(16, 16);
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) shifted((y + 3) % 16, (x + 5) % 16) = r(y, x);
    }
    const auto a = freq::spectral_profile(plane_tensor(r), 8);
    const auto b = freq::spectral_profile(plane_tensor(shifted), 8);
    CHECK((a.log_amplitude - b.log_amplitude).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(freq::low_freq_ratio(plane_tensor(r)) == doctest::Approx(freq::low_freq_ratio(plane_tensor(shifted))));
    CHECK(freq::low_freq_ratio(plane_tensor(r)) ==
          doctest::Approx(freq::low_freq_ratio(plane_tensor(RasterD(r * 7.0 + 2.0)))));
  }

  TEST_CASE("ratio is monotone in the cutoff") {
    std::mt19937_64 rng(5);
    const auto t = plane_tensor(testing::random_raster(rng, 24, 24));
    double prev = 0.0;
    for (double c = 0.0; c <= 1.5; c += 0.05) {
      const double r = freq::low_freq_ratio(t, c);
      CHECK(r >= prev - 1e-12);
      CHECK(r <= 1.0 + 1e-12);
      prev = r;
    }
    CHECK(prev == doctest::Approx(1.0));
  }

  TEST_CASE("input guards") {
    CHECK_THROWS_AS(freq::low_freq_ratio(plane_tensor(RasterD::Zero(3, 8))), std::invalid_argument);
    RasterD bad = RasterD::Zero(8, 8);
    bad(1, 1) = std::nan("");
    CHECK_THROWS_AS(freq::spectral_profile(plane_tensor(bad)), std::invalid_argument);
  }

  TEST_CASE("probe maps of a joint model") {
    StreamConfig s;
    s.channels = {8, 16, 16, 16};
    s.heads = {1, 1, 2, 2};
    s.depth = 1;
    s.mlp_ratio = 2;
    const std::vector<FeatureIndex> layout{{Modality::ir, Stream::global, 4}, {Modality::vi, Stream::local, 1}};
    const JointModel model(2, layout, 1, s);
    std::mt19937_64 rng(6);
    const Raster ir = testing::random_raster(rng, 64, 64).cast<float>();
    const Raster vi = testing::random_raster(rng, 64, 64).cast<float>();
    const auto maps = freq::probe_maps(model, ir, vi);
    REQUIRE(maps.size() == 6);
    CHECK(maps[0].tag == "SsF_i_g4");
    CHECK(maps[1].tag == "SsF_v_l1");
    CHECK(maps[2].tag == "Hfd_ic");
    CHECK(maps[5].tag == "Hfd_vt");
    for (const auto& m : maps) {
      CHECK(m.map.height == 32);
      CHECK(m.map.width == 32);
      CHECK(m.ssf == (m.tag.rfind("SsF", 0) == 0));
    }
    const auto native = freq::probe_maps(model, ir, vi, freq::ProbeGrid::native);
    CHECK(native[0].map.height == 4);
    CHECK(native[1].map.height == 32);

    const auto dir = testing::temp_dir("freq_csv");
    freq::write_ratio_csv(dir / "r.csv", {{"a", 0.5}});
    std::ifstream in(dir / "r.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "tag,low_freq_ratio");
    CHECK(row == "a,0.5");
  }
}
