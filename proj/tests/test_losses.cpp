#include "dsf/losses.hpp"
#include "dsf/ops.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace dsf;
using namespace dsf::losses;

TEST_SUITE("losses") {
  TEST_CASE("intensity loss examples") {
    const RasterD i = RasterD::Constant(3, 3, 0.25);
    CHECK(intensity_loss(i, i) == 0.0);
    CHECK(intensity_loss(RasterD(i + 0.5), i) == doctest::Approx(0.25));
    RasterD f(2, 2), z = RasterD::Zero(2, 2);
    f << 1, 0, 0, 1;
    CHECK(intensity_loss(f, z) == doctest::Approx(0.5));
    CHECK_THROWS_AS(intensity_loss(RasterD(2, 2), RasterD(2, 3)), std::invalid_argument);
  }

  TEST_CASE("sobel magnitude") {
    CHECK((sobel_magnitude(RasterD(RasterD::Constant(6, 7, 0.4))) == 0.0).all());
    RasterD step = RasterD::Zero(8, 8);
    step.rightCols(4).setConstant(1.0);
    const RasterD m = sobel_magnitude(step);
    CHECK(m(4, 3) == doctest::Approx(4.0));
    CHECK(m(4, 4) == doctest::Approx(4.0));
    std::mt19937_64 rng(1);
    const RasterD r = testing::random_raster(rng, 9, 12);
    CHECK((sobel_magnitude(RasterD(r.transpose())) - sobel_magnitude(r).transpose()).abs().maxCoeff() < 1e-12);
    CHECK((sobel_magnitude(r) - oracle::sobel(r)).abs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(sobel_magnitude(RasterD(2, 5)), std::invalid_argument);
  }

  TEST_CASE("texture loss examples and symmetry") {
    std::mt19937_64 rng(2);
    const RasterD c = RasterD::Constant(8, 8, 0.3);
    CHECK(texture_loss(c, c, c) == 0.0);
    const RasterD vi = testing::random_raster(rng, 8, 8);
    CHECK(texture_loss(vi, c, vi) == 0.0);
    const RasterD f = testing::random_raster(rng, 8, 8);
    const RasterD a = testing::random_raster(rng, 8, 8);
    CHECK(texture_loss(f, a, vi) == doctest::Approx(texture_loss(f, vi, a)).epsilon(1e-14));
    CHECK(intensity_loss(f, a) == doctest::Approx(intensity_loss(a, f)).epsilon(1e-14));
  }

  TEST_CASE("gradients match central differences") {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 10; ++k) {
      CHECK(gradcheck::intensity_instance(rng) < 1e-4);
      CHECK(gradcheck::texture_instance(rng) < 1e-4);
      CHECK(gradcheck::ohem_instance(rng) < 1e-4);
    }
  }

  TEST_CASE("graph-attached losses backpropagate the analytic gradients") {
    std::mt19937_64 rng(4);
    const RasterD f = testing::random_raster(rng, 8, 8);
    const RasterD ir = testing::random_raster(rng, 8, 8);
    const RasterD vi = testing::random_raster(rng, 8, 8);
    Var<double> x(Tensor<double>::from_plane(f), true);
    auto loss = ops::add(intensity_loss(x, ir), texture_loss(x, ir, vi));
    backward(loss);
    const RasterD expected = intensity_loss_grad(f, ir) + texture_loss_grad(f, ir, vi);
    const Eigen::Map<const RasterD> got(x.grad().data(), 8, 8);
    CHECK((got - expected).abs().maxCoeff() < 1e-12);
  }

  TEST_CASE("ohem examples") {
    Tensor<double> logits(2, 4, 4);
    LabelRaster ignore = LabelRaster::Constant(4, 4, kIgnoreLabel);
    const auto none = ohem_ce(logits, ignore);
    CHECK(none.loss == 0.0);
    CHECK(none.no_valid_pixels);

    // 1600 confident pixels: only the top-up of ceil(1600 / 16) = 100 is kept.
    Tensor<double> confident(2, 40, 40);
    const double gap = std::log(0.99 / 0.01);
    confident.data.row(0).setConstant(gap);
    const auto kept = ohem_ce(confident, LabelRaster::Zero(40, 40));
    CHECK(kept.kept == 100);
    CHECK(kept.loss == doctest::Approx(-std::log(0.99)).epsilon(1e-9));

    Tensor<double> one(3, 1, 1);
    one.data << 2.0, 0.5, -1.0;
    LabelRaster lab = LabelRaster::Constant(1, 1, 0);
    const double p = std::exp(2.0) / (std::exp(2.0) + std::exp(0.5) + std::exp(-1.0));
    CHECK(ohem_ce(one, lab, {0.01, 1.0 / 16}).loss == doctest::Approx(-std::log(p)).epsilon(1e-12));
  }

  TEST_CASE("raising thresh never keeps fewer pixels") {
    std::mt19937_64 rng(5);
    Tensor<double> logits(4, 12, 12);
    std::normal_distribution<double> n(0.0, 2.0);
    for (Eigen::Index i = 0; i < logits.data.size(); ++i) logits.data.data()[i] = n(rng);
    LabelRaster labels(12, 12);
    for (Eigen::Index i = 0; i < labels.size(); ++i) labels.data()[i] = static_cast<std::uint8_t>(rng() % 4);
    std::size_t last = 0;
    for (double t = 0.0; t <= 1.0; t += 0.05) {
      const auto r = ohem_ce(logits, labels, {t, 1.0 / 16});
      CHECK(r.kept >= last);
      last = r.kept;
    }
  }

  TEST_CASE("loss breakdown arithmetic") {
    const auto b = combine(2.0, 0.5, 0.4, 0.6, 0.1);
    CHECK(b.l_visual == doctest::Approx(0.7));
    CHECK(b.l_total == doctest::Approx(1.7));
    CHECK(consistent(b));
    CHECK(combine(2.0, 0.5, 0, 0, 0.0).l_visual == 0.5);
    CHECK(combine(0, 0, 0, 0).l_total == 0.0);
  }
}
