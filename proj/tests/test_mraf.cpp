#include "dsf/mraf.hpp"
#include "dsf/rfam.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace dsf;

namespace {

const std::vector<FeatureIndex> kLayout{{Modality::ir, Stream::global, 3}, {Modality::vi, Stream::local, 2}};

FeatureMap random_map(std::mt19937_64& rng, const FeatureIndex& idx, int h, int w, float scale = 1.0F) {
  const StreamConfig cfg;
  nn::Tensor t(cfg.channels[static_cast<std::size_t>(idx.scale - 1)], h >> idx.scale, w >> idx.scale);
  std::normal_distribution<float> n(0.0F, 1.0F);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = scale * n(rng);
  return {nn::Var(t), idx.stream, idx.scale, idx.modality};
}

FusionInputs random_inputs(std::mt19937_64& rng, int h, int w, float scale = 1.0F) {
  FusionInputs in;
  for (const auto& idx : kLayout) in.ssf.push_back(random_map(rng, idx, h, w, scale));
  const auto slots = hfd_indices();
  for (std::size_t j = 0; j < slots.size(); ++j) in.hfd[j] = random_map(rng, slots[j], h, w, scale);
  return in;
}

nn::Var weights_var(const Eigen::VectorXd& w) {
  nn::Tensor t(1, 1, static_cast<int>(w.size()));
  t.data = w.cast<float>().transpose();
  return nn::Var(t);
}

struct Fixture {
  nn::ParameterRegistry reg;
  nn::Initializer init{9};
  Mraf mraf{{reg, init, "mraf."}, {}, kLayout};
};

}  // namespace

TEST_SUITE("mraf") {
  TEST_CASE("hfd extraction order and shapes") {
    nn::ParameterRegistry reg;
    nn::Initializer init(1);
    const ModalityEncoder ir({reg, init, "ir."}, {}, Modality::ir);
    const ModalityEncoder vi({reg, init, "vi."}, {}, Modality::vi);
    std::mt19937_64 rng(2);
    const nn::Var x(nn::Tensor::from_plane(testing::random_raster(rng, 32, 32).cast<float>()));
    const auto fi = ir.forward(x);
    const auto fv = vi.forward(x);
    const auto hfd = extract_hfd(fi, fv);
    const auto slots = hfd_indices();
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(hfd[j].index() == slots[j]);
      CHECK(hfd[j].values.value().shape_string() == "32x16x16");
    }
    const auto swapped = extract_hfd(fv, fi);
    CHECK(swapped[0].modality == Modality::vi);  // slot order follows the argument roles
    CHECK(hfd_tags() == std::array<std::string, 4>{"ic", "vc", "it", "vt"});

    // Identical inputs to identically initialised branches give identical Hfd.
    nn::ParameterRegistry r2;
    nn::Initializer i1(5), i2(5);
    const ModalityEncoder a({r2, i1, "ir."}, {}, Modality::ir);
    const ModalityEncoder b({r2, i2, "vi."}, {}, Modality::vi);
    const auto same = extract_hfd(a.forward(x), b.forward(x));
    CHECK(same[0].values.value().data == same[1].values.value().data);

    const auto ssf = gather_ssf(kLayout, fi, fv);
    REQUIRE(ssf.size() == 2);
    CHECK(ssf[0].index() == kLayout[0]);
    CHECK(ssf[1].values.value().shape_string() == "64x8x8");
  }

  TEST_CASE("output in range with input size") {
    Fixture f;
    std::mt19937_64 rng(3);
    for (float scale : {0.1F, 1.0F, 100.0F}) {
      const auto out = f.mraf.forward(random_inputs(rng, 32, 48, scale));
      CHECK(out.y.value().shape_string() == "1x32x48");
      CHECK((out.y.value().data.array() >= 0.0F).all());
      CHECK((out.y.value().data.array() <= 1.0F).all());
      CHECK(weights_valid(to_vector(out.effective)));
      CHECK(out.effective.value().size() == 6);
    }
  }

  TEST_CASE("one-hot weights isolate one projected entry") {
    Fixture f;
    std::mt19937_64 rng(4);
    auto in = random_inputs(rng, 32, 32);
    const auto k = 1;
    const auto a = f.mraf.fuse(in, weights_var(Eigen::VectorXd::Unit(6, k))).pre_head.value().data;
    in.ssf[0].values.mutable_value().data.setRandom();
    for (auto& h : in.hfd) h.values.mutable_value().data.setRandom();
    const auto b = f.mraf.fuse(in, weights_var(Eigen::VectorXd::Unit(6, k))).pre_head.value().data;
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6F);
  }

  TEST_CASE("pre-head linearity") {
    Fixture f;
    std::mt19937_64 rng(5);
    const auto in = random_inputs(rng, 32, 32);
    const Eigen::VectorXd w1 = normalize_weights(Eigen::VectorXd::Random(6));
    const Eigen::VectorXd w2 = normalize_weights(Eigen::VectorXd::Random(6));
    const double alpha = 0.65;
    const auto s1 = f.mraf.fuse(in, weights_var(w1)).pre_head.value().data;
    const auto s2 = f.mraf.fuse(in, weights_var(w2)).pre_head.value().data;
    const auto sm = f.mraf.fuse(in, weights_var(alpha * w1 + (1 - alpha) * w2)).pre_head.value().data;
    CHECK((sm - (alpha * s1 + (1 - alpha) * s2)).cwiseAbs().maxCoeff() < 1e-5F);
  }

  TEST_CASE("zero features give a constant image") {
    Fixture f;
    std::mt19937_64 rng(6);
    auto in = random_inputs(rng, 32, 32);
    for (auto& m : in.ssf) m.values.mutable_value().data.setZero();
    for (auto& m : in.hfd) m.values.mutable_value().data.setZero();
    const auto& y = f.mraf.forward(in).y.value().data;
    CHECK((y.array() - y(0, 0)).abs().maxCoeff() < 1e-6F);
  }

  TEST_CASE("shifting every raw logit leaves y unchanged") {
    Fixture f;
    std::mt19937_64 rng(7);
    const auto in = random_inputs(rng, 32, 32);
    nn::Var raw = f.mraf.raw_weights();
    raw.mutable_value().data << 0.2F, -0.4F, 1.0F, 0.0F, 0.3F, -1.2F;
    const auto a = f.mraf.forward(in).y.value().data;
    raw.mutable_value().data.array() += 3.0F;
    const auto b = f.mraf.forward(in).y.value().data;
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6F);
  }

  TEST_CASE("input validation") {
    Fixture f;
    std::mt19937_64 rng(8);
    auto in = random_inputs(rng, 32, 32);
    CHECK_THROWS_AS(f.mraf.fuse(in, weights_var(Eigen::VectorXd::Constant(5, 0.2))), std::invalid_argument);
    auto short_in = in;
    short_in.ssf.pop_back();
    CHECK_THROWS_AS(f.mraf.forward(short_in), std::invalid_argument);
    auto swapped = in;
    std::swap(swapped.hfd[0], swapped.hfd[1]);
    CHECK_THROWS_AS(f.mraf.forward(swapped), std::invalid_argument);
    in.hfd[2].values.mutable_value().data(0, 0) = std::nanf("");
    CHECK_THROWS_AS(f.mraf.forward(in), std::invalid_argument);
    nn::ParameterRegistry reg;
    nn::Initializer init(1);
    CHECK_THROWS_AS(Mraf({reg, init, ""}, {}, {}), std::invalid_argument);
  }
}
