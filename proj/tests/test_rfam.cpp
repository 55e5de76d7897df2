#include "dsf/rfam.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace dsf;

namespace {

std::vector<RefinedMap> random_refined(std::mt19937_64& rng, int h, int w) {
  std::vector<RefinedMap> out;
  std::normal_distribution<float> n(0.0F, 1.0F);
  for (int idx = 0; idx < kRefinedEntries; ++idx) {
    const int s = stacking_scale(idx);
    nn::Tensor t(2, h >> s, w >> s);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = n(rng);
    out.push_back({nn::Var(t), stacking_stream(idx), s, Modality::ir});
  }
  return out;
}

nn::Var weights_var(const Eigen::VectorXd& w) {
  nn::Tensor t(1, 1, static_cast<int>(w.size()));
  t.data = w.cast<float>().transpose();
  return nn::Var(t);
}

struct Fixture {
  nn::ParameterRegistry reg;
  nn::Initializer init{3};
  Rfam rfam{{reg, init, "ir.rfam."}, {2}};
};

}  // namespace

TEST_SUITE("rfam") {
  TEST_CASE("normalize weights") {
    const auto u = normalize_weights(Eigen::VectorXd::Zero(8));
    CHECK((u.array() - 0.125).abs().maxCoeff() < 1e-15);
    const auto two = normalize_weights((Eigen::VectorXd(2) << std::log(2.0), 0.0).finished());
    CHECK(two(0) == doctest::Approx(2.0 / 3.0));
    CHECK(two(1) == doctest::Approx(1.0 / 3.0));
    Eigen::VectorXd raw = Eigen::VectorXd::LinSpaced(8, -2, 3);
    CHECK((normalize_weights(raw) - normalize_weights((raw.array() + 40.0).matrix())).cwiseAbs().maxCoeff() < 1e-15);
    raw(2) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(normalize_weights(raw), std::invalid_argument);
  }

  TEST_CASE("stacking order is global 1..4 then local 1..4") {
    CHECK(stacking_index(Stream::global, 1) == 0);
    CHECK(stacking_index(Stream::global, 4) == 3);
    CHECK(stacking_index(Stream::local, 1) == 4);
    CHECK(stacking_index(Stream::local, 4) == 7);
    for (int i = 0; i < 8; ++i) CHECK(stacking_index(stacking_stream(i), stacking_scale(i)) == i);
  }

  TEST_CASE("initial effective weights are uniform and logits have input size") {
    Fixture f;
    std::mt19937_64 rng(1);
    const auto out = f.rfam.forward(random_refined(rng, 32, 48));
    CHECK(out.logits.value().shape_string() == "2x32x48");
    CHECK(out.pre_head.value().shape_string() == "64x16x24");
    CHECK(weights_valid(to_vector(out.effective)));
    CHECK((to_vector(out.effective).array() - 0.125).abs().maxCoeff() < 1e-7);
  }

  TEST_CASE("pre-head sum is linear in the weights") {
    Fixture f;
    std::mt19937_64 rng(2);
    const auto refined = random_refined(rng, 32, 32);
    const Eigen::VectorXd w1 = normalize_weights(Eigen::VectorXd::Random(8));
    const Eigen::VectorXd w2 = normalize_weights(Eigen::VectorXd::Random(8));
    const double alpha = 0.3;
    const auto s1 = f.rfam.aggregate(refined, weights_var(w1)).pre_head.value().data;
    const auto s2 = f.rfam.aggregate(refined, weights_var(w2)).pre_head.value().data;
    const auto mix = f.rfam.aggregate(refined, weights_var(alpha * w1 + (1 - alpha) * w2)).pre_head.value().data;
    CHECK((mix - (alpha * s1 + (1 - alpha) * s2)).cwiseAbs().maxCoeff() < 1e-5F);
  }

  TEST_CASE("one-hot weights select a single entry") {
    Fixture f;
    std::mt19937_64 rng(3);
    auto refined = random_refined(rng, 16, 16);
    const auto k = 5;
    const auto full = f.rfam.aggregate(refined, weights_var(Eigen::VectorXd::Unit(8, k)));
    for (int i = 0; i < 8; ++i) {
      if (i != k) refined[static_cast<std::size_t>(i)].values.mutable_value().data.setRandom();
    }
    const auto again = f.rfam.aggregate(refined, weights_var(Eigen::VectorXd::Unit(8, k)));
    CHECK((full.logits.value().data - again.logits.value().data).cwiseAbs().maxCoeff() < 1e-6F);
  }

  TEST_CASE("zero features give spatially constant logits") {
    Fixture f;
    std::mt19937_64 rng(4);
    auto refined = random_refined(rng, 16, 16);
    for (auto& r : refined) r.values.mutable_value().data.setZero();
    const auto out = f.rfam.forward(refined);
    for (int c = 0; c < 2; ++c) {
      const auto& row = out.logits.value().data.row(c);
      CHECK((row.array() - row(0)).abs().maxCoeff() < 1e-6F);
    }
  }

  TEST_CASE("swapping weights between identical entries changes nothing") {
    Fixture f;
    std::mt19937_64 rng(5);
    auto refined = random_refined(rng, 16, 16);
    refined[4].values = refined[0].values;  // local 1 duplicates global 1's map
    // ... and its projection, so the two entries are fully identical.
    for (const char* part : {"weight", "bias"}) {
      const std::string from = std::string("ir.rfam.proj_g1.") + part;
      const std::string to = std::string("ir.rfam.proj_l1.") + part;
      REQUIRE(f.reg.find(from) != nullptr);
      REQUIRE(f.reg.find(to) != nullptr);
      nn::Var dst = f.reg.find(to)->var;
      dst.mutable_value().data = f.reg.find(from)->var.value().data;
    }
    Eigen::VectorXd a = Eigen::VectorXd::Zero(8), b = Eigen::VectorXd::Zero(8);
    a(0) = 0.3;
    a(4) = 0.7;
    b(0) = 0.7;
    b(4) = 0.3;
    const auto la = f.rfam.aggregate(refined, weights_var(a)).logits.value().data;
    const auto lb = f.rfam.aggregate(refined, weights_var(b)).logits.value().data;
    CHECK((la - lb).cwiseAbs().maxCoeff() < 1e-6F);
  }

  TEST_CASE("entry set errors") {
    Fixture f;
    std::mt19937_64 rng(6);
    auto refined = random_refined(rng, 16, 16);
    auto seven = refined;
    seven.pop_back();
    CHECK_THROWS_AS(f.rfam.forward(seven), std::invalid_argument);
    auto dup = refined;
    dup[1] = dup[0];
    CHECK_THROWS_AS(f.rfam.forward(dup), std::invalid_argument);
  }

  TEST_CASE("sum of effective weights has zero gradient") {
    Fixture f;
    nn::Var raw = f.rfam.raw_weights();
    raw.mutable_value().data.setRandom();
    const auto eff = f.rfam.effective_weights();
    backward(eff, Matrix<float>(Matrix<float>::Ones(1, 8)));
    CHECK(raw.grad().cwiseAbs().maxCoeff() < 1e-7F);
  }

  TEST_CASE("trajectory bookkeeping and csv") {
    WeightTrajectory t(Modality::vi);
    const Eigen::VectorXd u = Eigen::VectorXd::Constant(8, 0.125);
    t.record(0, u);
    CHECK(t.size() == 1);
    t.record(1, normalize_weights(Eigen::VectorXd::LinSpaced(8, 0, 1)));
    t.record(2, normalize_weights(Eigen::VectorXd::LinSpaced(8, 1, 0)));
    CHECK_THROWS_AS(t.record(2, u), std::invalid_argument);
    CHECK_THROWS_AS(t.record(3, Eigen::VectorXd::Constant(8, 0.2)), std::invalid_argument);

    const auto dir = testing::temp_dir("traj");
    t.write_csv(dir / "w.csv");
    std::ifstream in(dir / "w.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,w_g1,w_g2,w_g3,w_g4,w_l1,w_l2,w_l3,w_l4");
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 8);
    }
    CHECK(rows == 3);
    const auto back = WeightTrajectory::read_csv(dir / "w.csv", Modality::vi);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(back.entries()[i].effective == t.entries()[i].effective);
  }
}
