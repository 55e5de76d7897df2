#include "dsf/ops.hpp"

#include "support.hpp"

#include <doctest.h>

#include <functional>

using namespace dsf;
using V = Var<double>;
using T = Tensor<double>;

namespace {

T random_tensor(std::mt19937_64& rng, int c, int h, int w, double scale = 1.0) {
  T t(c, h, w);
  std::normal_distribution<double> n(0.0, scale);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = n(rng);
  return t;
}

/// Compares backprop against central differences of <seed, f(inputs)> for
/// every entry of every input. Returns the worst relative error.
double check_op(const std::function<V(const std::vector<V>&)>& f, std::vector<T> inputs, std::mt19937_64& rng) {
  std::vector<V> vars;
  for (auto& t : inputs) vars.emplace_back(t, true);
  const V out = f(vars);
  const T seed = random_tensor(rng, out.channels(), out.height(), out.width());
  backward(out, seed.data);

  auto objective = [&] {
    const NoGradGuard guard;
    std::vector<V> plain;
    for (auto& t : inputs) plain.emplace_back(t);
    return (f(plain).value().data.array() * seed.data.array()).sum();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto n = inputs[k].data.size();
    Eigen::ArrayXd analytic(n), numeric(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double& x = inputs[k].data.data()[i];
      const double keep = x;
      x = keep + 1e-5;
      const double up = objective();
      x = keep - 1e-5;
      const double down = objective();
      x = keep;
      numeric(i) = (up - down) / 2e-5;
      analytic(i) = vars[k].has_grad() ? vars[k].grad().data()[i] : 0.0;
    }
    const double scale = std::max({analytic.matrix().norm(), numeric.matrix().norm(), 1e-12});
    worst = std::max(worst, (analytic - numeric).matrix().norm() / scale);
  }
  return worst;
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("convolutions") {
    std::mt19937_64 rng(1);
    for (auto pad : {ops::Padding::zeros, ops::Padding::replicate}) {
      for (int stride : {1, 2}) {
        const ops::ConvGeometry g{3, stride, 1, pad};
        CHECK(check_op([&](const std::vector<V>& v) { return ops::conv2d(v[0], v[1], v[2], g); },
                       {random_tensor(rng, 3, 6, 6), random_tensor(rng, 4, 3, 9), random_tensor(rng, 4, 1, 1)}, rng) < 1e-6);
        CHECK(check_op([&](const std::vector<V>& v) { return ops::depthwise_conv2d(v[0], v[1], v[2], g); },
                       {random_tensor(rng, 3, 6, 6), random_tensor(rng, 3, 1, 9), random_tensor(rng, 3, 1, 1)}, rng) < 1e-6);
      }
    }
  }

  TEST_CASE("pointwise and normalization ops") {
    std::mt19937_64 rng(2);
    CHECK(check_op([](const std::vector<V>& v) { return ops::linear(v[0], v[1], v[2]); },
                   {random_tensor(rng, 3, 2, 3), random_tensor(rng, 5, 1, 3), random_tensor(rng, 5, 1, 1)}, rng) < 1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::gelu(v[0]); }, {random_tensor(rng, 2, 3, 3)}, rng) < 1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::sigmoid(v[0]); }, {random_tensor(rng, 2, 3, 3)}, rng) < 1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::relu(v[0]); }, {random_tensor(rng, 2, 3, 3)}, rng) < 1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::add(v[0], ops::scale(v[1], 0.3)); },
                   {random_tensor(rng, 2, 3, 3), random_tensor(rng, 2, 3, 3)}, rng) < 1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::layer_norm(v[0], v[1], v[2]); },
                   {random_tensor(rng, 6, 2, 3), random_tensor(rng, 6, 1, 1), random_tensor(rng, 6, 1, 1)}, rng) < 1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::group_norm(v[0], 2, v[1], v[2]); },
                   {random_tensor(rng, 4, 3, 3), random_tensor(rng, 4, 1, 1), random_tensor(rng, 4, 1, 1)}, rng) < 1e-6);
  }

  TEST_CASE("spatial ops") {
    std::mt19937_64 rng(3);
    CHECK(check_op([](const std::vector<V>& v) { return ops::max_pool2(v[0]); }, {random_tensor(rng, 2, 4, 6)}, rng) < 1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::resize_bilinear(v[0], 8, 10); }, {random_tensor(rng, 2, 3, 4)}, rng) <
          1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::resize_bilinear(v[0], 3, 2); }, {random_tensor(rng, 2, 6, 5)}, rng) <
          1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::channel_max_mean(v[0]); }, {random_tensor(rng, 5, 3, 3)}, rng) <
          1e-6);
  }

  TEST_CASE("attention and weighting") {
    std::mt19937_64 rng(4);
    CHECK(check_op([](const std::vector<V>& v) { return ops::attention(v[0], v[1], v[2], 2); },
                   {random_tensor(rng, 4, 2, 3), random_tensor(rng, 4, 1, 4), random_tensor(rng, 4, 1, 4)}, rng) < 1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::softmax_vector(v[0]); }, {random_tensor(rng, 1, 1, 5)}, rng) < 1e-6);
    CHECK(check_op([](const std::vector<V>& v) { return ops::weighted_sum({v[0], v[1]}, ops::softmax_vector(v[2])); },
                   {random_tensor(rng, 2, 3, 3), random_tensor(rng, 2, 3, 3), random_tensor(rng, 1, 1, 2)}, rng) < 1e-6);
  }

  TEST_CASE("gradients accumulate across backward calls and interior grads are cleared") {
    V x(T(1, 1, 2, Matrix<double>::Constant(1, 2, 3.0)), true);
    const V mid = ops::scale(x, 2.0);
    const V y = ops::scale(mid, 1.0);
    backward(y, Matrix<double>(Matrix<double>::Ones(1, 2)));
    backward(ops::scale(x, 5.0), Matrix<double>(Matrix<double>::Ones(1, 2)));
    CHECK(x.grad()(0, 0) == 7.0);
    CHECK_FALSE(mid.has_grad());
  }

  TEST_CASE("no-grad mode records nothing") {
    V x(T(1, 1, 1), true);
    const NoGradGuard guard;
    const V y = ops::scale(x, 2.0);
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("softmax is shift invariant and sums to one") {
    std::mt19937_64 rng(5);
    T raw = random_tensor(rng, 1, 1, 8);
    const auto a = ops::softmax_vector(V(raw)).value().data;
    raw.data.array() += 17.0;
    const auto b = ops::softmax_vector(V(raw)).value().data;
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(a.sum() - 1.0) < 1e-12);
  }
}
