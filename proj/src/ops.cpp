#include "dsf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dsf::ops {

namespace {

template <typename Scalar>
void push_grad(Node<Scalar>& node, std::size_t parent, const Matrix<Scalar>& g) {
  auto& p = *node.parents[parent];
  if (p.requires_grad) p.accumulate(g);
}

int out_extent(int in, const ConvGeometry& g) { return (in + 2 * g.pad - g.kernel) / g.stride + 1; }

int source_index(int pos, int extent, Padding padding) {
  if (pos >= 0 && pos < extent) return pos;
  if (padding == Padding::zeros) return -1;
  return std::clamp(pos, 0, extent - 1);
}

/// Builds the (C*k*k) x (Ho*Wo) patch matrix.
template <typename Scalar>
Matrix<Scalar> im2col(const Tensor<Scalar>& x, const ConvGeometry& g, int ho, int wo) {
  const int k = g.kernel;
  Matrix<Scalar> cols(static_cast<Eigen::Index>(x.channels) * k * k, static_cast<Eigen::Index>(ho) * wo);
  std::vector<int> xs(static_cast<std::size_t>(wo));
  for (int c = 0; c < x.channels; ++c) {
    const Scalar* src = x.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int ox = 0; ox < wo; ++ox) xs[ox] = source_index(ox * g.stride - g.pad + kx, x.width, g.padding);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = source_index(oy * g.stride - g.pad + ky, x.height, g.padding);
          Scalar* out = dst + static_cast<Eigen::Index>(oy) * wo;
          if (iy < 0) {
            std::fill(out, out + wo, Scalar(0));
            continue;
          }
          const Scalar* row = src + static_cast<Eigen::Index>(iy) * x.width;
          for (int ox = 0; ox < wo; ++ox) out[ox] = xs[ox] < 0 ? Scalar(0) : row[xs[ox]];
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im(const Matrix<Scalar>& cols, const ConvGeometry& g, int ho, int wo, Tensor<Scalar>& dx) {
  const int k = g.kernel;
  std::vector<int> xs(static_cast<std::size_t>(wo));
  for (int c = 0; c < dx.channels; ++c) {
    Scalar* dst = dx.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int ox = 0; ox < wo; ++ox) xs[ox] = source_index(ox * g.stride - g.pad + kx, dx.width, g.padding);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = source_index(oy * g.stride - g.pad + ky, dx.height, g.padding);
          if (iy < 0) continue;
          Scalar* row = dst + static_cast<Eigen::Index>(iy) * dx.width;
          const Scalar* in = src + static_cast<Eigen::Index>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            if (xs[ox] >= 0) row[xs[ox]] += in[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, ConvGeometry g) {
  const auto& xv = x.value();
  const auto& w = weight.value();
  const int k2 = g.kernel * g.kernel;
  if (w.height != xv.channels || w.width != k2) {
    throw std::invalid_argument("conv2d: weight " + w.shape_string() + " does not fit input " + xv.shape_string());
  }
  const int ho = out_extent(xv.height, g);
  const int wo = out_extent(xv.width, g);
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: input " + xv.shape_string() + " smaller than kernel");

  Tensor<Scalar> out(w.channels, ho, wo);
  if (is_pointwise(g)) {
    out.data.noalias() = w.data * xv.data;
  } else {
    out.data.noalias() = w.data * im2col(xv, g, ho, wo);
  }
  out.data.colwise() += bias.value().data.col(0);

  return Var<Scalar>::make(std::move(out), {x, weight, bias}, [g, ho, wo](Node<Scalar>& n) {
    const auto& xin = n.parents[0]->value;
    const auto& wt = n.parents[1]->value;
    const Matrix<Scalar>& gout = n.grad;
    const bool pointwise = is_pointwise(g);
    Matrix<Scalar> cols;
    if (!pointwise && n.parents[1]->requires_grad) cols = im2col(xin, g, ho, wo);
    if (n.parents[1]->requires_grad) {
      if (pointwise) {
        n.parents[1]->grad_buffer().noalias() += gout * xin.data.transpose();
      } else {
        n.parents[1]->grad_buffer().noalias() += gout * cols.transpose();
      }
    }
    if (n.parents[2]->requires_grad) n.parents[2]->grad_buffer() += gout.rowwise().sum();
    if (n.parents[0]->requires_grad) {
      if (pointwise) {
        n.parents[0]->grad_buffer().noalias() += wt.data.transpose() * gout;
      } else {
        Matrix<Scalar> dcols = wt.data.transpose() * gout;
        Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(xin);
        col2im(dcols, g, ho, wo, dx);
        n.parents[0]->accumulate(dx.data);
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> depthwise_conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                             ConvGeometry g) {
  const auto& xv = x.value();
  const auto& w = weight.value();
  const int k = g.kernel;
  if (w.channels != xv.channels || w.width != k * k) {
    throw std::invalid_argument("depthwise_conv2d: weight " + w.shape_string() + " does not fit input " +
                                xv.shape_string());
  }
  const int ho = out_extent(xv.height, g);
  const int wo = out_extent(xv.width, g);
  Tensor<Scalar> out(xv.channels, ho, wo);
  for (int c = 0; c < xv.channels; ++c) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        Scalar acc = bias.value().data(c, 0);
        for (int ky = 0; ky < k; ++ky) {
          const int iy = source_index(oy * g.stride - g.pad + ky, xv.height, g.padding);
          if (iy < 0) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = source_index(ox * g.stride - g.pad + kx, xv.width, g.padding);
            if (ix < 0) continue;
            acc += w.data(c, ky * k + kx) * xv.at(c, iy, ix);
          }
        }
        out.at(c, oy, ox) = acc;
      }
    }
  }
  return Var<Scalar>::make(std::move(out), {x, weight, bias}, [g, ho, wo](Node<Scalar>& n) {
    const auto& xin = n.parents[0]->value;
    const auto& wt = n.parents[1]->value;
    const int k = g.kernel;
    const bool need_x = n.parents[0]->requires_grad;
    const bool need_w = n.parents[1]->requires_grad;
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(xin);
    Matrix<Scalar> dw = Matrix<Scalar>::Zero(wt.data.rows(), wt.data.cols());
    for (int c = 0; c < xin.channels; ++c) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const Scalar go = n.grad(c, static_cast<Eigen::Index>(oy) * wo + ox);
          for (int ky = 0; ky < k; ++ky) {
            const int iy = source_index(oy * g.stride - g.pad + ky, xin.height, g.padding);
            if (iy < 0) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = source_index(ox * g.stride - g.pad + kx, xin.width, g.padding);
              if (ix < 0) continue;
              if (need_w) dw(c, ky * k + kx) += go * xin.at(c, iy, ix);
              if (need_x) dx.at(c, iy, ix) += go * wt.data(c, ky * k + kx);
            }
          }
        }
      }
    }
    if (need_x) n.parents[0]->accumulate(dx.data);
    if (need_w) n.parents[1]->accumulate(dw);
    if (n.parents[2]->requires_grad) n.parents[2]->grad_buffer() += n.grad.rowwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  const auto& xv = x.value();
  const auto& w = weight.value();
  if (w.width != xv.channels) {
    throw std::invalid_argument("linear: weight " + w.shape_string() + " does not fit input " + xv.shape_string());
  }
  Tensor<Scalar> out(w.channels, xv.height, xv.width);
  out.data.noalias() = w.data * xv.data;
  out.data.colwise() += bias.value().data.col(0);
  return Var<Scalar>::make(std::move(out), {x, weight, bias}, [](Node<Scalar>& n) {
    const auto& xin = n.parents[0]->value;
    const auto& wt = n.parents[1]->value;
    if (n.parents[0]->requires_grad) n.parents[0]->grad_buffer().noalias() += wt.data.transpose() * n.grad;
    if (n.parents[1]->requires_grad) n.parents[1]->grad_buffer().noalias() += n.grad * xin.data.transpose();
    if (n.parents[2]->requires_grad) n.parents[2]->grad_buffer() += n.grad.rowwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (!a.value().same_shape(b.value())) {
    throw std::invalid_argument("add: shape mismatch " + a.value().shape_string() + " vs " +
                                b.value().shape_string());
  }
  Tensor<Scalar> out = a.value();
  out.data += b.value().data;
  return Var<Scalar>::make(std::move(out), {a, b}, [](Node<Scalar>& n) {
    push_grad(n, 0, n.grad);
    push_grad(n, 1, n.grad);
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor) {
  Tensor<Scalar> out = x.value();
  out.data *= factor;
  return Var<Scalar>::make(std::move(out), {x}, [factor](Node<Scalar>& n) {
    push_grad(n, 0, (n.grad * factor).eval());
  });
}

template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<Var<Scalar>>& inputs, const Var<Scalar>& weights) {
  const auto count = static_cast<Eigen::Index>(inputs.size());
  if (count == 0) throw std::invalid_argument("weighted_sum: no inputs");
  if (weights.value().size() != count) {
    throw std::invalid_argument("weighted_sum: " + std::to_string(inputs.size()) + " inputs but " +
                                std::to_string(weights.value().size()) + " weights");
  }
  Tensor<Scalar> out = Tensor<Scalar>::zeros_like(inputs.front().value());
  const auto& w = weights.value().data;
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto& xi = inputs[static_cast<std::size_t>(i)].value();
    if (!xi.same_shape(out)) {
      throw std::invalid_argument("weighted_sum: entry " + std::to_string(i) + " has shape " + xi.shape_string() +
                                  ", expected " + out.shape_string());
    }
    out.data += w(0, i) * xi.data;
  }
  std::vector<Var<Scalar>> parents(inputs);
  parents.push_back(weights);
  return Var<Scalar>::make(std::move(out), std::move(parents), [count](Node<Scalar>& n) {
    auto& wnode = *n.parents[static_cast<std::size_t>(count)];
    const auto& w = wnode.value.data;
    for (Eigen::Index i = 0; i < count; ++i) {
      auto& p = *n.parents[static_cast<std::size_t>(i)];
      if (p.requires_grad) p.accumulate(n.grad * w(0, i));
    }
    if (wnode.requires_grad) {
      auto& gw = wnode.grad_buffer();
      for (Eigen::Index i = 0; i < count; ++i) {
        gw(0, i) += n.grad.cwiseProduct(n.parents[static_cast<std::size_t>(i)]->value.data).sum();
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> softmax_vector(const Var<Scalar>& raw) {
  const auto& r = raw.value().data;
  if (!r.allFinite()) throw std::invalid_argument("softmax_vector: non-finite input");
  Tensor<Scalar> out = raw.value();
  out.data = (r.array() - r.maxCoeff()).exp().matrix();
  out.data /= out.data.sum();
  return Var<Scalar>::make(std::move(out), {raw}, [](Node<Scalar>& n) {
    const auto& e = n.value.data;
    const Scalar dot = n.grad.cwiseProduct(e).sum();
    push_grad(n, 0, (e.array() * (n.grad.array() - dot)).matrix().eval());
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out = x.value();
  out.data = out.data.cwiseMax(Scalar(0));
  return Var<Scalar>::make(std::move(out), {x}, [](Node<Scalar>& n) {
    const auto& xin = n.parents[0]->value.data;
    push_grad(n, 0, (xin.array() > Scalar(0)).select(n.grad.array(), Scalar(0)).matrix().eval());
  });
}

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
  Tensor<Scalar> out = x.value();
  const Scalar inv_sqrt2 = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  out.data = x.value().data.unaryExpr(
      [inv_sqrt2](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2)); });
  return Var<Scalar>::make(std::move(out), {x}, [inv_sqrt2](Node<Scalar>& n) {
    const Scalar inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<Scalar>;
    const auto& xin = n.parents[0]->value.data;
    Matrix<Scalar> d = xin.unaryExpr([inv_sqrt2, inv_sqrt_2pi](Scalar v) {
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
      const Scalar pdf = inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
      return cdf + v * pdf;
    });
    push_grad(n, 0, n.grad.cwiseProduct(d).eval());
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  Tensor<Scalar> out = x.value();
  out.data = x.value().data.unaryExpr([](Scalar v) {
    if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  return Var<Scalar>::make(std::move(out), {x}, [](Node<Scalar>& n) {
    const auto& y = n.value.data.array();
    push_grad(n, 0, (n.grad.array() * y * (Scalar(1) - y)).matrix().eval());
  });
}

namespace {

/// Normalizes each column of `x` after grouping rows into blocks of
/// `rows_per_group` channels; statistics span a whole group slab.
template <typename Scalar>
struct NormStats {
  Matrix<Scalar> xhat;
  std::vector<Scalar> inv_std;
};

}  // namespace

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps) {
  const auto& xv = x.value();
  const auto c = static_cast<Scalar>(xv.channels);
  auto stats = std::make_shared<NormStats<Scalar>>();
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = xv.data.colwise().sum() / c;
  stats->xhat = xv.data.rowwise() - mean;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> var = stats->xhat.cwiseAbs2().colwise().sum() / c;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> inv = (var.array() + eps).rsqrt().matrix();
  stats->xhat = stats->xhat.array().rowwise() * inv.array();
  stats->inv_std.assign(inv.data(), inv.data() + inv.size());

  Tensor<Scalar> out(xv.channels, xv.height, xv.width);
  out.data = (stats->xhat.array().colwise() * gamma.value().data.col(0).array()).matrix();
  out.data.colwise() += beta.value().data.col(0);
  return Var<Scalar>::make(std::move(out), {x, gamma, beta}, [stats](Node<Scalar>& n) {
    const auto& g = n.grad;
    const auto& xhat = stats->xhat;
    if (n.parents[1]->requires_grad) n.parents[1]->grad_buffer() += g.cwiseProduct(xhat).rowwise().sum();
    if (n.parents[2]->requires_grad) n.parents[2]->grad_buffer() += g.rowwise().sum();
    if (n.parents[0]->requires_grad) {
      const auto& gm = n.parents[1]->value.data;
      Matrix<Scalar> dxhat = (g.array().colwise() * gm.col(0).array()).matrix();
      const auto c = static_cast<Scalar>(g.rows());
      Eigen::Matrix<Scalar, 1, Eigen::Dynamic> s1 = dxhat.colwise().sum();
      Eigen::Matrix<Scalar, 1, Eigen::Dynamic> s2 = dxhat.cwiseProduct(xhat).colwise().sum();
      Matrix<Scalar> dx = (c * dxhat.array()).matrix();
      dx.rowwise() -= s1;
      dx -= (xhat.array().rowwise() * s2.array()).matrix();
      const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> inv(stats->inv_std.data(),
                                                                          static_cast<Eigen::Index>(stats->inv_std.size()));
      dx = (dx.array().rowwise() * (inv.array() / c)).matrix();
      n.parents[0]->accumulate(dx);
    }
  });
}

template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, int groups, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps) {
  const auto& xv = x.value();
  if (groups <= 0 || xv.channels % groups != 0) {
    throw std::invalid_argument("group_norm: " + std::to_string(xv.channels) + " channels not divisible into " +
                                std::to_string(groups) + " groups");
  }
  const int per = xv.channels / groups;
  auto stats = std::make_shared<NormStats<Scalar>>();
  stats->xhat.resize(xv.data.rows(), xv.data.cols());
  stats->inv_std.resize(static_cast<std::size_t>(groups));
  const auto count = static_cast<Scalar>(per) * static_cast<Scalar>(xv.pixels());
  for (int gi = 0; gi < groups; ++gi) {
    auto slab = xv.data.middleRows(static_cast<Eigen::Index>(gi) * per, per);
    const Scalar mean = slab.sum() / count;
    auto centered = (slab.array() - mean).eval();
    const Scalar var = centered.square().sum() / count;
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    stats->inv_std[static_cast<std::size_t>(gi)] = inv;
    stats->xhat.middleRows(static_cast<Eigen::Index>(gi) * per, per) = (centered * inv).matrix();
  }
  Tensor<Scalar> out(xv.channels, xv.height, xv.width);
  out.data = (stats->xhat.array().colwise() * gamma.value().data.col(0).array()).matrix();
  out.data.colwise() += beta.value().data.col(0);
  return Var<Scalar>::make(std::move(out), {x, gamma, beta}, [stats, groups, per, count](Node<Scalar>& n) {
    const auto& g = n.grad;
    const auto& xhat = stats->xhat;
    if (n.parents[1]->requires_grad) n.parents[1]->grad_buffer() += g.cwiseProduct(xhat).rowwise().sum();
    if (n.parents[2]->requires_grad) n.parents[2]->grad_buffer() += g.rowwise().sum();
    if (!n.parents[0]->requires_grad) return;
    const auto& gm = n.parents[1]->value.data;
    Matrix<Scalar> dxhat = (g.array().colwise() * gm.col(0).array()).matrix();
    Matrix<Scalar> dx(g.rows(), g.cols());
    for (int gi = 0; gi < groups; ++gi) {
      const auto rows = static_cast<Eigen::Index>(gi) * per;
      auto dh = dxhat.middleRows(rows, per);
      auto xh = xhat.middleRows(rows, per);
      const Scalar s1 = dh.sum();
      const Scalar s2 = dh.cwiseProduct(xh).sum();
      dx.middleRows(rows, per) =
          ((count * dh.array() - s1 - xh.array() * s2) * (stats->inv_std[static_cast<std::size_t>(gi)] / count))
              .matrix();
    }
    n.parents[0]->accumulate(dx);
  });
}

template <typename Scalar>
Var<Scalar> max_pool2(const Var<Scalar>& x) {
  const auto& xv = x.value();
  if (xv.height % 2 != 0 || xv.width % 2 != 0) {
    throw std::invalid_argument("max_pool2: odd spatial size " + xv.shape_string());
  }
  const int ho = xv.height / 2;
  const int wo = xv.width / 2;
  Tensor<Scalar> out(xv.channels, ho, wo);
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(static_cast<std::size_t>(out.size()));
  for (int c = 0; c < xv.channels; ++c) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        Eigen::Index best = static_cast<Eigen::Index>(2 * oy) * xv.width + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const Eigen::Index idx = static_cast<Eigen::Index>(2 * oy + dy) * xv.width + 2 * ox + dx;
            if (xv.data(c, idx) > xv.data(c, best)) best = idx;
          }
        }
        const Eigen::Index o = static_cast<Eigen::Index>(oy) * wo + ox;
        out.data(c, o) = xv.data(c, best);
        (*argmax)[static_cast<std::size_t>(c * out.pixels() + o)] = best;
      }
    }
  }
  return Var<Scalar>::make(std::move(out), {x}, [argmax](Node<Scalar>& n) {
    auto& p = *n.parents[0];
    auto& dx = p.grad_buffer();
    const Eigen::Index opix = n.value.pixels();
    for (Eigen::Index c = 0; c < n.grad.rows(); ++c) {
      for (Eigen::Index o = 0; o < opix; ++o) dx(c, (*argmax)[static_cast<std::size_t>(c * opix + o)]) += n.grad(c, o);
    }
  });
}

namespace {

struct AxisSample {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

AxisSample axis_samples(int in, int out) {
  AxisSample s;
  s.lo.resize(static_cast<std::size_t>(out));
  s.hi.resize(static_cast<std::size_t>(out));
  s.frac.resize(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = std::max(0.0, (i + 0.5) * ratio - 0.5);
    int lo = std::min(static_cast<int>(src), in - 1);
    s.lo[i] = lo;
    s.hi[i] = std::min(lo + 1, in - 1);
    s.frac[i] = src - lo;
  }
  return s;
}

}  // namespace

template <typename Scalar>
Var<Scalar> resize_bilinear(const Var<Scalar>& x, int out_height, int out_width) {
  const auto& xv = x.value();
  if (out_height == xv.height && out_width == xv.width) return x;
  auto ys = std::make_shared<AxisSample>(axis_samples(xv.height, out_height));
  auto xs = std::make_shared<AxisSample>(axis_samples(xv.width, out_width));
  Tensor<Scalar> out(xv.channels, out_height, out_width);
  for (int c = 0; c < xv.channels; ++c) {
    for (int oy = 0; oy < out_height; ++oy) {
      const auto ly = static_cast<Scalar>(ys->frac[oy]);
      const int y0 = ys->lo[oy], y1 = ys->hi[oy];
      for (int ox = 0; ox < out_width; ++ox) {
        const auto lx = static_cast<Scalar>(xs->frac[ox]);
        const int x0 = xs->lo[ox], x1 = xs->hi[ox];
        const Scalar top = (1 - lx) * xv.at(c, y0, x0) + lx * xv.at(c, y0, x1);
        const Scalar bot = (1 - lx) * xv.at(c, y1, x0) + lx * xv.at(c, y1, x1);
        out.at(c, oy, ox) = (1 - ly) * top + ly * bot;
      }
    }
  }
  return Var<Scalar>::make(std::move(out), {x}, [ys, xs](Node<Scalar>& n) {
    auto& p = *n.parents[0];
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(p.value);
    const int oh = n.value.height, ow = n.value.width;
    for (int c = 0; c < dx.channels; ++c) {
      for (int oy = 0; oy < oh; ++oy) {
        const auto ly = static_cast<Scalar>(ys->frac[oy]);
        const int y0 = ys->lo[oy], y1 = ys->hi[oy];
        for (int ox = 0; ox < ow; ++ox) {
          const auto lx = static_cast<Scalar>(xs->frac[ox]);
          const int x0 = xs->lo[ox], x1 = xs->hi[ox];
          const Scalar g = n.grad(c, static_cast<Eigen::Index>(oy) * ow + ox);
          dx.at(c, y0, x0) += g * (1 - ly) * (1 - lx);
          dx.at(c, y0, x1) += g * (1 - ly) * lx;
          dx.at(c, y1, x0) += g * ly * (1 - lx);
          dx.at(c, y1, x1) += g * ly * lx;
        }
      }
    }
    p.accumulate(dx.data);
  });
}

template <typename Scalar>
Var<Scalar> channel_max_mean(const Var<Scalar>& x) {
  const auto& xv = x.value();
  if (xv.channels < 1) throw std::invalid_argument("channel_max_mean: empty channel axis");
  Tensor<Scalar> out(2, xv.height, xv.width);
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(xv.pixels()));
  for (Eigen::Index j = 0; j < xv.data.cols(); ++j) {
    Eigen::Index best = 0;
    out.data(0, j) = xv.data.col(j).maxCoeff(&best);
    (*argmax)[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  out.data.row(1) = xv.data.colwise().mean();
  return Var<Scalar>::make(std::move(out), {x}, [argmax](Node<Scalar>& n) {
    auto& p = *n.parents[0];
    auto& dx = p.grad_buffer();
    const auto c = static_cast<Scalar>(dx.rows());
    dx.rowwise() += n.grad.row(1) / c;
    for (Eigen::Index j = 0; j < dx.cols(); ++j) dx((*argmax)[static_cast<std::size_t>(j)], j) += n.grad(0, j);
  });
}

template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, int heads) {
  const auto& qv = q.value().data;
  const auto& kv = k.value().data;
  const auto& vv = v.value().data;
  const auto channels = qv.rows();
  if (heads <= 0 || channels % heads != 0 || kv.rows() != channels || vv.rows() != channels ||
      kv.cols() != vv.cols()) {
    throw std::invalid_argument("attention: incompatible q/k/v shapes or head count");
  }
  const auto d = channels / heads;
  const Scalar scale_factor = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  auto probs = std::make_shared<std::vector<Matrix<Scalar>>>(static_cast<std::size_t>(heads));
  Tensor<Scalar> out(q.value().channels, q.value().height, q.value().width);
  for (int h = 0; h < heads; ++h) {
    Matrix<Scalar> s = (qv.middleRows(h * d, d).transpose() * kv.middleRows(h * d, d)) * scale_factor;
    s.colwise() -= s.rowwise().maxCoeff();
    s = s.array().exp().matrix();
    s.array().colwise() /= s.rowwise().sum().array();
    out.data.middleRows(h * d, d).noalias() = vv.middleRows(h * d, d) * s.transpose();
    (*probs)[static_cast<std::size_t>(h)] = std::move(s);
  }
  return Var<Scalar>::make(std::move(out), {q, k, v}, [probs, heads, d, scale_factor](Node<Scalar>& n) {
    const auto& qv = n.parents[0]->value.data;
    const auto& kv = n.parents[1]->value.data;
    const auto& vv = n.parents[2]->value.data;
    Matrix<Scalar> dq = Matrix<Scalar>::Zero(qv.rows(), qv.cols());
    Matrix<Scalar> dk = Matrix<Scalar>::Zero(kv.rows(), kv.cols());
    Matrix<Scalar> dv = Matrix<Scalar>::Zero(vv.rows(), vv.cols());
    for (int h = 0; h < heads; ++h) {
      const auto& p = (*probs)[static_cast<std::size_t>(h)];
      auto go = n.grad.middleRows(h * d, d);
      dv.middleRows(h * d, d).noalias() = go * p;
      Matrix<Scalar> dp = go.transpose() * vv.middleRows(h * d, d);
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_dot = dp.cwiseProduct(p).rowwise().sum();
      Matrix<Scalar> ds = (p.array() * (dp.array().colwise() - row_dot.array())).matrix() * scale_factor;
      dq.middleRows(h * d, d).noalias() = kv.middleRows(h * d, d) * ds.transpose();
      dk.middleRows(h * d, d).noalias() = qv.middleRows(h * d, d) * ds;
    }
    push_grad(n, 0, dq);
    push_grad(n, 1, dk);
    push_grad(n, 2, dv);
  });
}

template <typename Scalar>
Var<Scalar> scalar_function(const Var<Scalar>& x, Scalar value, Matrix<Scalar> gradient) {
  if (gradient.rows() != x.value().data.rows() || gradient.cols() != x.value().data.cols()) {
    throw std::invalid_argument("scalar_function: gradient shape does not match input");
  }
  auto grad = std::make_shared<Matrix<Scalar>>(std::move(gradient));
  return Var<Scalar>::make(Tensor<Scalar>::scalar(value), {x}, [grad](Node<Scalar>& n) {
    push_grad(n, 0, (*grad * n.grad(0, 0)).eval());
  });
}

#define DSF_INSTANTIATE_OPS(S)                                                                                  \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, ConvGeometry);                           \
  template Var<S> depthwise_conv2d(const Var<S>&, const Var<S>&, const Var<S>&, ConvGeometry);                 \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                                          \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                            \
  template Var<S> scale(const Var<S>&, S);                                                                      \
  template Var<S> weighted_sum(const std::vector<Var<S>>&, const Var<S>&);                                      \
  template Var<S> softmax_vector(const Var<S>&);                                                                \
  template Var<S> relu(const Var<S>&);                                                                          \
  template Var<S> gelu(const Var<S>&);                                                                          \
  template Var<S> sigmoid(const Var<S>&);                                                                       \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                                   \
  template Var<S> group_norm(const Var<S>&, int, const Var<S>&, const Var<S>&, S);                              \
  template Var<S> max_pool2(const Var<S>&);                                                                     \
  template Var<S> resize_bilinear(const Var<S>&, int, int);                                                     \
  template Var<S> channel_max_mean(const Var<S>&);                                                              \
  template Var<S> attention(const Var<S>&, const Var<S>&, const Var<S>&, int);                                  \
  template Var<S> scalar_function(const Var<S>&, S, Matrix<S>);

DSF_INSTANTIATE_OPS(float)
DSF_INSTANTIATE_OPS(double)

#undef DSF_INSTANTIATE_OPS

}  // namespace dsf::ops
