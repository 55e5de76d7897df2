#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dsf {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RasterT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Raster = RasterT<float>;
using RasterD = RasterT<double>;

/// Per-pixel class indices; 255 marks ignored pixels.
using LabelRaster = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Dense channels x (height*width) tensor. Each channel plane is one
/// contiguous row in row-major pixel order; token sequences use the same
/// layout with (h, w) giving the token grid.
template <typename Scalar>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix<Scalar> data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(Matrix<Scalar>::Zero(c, h * w)) {}
  Tensor(int c, int h, int w, Matrix<Scalar> values)
      : channels(c), height(h), width(w), data(std::move(values)) {
    if (data.rows() != c || data.cols() != static_cast<Eigen::Index>(h) * w) {
      throw std::invalid_argument("tensor data does not match shape " + shape_string());
    }
  }

  [[nodiscard]] int pixels() const { return height * width; }
  [[nodiscard]] Eigen::Index size() const { return data.size(); }
  [[nodiscard]] bool empty() const { return data.size() == 0; }

  [[nodiscard]] bool same_shape(const Tensor& other) const {
    return channels == other.channels && height == other.height && width == other.width;
  }

  [[nodiscard]] std::string shape_string() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }

  Scalar& at(int c, int y, int x) { return data(c, static_cast<Eigen::Index>(y) * width + x); }
  [[nodiscard]] Scalar at(int c, int y, int x) const {
    return data(c, static_cast<Eigen::Index>(y) * width + x);
  }

  /// View of one channel as an h x w raster.
  [[nodiscard]] RasterT<Scalar> plane(int c) const {
    return Eigen::Map<const RasterT<Scalar>>(data.row(c).data(), height, width);
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.channels, t.height, t.width); }

  static Tensor from_plane(const RasterT<Scalar>& r) {
    Tensor t(1, static_cast<int>(r.rows()), static_cast<int>(r.cols()));
    Eigen::Map<RasterT<Scalar>>(t.data.data(), r.rows(), r.cols()) = r;
    return t;
  }

  static Tensor scalar(Scalar v) {
    Tensor t(1, 1, 1);
    t.data(0, 0) = v;
    return t;
  }

  template <typename Other>
  [[nodiscard]] Tensor<Other> cast() const {
    return Tensor<Other>(channels, height, width, data.template cast<Other>());
  }

  [[nodiscard]] bool all_finite() const { return data.allFinite(); }
};

}  // namespace dsf
