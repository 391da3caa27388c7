#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "usspine/error.hpp"
#include "usspine/types.hpp"

namespace usspine::nn {

// Dense (channels, height, width) activation for a single sample.
template <typename T>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T(0))
      : c(channels), h(height), w(width), data(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t size() const { return data.size(); }
  T& at(int ch, int y, int x) { return data[ch * plane() + static_cast<std::size_t>(y) * w + x]; }
  T at(int ch, int y, int x) const { return data[ch * plane() + static_cast<std::size_t>(y) * w + x]; }
  T* channel(int ch) { return data.data() + ch * plane(); }
  const T* channel(int ch) const { return data.data() + ch * plane(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Grayscale image scaled to [0,1] as a 1-channel tensor.
template <typename T>
Tensor<T> image_tensor(const Image& img) {
  Tensor<T> t(1, img.height(), img.width());
  const auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) t.data[i] = static_cast<T>(px[i]) / T(255);
  return t;
}

}  // namespace usspine::nn
