#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "usspine/nn/tensor.hpp"
#include "usspine/rng.hpp"

namespace usspine::nn {

// Square convolution, stride 1, zero padding k/2. Parameters live in a flat
// vector: cout*cin*k*k weights (row-major over [cout][cin][ky][kx]) then cout
// biases.
struct Conv2d {
  int cin = 0, cout = 0, k = 3;
  std::size_t offset = 0;

  std::size_t weight_count() const { return static_cast<std::size_t>(cout) * cin * k * k; }
  std::size_t param_count() const { return weight_count() + static_cast<std::size_t>(cout); }

  template <typename T>
  void init(std::span<T> params, Rng& rng, T bias = T(0)) const {
    const double sd = std::sqrt(2.0 / (cin * k * k));
    for (std::size_t i = 0; i < weight_count(); ++i) params[offset + i] = static_cast<T>(rng.normal(0.0, sd));
    for (int o = 0; o < cout; ++o) params[offset + weight_count() + o] = bias;
  }

  template <typename T>
  void im2col(const Tensor<T>& in, RowMatrix<T>& col) const {
    const int r = k / 2, h = in.h, w = in.w;
    col.setZero(static_cast<Eigen::Index>(cin) * k * k, static_cast<Eigen::Index>(h) * w);
    for (int ci = 0; ci < cin; ++ci) {
      const T* src = in.channel(ci);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T* dst = col.row((ci * k + ky) * k + kx).data();
          const int dy = ky - r, dx = kx - r;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
            const T* s = src + static_cast<std::size_t>(y + dy) * w + dx;
            T* d = dst + static_cast<std::size_t>(y) * w;
            for (int x = x0; x < x1; ++x) d[x] = s[x];
          }
        }
    }
  }

  template <typename T>
  Tensor<T> forward(const Tensor<T>& in, std::span<const T> params, RowMatrix<T>& col) const {
    if (in.c != cin) throw ShapeError("conv input has " + std::to_string(in.c) + " channels, expected " + std::to_string(cin));
    im2col(in, col);
    Tensor<T> out(cout, in.h, in.w);
    ConstMatMap<T> wmat(params.data() + offset, cout, static_cast<Eigen::Index>(cin) * k * k);
    MatMap<T> omat(out.data.data(), cout, static_cast<Eigen::Index>(in.h) * in.w);
    omat.noalias() = wmat * col;
    const T* b = params.data() + offset + weight_count();
    for (int o = 0; o < cout; ++o) omat.row(o).array() += b[o];
    return out;
  }

  // Accumulates parameter gradients; returns the input gradient when wanted.
  template <typename T>
  Tensor<T> backward(int h, int w, const RowMatrix<T>& col, const Tensor<T>& gout, std::span<const T> params,
                     std::span<T> grads, bool want_input_grad) const {
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    ConstMatMap<T> g(gout.data.data(), cout, hw);
    MatMap<T> gw(grads.data() + offset, cout, static_cast<Eigen::Index>(cin) * k * k);
    gw.noalias() += g * col.transpose();
    T* gb = grads.data() + offset + weight_count();
    for (int o = 0; o < cout; ++o) gb[o] += g.row(o).sum();
    if (!want_input_grad) return {};
    ConstMatMap<T> wmat(params.data() + offset, cout, static_cast<Eigen::Index>(cin) * k * k);
    RowMatrix<T> gcol = wmat.transpose() * g;
    Tensor<T> gin(cin, h, w);
    const int r = k / 2;
    for (int ci = 0; ci < cin; ++ci) {
      T* dst = gin.channel(ci);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T* src = gcol.row((ci * k + ky) * k + kx).data();
          const int dy = ky - r, dx = kx - r;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
            T* d = dst + static_cast<std::size_t>(y + dy) * w + dx;
            const T* s = src + static_cast<std::size_t>(y) * w;
            for (int x = x0; x < x1; ++x) d[x] += s[x];
          }
        }
    }
    return gin;
  }
};

struct Linear {
  int in = 0, out = 0;
  std::size_t offset = 0;

  std::size_t param_count() const { return static_cast<std::size_t>(in) * out + out; }

  template <typename T>
  void init(std::span<T> params, Rng& rng) const {
    const double sd = std::sqrt(1.0 / in);
    for (std::size_t i = 0; i < static_cast<std::size_t>(in) * out; ++i)
      params[offset + i] = static_cast<T>(rng.normal(0.0, sd));
    for (int o = 0; o < out; ++o) params[offset + static_cast<std::size_t>(in) * out + o] = T(0);
  }

  template <typename T>
  std::vector<T> forward(const std::vector<T>& x, std::span<const T> params) const {
    std::vector<T> y(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      T s = params[offset + static_cast<std::size_t>(in) * out + o];
      for (int i = 0; i < in; ++i) s += params[offset + static_cast<std::size_t>(o) * in + i] * x[i];
      y[o] = s;
    }
    return y;
  }

  template <typename T>
  std::vector<T> backward(const std::vector<T>& x, const std::vector<T>& gy, std::span<const T> params,
                          std::span<T> grads) const {
    std::vector<T> gx(static_cast<std::size_t>(in), T(0));
    for (int o = 0; o < out; ++o) {
      grads[offset + static_cast<std::size_t>(in) * out + o] += gy[o];
      for (int i = 0; i < in; ++i) {
        grads[offset + static_cast<std::size_t>(o) * in + i] += gy[o] * x[i];
        gx[i] += gy[o] * params[offset + static_cast<std::size_t>(o) * in + i];
      }
    }
    return gx;
  }
};

template <typename T>
void relu_inplace(Tensor<T>& t) {
  for (auto& v : t.data) v = v > T(0) ? v : T(0);
}

// Gradient through a ReLU given its output.
template <typename T>
void relu_backward_inplace(const Tensor<T>& out, Tensor<T>& g) {
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (!(out.data[i] > T(0))) g.data[i] = T(0);
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// 2x2 max pooling (floor on odd sizes). `argmax` records the winning input
// index of every output cell; ties keep the first in scan order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& in, std::vector<std::uint32_t>& argmax) {
  Tensor<T> out(in.c, in.h / 2, in.w / 2);
  argmax.resize(out.size());
  std::size_t o = 0;
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x, ++o) {
        std::size_t best = c * in.plane() + static_cast<std::size_t>(2 * y) * in.w + 2 * x;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t i = c * in.plane() + static_cast<std::size_t>(2 * y + dy) * in.w + 2 * x + dx;
            if (in.data[i] > in.data[best]) best = i;
          }
        out.data[o] = in.data[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  return out;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& gout, const std::vector<std::uint32_t>& argmax, int c, int h, int w) {
  Tensor<T> gin(c, h, w);
  for (std::size_t o = 0; o < gout.size(); ++o) gin.data[argmax[o]] += gout.data[o];
  return gin;
}

// p x p average pooling (floor on ragged edges).
template <typename T>
Tensor<T> avgpool(const Tensor<T>& in, int p) {
  if (p == 1) return in;
  Tensor<T> out(in.c, in.h / p, in.w / p);
  const T inv = T(1) / static_cast<T>(p * p);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        T s = T(0);
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) s += in.at(c, y * p + dy, x * p + dx);
        out.at(c, y, x) = s * inv;
      }
  return out;
}

// Nearest-neighbour upsampling by 2 onto an explicit (h, w) grid, which lets
// the decoder match encoder maps whose size was floored by pooling.
template <typename T>
Tensor<T> upsample2_to(const Tensor<T>& in, int h, int w) {
  Tensor<T> out(in.c, h, w);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = in.at(c, std::min(y / 2, in.h - 1), std::min(x / 2, in.w - 1));
  return out;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& gout, int h, int w) {
  Tensor<T> gin(gout.c, h, w);
  for (int c = 0; c < gout.c; ++c)
    for (int y = 0; y < gout.h; ++y)
      for (int x = 0; x < gout.w; ++x) gin.at(c, std::min(y / 2, h - 1), std::min(x / 2, w - 1)) += gout.at(c, y, x);
  return gin;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("concat of mismatched spatial sizes");
  Tensor<T> out(a.c + b.c, a.h, a.w);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int first) {
  Tensor<T> a(first, g.h, g.w), b(g.c - first, g.h, g.w);
  std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(a.size()), a.data.begin());
  std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(a.size()), g.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

template <typename T>
std::vector<T> global_avgpool(const Tensor<T>& in) {
  std::vector<T> out(static_cast<std::size_t>(in.c));
  for (int c = 0; c < in.c; ++c) {
    T s = T(0);
    const T* p = in.channel(c);
    for (std::size_t i = 0; i < in.plane(); ++i) s += p[i];
    out[c] = s / static_cast<T>(in.plane());
  }
  return out;
}

template <typename T>
Tensor<T> global_avgpool_backward(const std::vector<T>& g, int c, int h, int w) {
  Tensor<T> gin(c, h, w);
  const T inv = T(1) / static_cast<T>(h * w);
  for (int ch = 0; ch < c; ++ch) std::fill(gin.channel(ch), gin.channel(ch) + gin.plane(), g[ch] * inv);
  return gin;
}

// Numerically stable two-way softmax.
template <typename T>
std::array<T, 2> softmax2(const std::vector<T>& logits) {
  const T m = std::max(logits[0], logits[1]);
  const T e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

}  // namespace usspine::nn
