#pragma once

#include <array>
#include <sstream>
#include <string>
#include <vector>

#include "usspine/nn/layers.hpp"

namespace usspine::nn {

// Conv blocks (3x3 conv + ReLU, 2x2 max pool between blocks), global average
// pooling and a 2-way linear head. Class 0 = fake, class 1 = real.
struct ClassifierArch {
  int in_width = 110;
  int in_height = 140;
  int pre_pool = 2;
  std::vector<int> widths{8, 16, 24, 32};

  void validate() const {
    if (in_width <= 0 || in_height <= 0) throw ConfigError("classifier input size must be positive");
    if (pre_pool <= 0) throw ConfigError("classifier.pre_pool must be positive");
    if (widths.empty()) throw ConfigError("classifier.widths must not be empty");
    for (int w : widths)
      if (w <= 0) throw ConfigError("classifier channel counts must be positive");
    int h = in_height / pre_pool, w = in_width / pre_pool;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) h /= 2, w /= 2;
    if (h < 1 || w < 1) throw ConfigError("classifier input too small for its pooling depth");
  }

  std::string descriptor() const {
    std::ostringstream os;
    os << "classifier w=" << in_width << " h=" << in_height << " pool=" << pre_pool << " widths=";
    for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
    return os.str();
  }

  static ClassifierArch parse(const std::string& descriptor) {
    std::istringstream is(descriptor);
    std::string tag, tok;
    is >> tag;
    if (tag != "classifier") throw FormatError("not a classifier descriptor: " + descriptor);
    ClassifierArch a;
    a.widths.clear();
    while (is >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw FormatError("bad descriptor token: " + tok);
      const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "w") a.in_width = std::stoi(val);
      else if (key == "h") a.in_height = std::stoi(val);
      else if (key == "pool") a.pre_pool = std::stoi(val);
      else if (key == "widths") {
        std::istringstream ws(val);
        std::string part;
        while (std::getline(ws, part, ',')) a.widths.push_back(std::stoi(part));
      } else throw FormatError("unknown descriptor key: " + key);
    }
    a.validate();
    return a;
  }

  friend bool operator==(const ClassifierArch&, const ClassifierArch&) = default;
};

template <typename T>
struct ClassifierCache {
  Tensor<T> x0;
  std::vector<Tensor<T>> block_in, block;
  std::vector<RowMatrix<T>> cols;
  std::vector<std::vector<std::uint32_t>> pools;
  std::vector<T> pooled, logits;
  std::array<T, 2> probs{};
};

template <typename T>
class ClassifierNet {
 public:
  ClassifierNet() = default;
  explicit ClassifierNet(ClassifierArch arch) : arch_(std::move(arch)) {
    arch_.validate();
    std::size_t off = 0;
    for (std::size_t i = 0; i < arch_.widths.size(); ++i) {
      Conv2d c{i == 0 ? 1 : arch_.widths[i - 1], arch_.widths[i], 3, off};
      off += c.param_count();
      convs_.push_back(c);
    }
    fc_ = Linear{arch_.widths.back(), 2, off};
    off += fc_.param_count();
    params_.assign(off, T(0));
  }

  const ClassifierArch& arch() const { return arch_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    std::span<T> p(params_);
    for (const auto& c : convs_) c.init(p, rng);
    fc_.init(p, rng);
  }

  void forward(const Tensor<T>& x, ClassifierCache<T>& c) const {
    if (x.c != 1 || x.w != arch_.in_width || x.h != arch_.in_height)
      throw ShapeError("classifier expects a " + std::to_string(arch_.in_width) + "x" + std::to_string(arch_.in_height) +
                       " patch, got " + std::to_string(x.w) + "x" + std::to_string(x.h));
    std::span<const T> p(params_);
    const std::size_t n = convs_.size();
    c.x0 = avgpool(x, arch_.pre_pool);
    c.block_in.resize(n);
    c.block.resize(n);
    c.cols.resize(n);
    c.pools.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      c.block_in[i] = i == 0 ? c.x0 : maxpool2(c.block[i - 1], c.pools[i]);
      c.block[i] = convs_[i].forward(c.block_in[i], p, c.cols[i]);
      relu_inplace(c.block[i]);
    }
    c.pooled = global_avgpool(c.block.back());
    c.logits = fc_.forward(c.pooled, p);
    c.probs = softmax2(c.logits);
  }

  // Accumulates parameter gradients given dLoss/dlogits.
  void backward(const ClassifierCache<T>& c, const std::array<T, 2>& glogits, std::span<T> grads) const {
    std::span<const T> p(params_);
    const std::vector<T> gl{glogits[0], glogits[1]};
    const auto gpooled = fc_.backward(c.pooled, gl, p, grads);
    const auto& last = c.block.back();
    Tensor<T> g = global_avgpool_backward(gpooled, last.c, last.h, last.w);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      relu_backward_inplace(c.block[i], g);
      Tensor<T> gin = convs_[i].backward(c.block_in[i].h, c.block_in[i].w, c.cols[i], g, p, grads, i > 0);
      if (i > 0) g = maxpool2_backward(gin, c.pools[i], c.block[i - 1].c, c.block[i - 1].h, c.block[i - 1].w);
    }
  }

  // (p_fake, p_real).
  std::array<double, 2> forward(const Image& patch) const {
    ClassifierCache<T> c;
    forward(image_tensor<T>(patch), c);
    return {static_cast<double>(c.probs[0]), static_cast<double>(c.probs[1])};
  }

  template <typename U>
  ClassifierNet<U> cast() const {
    ClassifierNet<U> o(arch_);
    auto dst = o.params();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return o;
  }

 private:
  ClassifierArch arch_;
  std::vector<Conv2d> convs_;
  Linear fc_;
  std::vector<T> params_;
};

}  // namespace usspine::nn
