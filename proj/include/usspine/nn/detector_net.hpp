#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "usspine/heatmap.hpp"
#include "usspine/nn/layers.hpp"

namespace usspine::nn {

// Encoder-decoder layout of the built-in detector. widths[0] is the channel
// count at 1/d_ds resolution; each further entry adds a 2x pooled level.
struct DetectorArch {
  int in_width = 320;
  int in_height = 240;
  int d_ds = 4;
  int stem = 8;
  std::vector<int> widths{16, 24, 32};
  int head = 16;

  int pre_pool() const { return d_ds >= 2 ? d_ds / 2 : 1; }
  int map_width() const { return in_width / d_ds; }
  int map_height() const { return in_height / d_ds; }

  void validate() const {
    if (!valid_downsampling(d_ds)) throw ConfigError("detector.d_ds must be one of 1, 2, 4, 8");
    if (in_width <= 0 || in_height <= 0 || in_width % d_ds != 0 || in_height % d_ds != 0)
      throw ConfigError("detector input size must be positive and divisible by d_ds");
    if (widths.empty()) throw ConfigError("detector.widths must not be empty");
    if (stem <= 0 || head <= 0) throw ConfigError("detector channel counts must be positive");
    for (int w : widths)
      if (w <= 0) throw ConfigError("detector channel counts must be positive");
    const int coarsest = 1 << (widths.size() - 1);
    if (map_width() < coarsest || map_height() < coarsest)
      throw ConfigError("detector has more pooling levels than the heatmap size allows");
  }

  std::string descriptor() const {
    std::ostringstream os;
    os << "detector w=" << in_width << " h=" << in_height << " d=" << d_ds << " stem=" << stem << " widths=";
    for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
    os << " head=" << head;
    return os.str();
  }

  static DetectorArch parse(const std::string& descriptor) {
    std::istringstream is(descriptor);
    std::string tag, tok;
    is >> tag;
    if (tag != "detector") throw FormatError("not a detector descriptor: " + descriptor);
    DetectorArch a;
    a.widths.clear();
    while (is >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw FormatError("bad descriptor token: " + tok);
      const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "w") a.in_width = std::stoi(val);
      else if (key == "h") a.in_height = std::stoi(val);
      else if (key == "d") a.d_ds = std::stoi(val);
      else if (key == "stem") a.stem = std::stoi(val);
      else if (key == "head") a.head = std::stoi(val);
      else if (key == "widths") {
        std::istringstream ws(val);
        std::string part;
        while (std::getline(ws, part, ',')) a.widths.push_back(std::stoi(part));
      } else throw FormatError("unknown descriptor key: " + key);
    }
    a.validate();
    return a;
  }

  friend bool operator==(const DetectorArch&, const DetectorArch&) = default;
};

template <typename T>
struct DetectorCache {
  Tensor<T> stem_in, stem_act;
  RowMatrix<T> stem_col;
  std::vector<std::uint32_t> stem_pool;
  std::vector<Tensor<T>> enc_in, enc;
  std::vector<RowMatrix<T>> enc_col;
  std::vector<std::vector<std::uint32_t>> enc_pool;
  Tensor<T> bott;
  RowMatrix<T> bott_col;
  std::vector<Tensor<T>> dec_in, dec;  // dec[i] is the decoder output at level i
  std::vector<RowMatrix<T>> dec_col;
  Tensor<T> head_act;
  RowMatrix<T> head_col, out_col;
  Tensor<T> out;  // sigmoid activations, 5 channels
};

template <typename T>
class DetectorNet {
 public:
  DetectorNet() = default;
  explicit DetectorNet(DetectorArch arch) : arch_(std::move(arch)) {
    arch_.validate();
    std::size_t off = 0;
    auto add = [&](int cin, int cout) {
      Conv2d c{cin, cout, 3, off};
      off += c.param_count();
      return c;
    };
    const auto& w = arch_.widths;
    const int levels = static_cast<int>(w.size());
    stem_ = add(1, arch_.stem);
    for (int i = 0; i < levels; ++i) enc_.push_back(add(i == 0 ? arch_.stem : w[i - 1], w[i]));
    bott_ = add(w.back(), w.back());
    for (int i = 0; i + 1 < levels; ++i) dec_.push_back(add(w[i + 1] + w[i], w[i]));
    head_ = add(w[0], arch_.head);
    out_ = add(arch_.head, kNumLandmarks);
    params_.assign(off, T(0));
  }

  const DetectorArch& arch() const { return arch_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }

  void init(std::uint64_t seed, T output_bias = T(-4.6)) {
    Rng rng(seed);
    std::span<T> p(params_);
    stem_.init(p, rng);
    for (const auto& c : enc_) c.init(p, rng);
    bott_.init(p, rng);
    for (const auto& c : dec_) c.init(p, rng);
    head_.init(p, rng);
    out_.init(p, rng, output_bias);
    // Small output weights and a bias near logit(0.01) start the maps near the
    // sparse target mean; a larger start saturates the sigmoid within a few
    // Adam steps and training stalls.
    for (std::size_t i = 0; i < out_.weight_count(); ++i) p[out_.offset + i] *= T(0.1);
  }

  void check_input(const Tensor<T>& x) const {
    if (x.c != 1 || x.w != arch_.in_width || x.h != arch_.in_height)
      throw ShapeError("detector expects a 1x" + std::to_string(arch_.in_height) + "x" + std::to_string(arch_.in_width) +
                       " input, got " + std::to_string(x.c) + "x" + std::to_string(x.h) + "x" + std::to_string(x.w));
  }

  // Full forward pass keeping everything backward() needs.
  void forward(const Tensor<T>& x, DetectorCache<T>& c) const {
    check_input(x);
    std::span<const T> p(params_);
    const int levels = static_cast<int>(enc_.size());
    c.stem_in = avgpool(x, arch_.pre_pool());
    c.stem_act = stem_.forward(c.stem_in, p, c.stem_col);
    relu_inplace(c.stem_act);
    Tensor<T> cur = arch_.d_ds >= 2 ? maxpool2(c.stem_act, c.stem_pool) : c.stem_act;

    c.enc_in.resize(levels);
    c.enc.resize(levels);
    c.enc_col.resize(levels);
    c.enc_pool.resize(levels);
    for (int i = 0; i < levels; ++i) {
      c.enc_in[i] = i == 0 ? std::move(cur) : maxpool2(c.enc[i - 1], c.enc_pool[i]);
      c.enc[i] = enc_[i].forward(c.enc_in[i], p, c.enc_col[i]);
      relu_inplace(c.enc[i]);
    }
    c.bott = bott_.forward(c.enc[levels - 1], p, c.bott_col);
    relu_inplace(c.bott);

    c.dec_in.resize(levels);
    c.dec.resize(levels);
    c.dec_col.resize(levels);
    const Tensor<T>* below = &c.bott;
    for (int i = levels - 2; i >= 0; --i) {
      c.dec_in[i] = concat_channels(upsample2_to(*below, c.enc[i].h, c.enc[i].w), c.enc[i]);
      c.dec[i] = dec_[i].forward(c.dec_in[i], p, c.dec_col[i]);
      relu_inplace(c.dec[i]);
      below = &c.dec[i];
    }
    c.head_act = head_.forward(*below, p, c.head_col);
    relu_inplace(c.head_act);
    c.out = out_.forward(c.head_act, p, c.out_col);
    for (auto& v : c.out.data) v = sigmoid(v);
  }

  // Accumulates dLoss/dparams into `grads` given dLoss/d(sigmoid output).
  void backward(const DetectorCache<T>& c, const Tensor<T>& gout, std::span<T> grads) const {
    std::span<const T> p(params_);
    const int levels = static_cast<int>(enc_.size());
    Tensor<T> g = gout;
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= c.out.data[i] * (T(1) - c.out.data[i]);
    g = out_.backward(c.head_act.h, c.head_act.w, c.out_col, g, p, grads, true);
    relu_backward_inplace(c.head_act, g);
    const Tensor<T>& top = levels >= 2 ? c.dec[0] : c.bott;
    g = head_.backward(top.h, top.w, c.head_col, g, p, grads, true);

    std::vector<Tensor<T>> g_enc(static_cast<std::size_t>(levels));
    for (int i = 0; i < levels; ++i) g_enc[i] = Tensor<T>(c.enc[i].c, c.enc[i].h, c.enc[i].w);
    for (int i = 0; i + 1 < levels; ++i) {
      relu_backward_inplace(c.dec[i], g);
      Tensor<T> g_cat = dec_[i].backward(c.dec_in[i].h, c.dec_in[i].w, c.dec_col[i], g, p, grads, true);
      const int up_channels = c.dec_in[i].c - c.enc[i].c;
      auto [g_up, g_skip] = split_channels(g_cat, up_channels);
      for (std::size_t k = 0; k < g_skip.size(); ++k) g_enc[i].data[k] += g_skip.data[k];
      const Tensor<T>& below = i + 1 < levels - 1 ? c.dec[i + 1] : c.bott;
      g = upsample2_backward(g_up, below.h, below.w);
    }
    relu_backward_inplace(c.bott, g);
    g = bott_.backward(c.bott.h, c.bott.w, c.bott_col, g, p, grads, true);
    for (std::size_t k = 0; k < g.size(); ++k) g_enc[levels - 1].data[k] += g.data[k];

    for (int i = levels - 1; i >= 0; --i) {
      relu_backward_inplace(c.enc[i], g_enc[i]);
      Tensor<T> g_in = enc_[i].backward(c.enc_in[i].h, c.enc_in[i].w, c.enc_col[i], g_enc[i], p, grads, true);
      if (i > 0) {
        Tensor<T> g_prev = maxpool2_backward(g_in, c.enc_pool[i], c.enc[i - 1].c, c.enc[i - 1].h, c.enc[i - 1].w);
        for (std::size_t k = 0; k < g_prev.size(); ++k) g_enc[i - 1].data[k] += g_prev.data[k];
      } else {
        Tensor<T> g_stem = arch_.d_ds >= 2
                               ? maxpool2_backward(g_in, c.stem_pool, c.stem_act.c, c.stem_act.h, c.stem_act.w)
                               : std::move(g_in);
        relu_backward_inplace(c.stem_act, g_stem);
        stem_.backward(c.stem_in.h, c.stem_in.w, c.stem_col, g_stem, p, grads, false);
      }
    }
  }

  Tensor<T> forward_tensor(const Tensor<T>& x) const {
    DetectorCache<T> c;
    forward(x, c);
    return std::move(c.out);
  }

  HeatmapSet forward(const Image& slice) const {
    if (slice.width() != arch_.in_width || slice.height() != arch_.in_height)
      throw ShapeError("slice is " + std::to_string(slice.width()) + "x" + std::to_string(slice.height()) +
                       ", detector expects " + std::to_string(arch_.in_width) + "x" + std::to_string(arch_.in_height));
    return to_heatmaps(forward_tensor(image_tensor<T>(slice)));
  }

  HeatmapSet to_heatmaps(const Tensor<T>& out) const {
    HeatmapSet h(out.w, out.h, arch_.d_ds);
    auto dst = h.values();
    for (std::size_t i = 0; i < out.size(); ++i) dst[i] = static_cast<float>(out.data[i]);
    return h;
  }

  template <typename U>
  DetectorNet<U> cast() const {
    DetectorNet<U> o(arch_);
    auto dst = o.params();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return o;
  }

 private:
  DetectorArch arch_;
  Conv2d stem_, bott_, head_, out_;
  std::vector<Conv2d> enc_, dec_;
  std::vector<T> params_;
};

}  // namespace usspine::nn
