#pragma once

// Frame encoder: a small stemless ResNet applied to every frame of a video
// (time folded into the batch axis), plus Fourier position bases used
// wherever coordinates are fed to attention or decoders.

#include <string>
#include <vector>

#include "module.hpp"
#include "ops.hpp"

namespace slt {

// Per-pixel spatial basis [H,W,P], P = 2 + 4*n_freq: raw coords in [-1,1]
// (pixel centers), then sin/cos(2^j * pi * u) and sin/cos(2^j * pi * v) for
// j = 0..n_freq-1.
template <typename S>
Tensor<S> fourier_basis_2d(int64_t h, int64_t w, int64_t n_freq) {
  int64_t p = 2 + 4 * n_freq;
  std::vector<S> v;
  v.reserve(static_cast<size_t>(h * w * p));
  for (int64_t y = 0; y < h; ++y) {
    double vy = 2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(h) - 1.0;
    for (int64_t x = 0; x < w; ++x) {
      double vx = 2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 1.0;
      v.push_back(static_cast<S>(vx));
      v.push_back(static_cast<S>(vy));
      double f = 3.14159265358979323846;
      for (int64_t j = 0; j < n_freq; ++j) {
        v.push_back(static_cast<S>(std::sin(f * vx)));
        v.push_back(static_cast<S>(std::cos(f * vx)));
        v.push_back(static_cast<S>(std::sin(f * vy)));
        v.push_back(static_cast<S>(std::cos(f * vy)));
        f *= 2.0;
      }
    }
  }
  return Tensor<S>::from_data({h, w, p}, std::move(v));
}

// 1-D variant [L, 1 + 2*n_freq] for time steps / row positions.
template <typename S>
Tensor<S> fourier_basis_1d(int64_t l, int64_t n_freq) {
  int64_t p = 1 + 2 * n_freq;
  std::vector<S> v;
  v.reserve(static_cast<size_t>(l * p));
  for (int64_t i = 0; i < l; ++i) {
    double t = 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(l) - 1.0;
    v.push_back(static_cast<S>(t));
    double f = 3.14159265358979323846;
    for (int64_t j = 0; j < n_freq; ++j) {
      v.push_back(static_cast<S>(std::sin(f * t)));
      v.push_back(static_cast<S>(std::cos(f * t)));
      f *= 2.0;
    }
  }
  return Tensor<S>::from_data({l, p}, std::move(v));
}

// Broadcast a [H,W,P] basis across time and append it to [T,H,W,E] features.
template <typename S>
Tensor<S> append_basis(const Tensor<S>& e, const Tensor<S>& basis) {
  check(e.rank() == 4 && basis.rank() == 3, "append_basis: rank mismatch");
  check(e.dim(1) == basis.dim(0) && e.dim(2) == basis.dim(1),
        "append_basis: spatial dims ", shape_str(e.shape()), " vs ",
        shape_str(basis.shape()));
  auto b4 = broadcast_to(
      reshape(basis, {1, basis.dim(0), basis.dim(1), basis.dim(2)}),
      {e.dim(0), basis.dim(0), basis.dim(1), basis.dim(2)});
  return concat<S>({e, b4}, 3);
}

struct EncoderConfig {
  double width_factor = 1.0;
  std::vector<int64_t> base_channels{64, 128, 256, 512};
  std::vector<int64_t> blocks{2, 2, 2, 2};
  std::vector<int64_t> strides{2, 2, 2, 1};

  std::vector<int64_t> channels() const {
    std::vector<int64_t> out;
    for (int64_t c : base_channels)
      out.push_back(std::max<int64_t>(
          1, static_cast<int64_t>(std::lround(static_cast<double>(c) * width_factor))));
    return out;
  }
};

// Residual block: [conv3x3 -> layernorm(channels) -> relu] x2 plus a skip
// (identity, or 1x1 strided projection when shape changes).
template <typename S>
struct ResBlock {
  Tensor<S> w1, w2, proj;  // proj undefined for identity skips
  int64_t stride = 1;
  bool has_proj = false;

  ResBlock() = default;
  ResBlock(ParamStore<S>& ps, const std::string& prefix, int64_t cin,
           int64_t cout, int64_t stride_, Rng& rng)
      : stride(stride_) {
    w1 = ps.create_gaussian(prefix + ".conv1.w", {3, 3, cin, cout}, rng);
    w2 = ps.create_gaussian(prefix + ".conv2.w", {3, 3, cout, cout}, rng);
    has_proj = cin != cout || stride != 1;
    if (has_proj)
      proj = ps.create_gaussian(prefix + ".proj.w", {1, 1, cin, cout}, rng);
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    auto h = relu(layer_norm(conv2d(x, w1, stride)));
    h = relu(layer_norm(conv2d(h, w2, 1)));
    auto skip = has_proj ? conv2d(x, proj, stride) : x;
    return add(h, skip);
  }
};

template <typename S>
struct ResNetEncoder {
  std::vector<ResBlock<S>> blocks;
  int64_t out_channels = 0;
  mutable int64_t call_count = 0;  // how many times encode ran

  ResNetEncoder() = default;
  ResNetEncoder(ParamStore<S>& ps, const std::string& prefix,
                const EncoderConfig& cfg, Rng& rng) {
    auto ch = cfg.channels();
    check(ch.size() == cfg.blocks.size() && ch.size() == cfg.strides.size(),
          "encoder: stage spec lengths differ");
    int64_t cin = 3;
    for (size_t s = 0; s < ch.size(); ++s) {
      for (int64_t b = 0; b < cfg.blocks[s]; ++b) {
        int64_t stride = b == 0 ? cfg.strides[s] : 1;
        blocks.emplace_back(ps,
                            prefix + ".s" + std::to_string(s) + ".b" +
                                std::to_string(b),
                            cin, ch[s], stride, rng);
        cin = ch[s];
      }
    }
    out_channels = cin;
  }

  // x: [T,H,W,3] -> [T,H',W',E]; frames share weights, time rides the batch
  // axis so no information crosses time steps here.
  Tensor<S> operator()(const Tensor<S>& x) const {
    check(x.rank() == 4 && x.dim(3) == 3, "encoder expects [T,H,W,3], got ",
          shape_str(x.shape()));
    ++call_count;
    Tensor<S> h = x;
    for (const auto& b : blocks) h = b(h);
    return h;
  }
};

}  // namespace slt
