#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bevssl/geometry.hpp"
#include "bevssl/param_set.hpp"
#include "bevssl/rng.hpp"
#include "bevssl/synth_world.hpp"

namespace bevssl {

struct ModelConfig {
  std::size_t in_channels = kObsChannels;
  std::vector<std::size_t> encoder_widths{16, 32, 64};
  std::vector<std::size_t> encoder_strides{2, 1, 1};
  std::size_t encoder_kernel = 3;
  std::size_t bev_channels = 64;         // z_bev
  std::size_t decoder_mid_channels = 32; // bottleneck width
  std::size_t decoder_channels = 64;     // z~_bev
  std::size_t decoder_kernel = 3;
  std::size_t num_classes = kNumClasses;

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (std::size_t v : encoder_strides) s *= v;
    return s;
  }

  void validate() const {
    if (num_classes != kNumClasses) throw ConfigError("model: output classes are fixed at 3");
    if (in_channels == 0 || bev_channels == 0 || decoder_mid_channels == 0 || decoder_channels == 0) {
      throw ConfigError("model: all widths must be positive");
    }
    if (encoder_widths.empty() || encoder_widths.size() != encoder_strides.size()) {
      throw ConfigError("model: encoder widths and strides must be non-empty and of equal length");
    }
    for (std::size_t w : encoder_widths) {
      if (w == 0) throw ConfigError("model: all widths must be positive");
    }
    for (std::size_t s : encoder_strides) {
      if (s == 0) throw ConfigError("model: strides must be positive");
    }
    if (encoder_kernel % 2 == 0 || decoder_kernel % 2 == 0) throw ConfigError("model: kernel sizes must be odd");
  }

  // Small network used by the fast test and benchmark presets.
  static ModelConfig tiny() {
    ModelConfig c;
    c.encoder_widths = {8, 16, 16};
    c.bev_channels = 16;
    c.decoder_mid_channels = 16;
    c.decoder_channels = 16;
    return c;
  }
};

struct ForwardTrace {
  Tensor z_pv;      // encoder output, reduced resolution
  Tensor z_bev;     // after the lift, before any BEV dropout (early tap)
  Tensor z_dec;     // decoder output (late tap)
  Tensor logits;    // [1, 3, rows, cols]
  Tensor probs;     // sigmoid(logits)
};

// Layer names in registration order.
inline ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamSet ps;
  Rng rng = Rng::stream(seed, {0x1417});
  auto weight = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    ps.add(name, Tensor(std::move(shape), std::move(v)));
  };
  auto bias = [&](const std::string& name, std::size_t n) { ps.add(name, Tensor::zeros({n})); };

  const std::size_t k = cfg.encoder_kernel, kd = cfg.decoder_kernel, s = cfg.total_stride();
  std::size_t c = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
    const std::string p = "enc" + std::to_string(i);
    weight(p + ".w", {cfg.encoder_widths[i], c, k, k}, c * k * k);
    bias(p + ".b", cfg.encoder_widths[i]);
    c = cfg.encoder_widths[i];
  }
  // Transposed convolution: weight [in, out, s, s], fan-in counted per output.
  weight("lift.w", {c, cfg.bev_channels, s, s}, c);
  bias("lift.b", cfg.bev_channels);
  weight("dec.reduce.w", {cfg.decoder_mid_channels, cfg.bev_channels, 1, 1}, cfg.bev_channels);
  weight("dec.spatial.w", {cfg.decoder_mid_channels, cfg.decoder_mid_channels, kd, kd},
         cfg.decoder_mid_channels * kd * kd);
  weight("dec.expand.w", {cfg.decoder_channels, cfg.decoder_mid_channels, 1, 1}, cfg.decoder_mid_channels);
  bias("dec.expand.b", cfg.decoder_channels);
  if (cfg.decoder_channels != cfg.bev_channels) {
    weight("dec.skip.w", {cfg.decoder_channels, cfg.bev_channels, 1, 1}, cfg.bev_channels);
  }
  weight("cls.w", {cfg.num_classes, cfg.decoder_channels, 1, 1}, cfg.decoder_channels);
  bias("cls.b", cfg.num_classes);
  return ps;
}

// Observation raster as a [1, C, rows, cols] tensor.
inline Tensor observation_tensor(const Raster& obs) {
  return Tensor({1, obs.channels, obs.rows(), obs.cols()}, obs.values);
}

// f_cls: 1x1 convolution to logits, then the sigmoid.
inline void classify(const Bindings& b, const Tensor& z_dec, ForwardTrace& t) {
  t.logits = op::conv2d(z_dec, b["cls.w"], b["cls.b"]);
  t.probs = op::sigmoid(t.logits);
}

// f_enc -> f_lift -> [BEV dropout] -> f_dec -> f_cls. The optional mask has
// one entry per grid cell; non-zero entries zero z_bev across all channels.
inline ForwardTrace forward(const ModelConfig& cfg, const Bindings& b, const Tensor& x,
                            const std::vector<std::uint8_t>* bev_drop_mask = nullptr) {
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != cfg.in_channels) {
    throw ConfigError("model forward: expected input [1, " + std::to_string(cfg.in_channels) + ", H, W], got " +
                      shape_str(x.shape()));
  }
  const std::size_t s = cfg.total_stride();
  if (x.dim(2) % s != 0 || x.dim(3) % s != 0) {
    throw ConfigError("model forward: grid " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                      " not divisible by encoder stride " + std::to_string(s));
  }
  if (bev_drop_mask && bev_drop_mask->size() != x.dim(2) * x.dim(3)) {
    throw ConfigError("model forward: BEV dropout mask has " + std::to_string(bev_drop_mask->size()) +
                      " cells, grid has " + std::to_string(x.dim(2) * x.dim(3)));
  }
  ForwardTrace t;
  Tensor h = x;
  const std::size_t pad = cfg.encoder_kernel / 2;
  for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
    const std::string p = "enc" + std::to_string(i);
    h = op::relu(op::conv2d(h, b[p + ".w"], b[p + ".b"], cfg.encoder_strides[i], pad));
  }
  t.z_pv = h;
  t.z_bev = op::relu(op::conv_transpose2d(h, b["lift.w"], b["lift.b"], s));
  Tensor bev = t.z_bev;
  if (bev_drop_mask) {
    bool any = false;
    for (auto m : *bev_drop_mask) any = any || m;
    if (any) bev = op::masked_fill(bev, *bev_drop_mask);
  }
  // Bottleneck with a residual path. Only the expansion carries a bias, so
  // all-zero BEV features give a spatially constant output.
  const Tensor r = op::relu(op::conv2d(bev, b["dec.reduce.w"]));
  const Tensor sp = op::relu(op::conv2d(r, b["dec.spatial.w"], {}, 1, cfg.decoder_kernel / 2));
  const Tensor skip = b.contains("dec.skip.w") ? op::conv2d(bev, b["dec.skip.w"]) : bev;
  t.z_dec = op::relu(op::add(op::conv2d(sp, b["dec.expand.w"], b["dec.expand.b"]), skip));
  classify(b, t.z_dec, t);
  return t;
}

inline ForwardTrace forward(const ModelConfig& cfg, const Bindings& b, const Raster& obs,
                            const std::vector<std::uint8_t>* bev_drop_mask = nullptr) {
  if (obs.channels != cfg.in_channels) {
    throw ConfigError("model forward: observation has " + std::to_string(obs.channels) + " channels, model expects " +
                      std::to_string(cfg.in_channels));
  }
  return forward(cfg, b, observation_tensor(obs), bev_drop_mask);
}

}  // namespace bevssl
