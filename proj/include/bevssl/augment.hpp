#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "bevssl/geometry.hpp"
#include "bevssl/losses.hpp"
#include "bevssl/rng.hpp"
#include "bevssl/synth_world.hpp"

namespace bevssl {

struct AugmentConfig {
  bool photometric = true;
  double gain_min = 0.8;
  double gain_max = 1.2;
  double bias_min = -0.1;
  double bias_max = 0.1;
  double swap_probability = 0.2;

  bool cutout = true;
  double cutout_fraction = 0.25;

  bool camdrop = false;
  std::size_t camdrop_count = 1;

  bool bevdrop = true;
  double bevdrop_rate = 0.5;

  void validate() const {
    if (gain_min > gain_max || bias_min > bias_max) throw ConfigError("augment: empty jitter range");
    if (swap_probability < 0.0 || swap_probability > 1.0) throw ConfigError("augment: swap_probability must be in [0, 1]");
    if (!(cutout_fraction >= 0.0 && cutout_fraction < 1.0)) throw ConfigError("augment: cutout_fraction must be in [0, 1)");
    if (!(bevdrop_rate >= 0.0 && bevdrop_rate < 1.0)) throw ConfigError("augment: bevdrop_rate must be in [0, 1)");
    if (camdrop && (camdrop_count < 1 || camdrop_count >= kNumSectors)) {
      throw ConfigError("augment: camdrop_count must be in [1, 5]");
    }
  }

  static AugmentConfig none() {
    AugmentConfig c;
    c.photometric = c.cutout = c.camdrop = c.bevdrop = false;
    return c;
  }
};

// Per-channel gain and bias on the evidence and clutter channels, clamped to
// [0, 1]; with the swap probability the three evidence channels are permuted.
// The range channel is left alone.
inline Raster photometric(const Raster& obs, Rng& rng, const AugmentConfig& cfg) {
  Raster out = obs;
  const std::size_t n = obs.cells();
  if (rng.bernoulli(cfg.swap_probability)) {
    std::array<std::size_t, kNumClasses> perm{0, 1, 2};
    for (std::size_t i = kNumClasses; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    for (std::size_t c = 0; c < kNumClasses; ++c) std::copy_n(obs.channel(perm[c]), n, out.channel(c));
  }
  for (std::size_t c = 0; c < kRangeChannel && c < obs.channels; ++c) {
    const double gain = rng.uniform(cfg.gain_min, cfg.gain_max);
    const double bias = rng.uniform(cfg.bias_min, cfg.bias_max);
    double* v = out.channel(c);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::clamp(gain * v[i] + bias, 0.0, 1.0);
  }
  return out;
}

struct CutoutResult {
  Raster obs;
  std::vector<std::uint8_t> zeroed;  // per cell
  std::size_t zeroed_count = 0;
};

// Largest rectangle side lengths used by cutout.
inline std::pair<std::size_t, std::size_t> cutout_max_rect(const GridSpec& g) {
  return {std::max<std::size_t>(1, g.rows() / 4), std::max<std::size_t>(1, g.cols() / 4)};
}

// Zeroes random axis-aligned rectangles in every channel until at least
// `fraction` of the cells are covered. Produces no loss mask.
inline CutoutResult cutout(const Raster& obs, Rng& rng, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("cutout: fraction must be in [0, 1)");
  CutoutResult r{obs, std::vector<std::uint8_t>(obs.cells(), 0), 0};
  const std::size_t rows = obs.rows(), cols = obs.cols();
  const auto target = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(rows * cols)));
  const auto [max_h, max_w] = cutout_max_rect(obs.spec);
  while (r.zeroed_count < target) {
    const std::size_t h = 1 + rng.index(max_h), w = 1 + rng.index(max_w);
    const std::size_t r0 = rng.index(rows - h + 1), c0 = rng.index(cols - w + 1);
    for (std::size_t i = r0; i < r0 + h; ++i) {
      for (std::size_t j = c0; j < c0 + w; ++j) {
        const std::size_t cell = i * cols + j;
        if (r.zeroed[cell]) continue;
        r.zeroed[cell] = 1;
        ++r.zeroed_count;
        for (std::size_t c = 0; c < obs.channels; ++c) r.obs.channel(c)[cell] = 0.0;
      }
    }
  }
  return r;
}

struct CamdropResult {
  Raster obs;
  LossMask fov_mask;  // kNumClasses x cells, 0 inside dropped sectors
  std::vector<std::size_t> sectors;
};

// Drops n distinct camera sectors: their cells are zeroed in every channel
// and excluded from the loss for every class.
inline CamdropResult camdrop(const Raster& obs, const std::vector<std::uint8_t>& sector_map, Rng& rng, std::size_t n_drop) {
  if (n_drop < 1 || n_drop >= kNumSectors) throw ConfigError("camdrop: n_drop must be in [1, 5]");
  if (sector_map.size() != obs.cells()) throw ConfigError("camdrop: sector map does not match the grid");
  std::array<std::size_t, kNumSectors> order{0, 1, 2, 3, 4, 5};
  for (std::size_t i = 0; i < n_drop; ++i) std::swap(order[i], order[i + rng.index(kNumSectors - i)]);
  std::array<bool, kNumSectors> dropped{};
  CamdropResult r{obs, LossMask(kNumClasses * obs.cells(), 1), {}};
  for (std::size_t i = 0; i < n_drop; ++i) {
    dropped[order[i]] = true;
    r.sectors.push_back(order[i]);
  }
  std::sort(r.sectors.begin(), r.sectors.end());
  const std::size_t n = obs.cells();
  for (std::size_t cell = 0; cell < n; ++cell) {
    if (!dropped[sector_map[cell]]) continue;
    for (std::size_t c = 0; c < obs.channels; ++c) r.obs.channel(c)[cell] = 0.0;
    for (std::size_t k = 0; k < kNumClasses; ++k) r.fov_mask[k * n + cell] = 0;
  }
  return r;
}

// Independent per-cell drop decisions for BEV feature dropout.
inline std::vector<std::uint8_t> bevdrop_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("bevdrop: rate must be in [0, 1)");
  std::vector<std::uint8_t> m(rows * cols);
  for (auto& v : m) v = rng.bernoulli(rate) ? 1 : 0;
  return m;
}

// The student's strong view of one sample.
struct StrongView {
  Raster obs;
  LossMask fov_mask;                   // empty when CamDrop is off
  std::vector<std::uint8_t> bev_drop;  // empty when BEVDrop is off
};

inline StrongView strong_view(const Raster& obs, const std::vector<std::uint8_t>& sector_map, Rng& rng,
                              const AugmentConfig& cfg) {
  StrongView v{obs, {}, {}};
  if (cfg.photometric) v.obs = photometric(v.obs, rng, cfg);
  if (cfg.cutout && cfg.cutout_fraction > 0.0) v.obs = cutout(v.obs, rng, cfg.cutout_fraction).obs;
  if (cfg.camdrop) {
    CamdropResult c = camdrop(v.obs, sector_map, rng, cfg.camdrop_count);
    v.obs = std::move(c.obs);
    v.fov_mask = std::move(c.fov_mask);
  }
  if (cfg.bevdrop && cfg.bevdrop_rate > 0.0) v.bev_drop = bevdrop_mask(obs.rows(), obs.cols(), cfg.bevdrop_rate, rng);
  return v;
}

}  // namespace bevssl
