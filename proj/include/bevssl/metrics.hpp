#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bevssl/error.hpp"
#include "bevssl/geometry.hpp"
#include "bevssl/synth_world.hpp"

namespace bevssl {

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
};

struct Metrics {
  std::array<ClassCounts, kNumClasses> counts{};
  std::array<double, kNumClasses> iou{};
  std::array<bool, kNumClasses> present{};  // false when the class has an empty union
  double miou = 0.0;
  std::vector<std::string> warnings;
  std::string split;
  long step = 0;
};

// Accumulates per-class confusion counts over the valid cells of many
// frames; IoU is taken once over the whole split.
class IouAccumulator {
 public:
  explicit IouAccumulator(double binarize_at = 0.5) : threshold_(binarize_at) {}

  void add(const Raster& probs, const Raster& gt) {
    if (probs.channels != kNumClasses || gt.channels != kNumClasses || !(probs.spec == gt.spec)) {
      throw ConfigError("compute_iou: prediction and ground truth must be 3-channel rasters on the same grid");
    }
    const std::size_t n = probs.cells();
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      ClassCounts& k = counts_[c];
      for (std::size_t i = 0; i < n; ++i) {
        if (!probs.valid[i] || !gt.valid[i]) continue;
        const bool p = probs.values[c * n + i] >= threshold_;
        const bool y = gt.values[c * n + i] >= 0.5;
        k.tp += p && y;
        k.fp += p && !y;
        k.fn += !p && y;
      }
    }
  }

  Metrics finish() const {
    Metrics m;
    m.counts = counts_;
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const ClassCounts& k = counts_[c];
      const std::uint64_t uni = k.tp + k.fp + k.fn;
      if (uni == 0) {
        m.present[c] = false;
        m.iou[c] = 0.0;
        m.warnings.push_back(std::string("class ") + kClassNames[c] + " absent from predictions and ground truth");
        continue;
      }
      m.present[c] = true;
      m.iou[c] = static_cast<double>(k.tp) / static_cast<double>(uni);
      sum += m.iou[c];
      ++present;
    }
    m.miou = present ? sum / static_cast<double>(present) : 0.0;
    return m;
  }

 private:
  double threshold_;
  std::array<ClassCounts, kNumClasses> counts_{};
};

inline Metrics compute_iou(const Raster& probs, const Raster& gt, double binarize_at = 0.5) {
  IouAccumulator acc(binarize_at);
  acc.add(probs, gt);
  return acc.finish();
}

}  // namespace bevssl
