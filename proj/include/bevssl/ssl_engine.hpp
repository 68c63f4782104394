#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bevssl/geometry.hpp"
#include "bevssl/model.hpp"
#include "bevssl/param_set.hpp"
#include "bevssl/rng.hpp"

namespace bevssl {

// theta_T <- alpha theta_T + (1 - alpha) theta_S, parameter by parameter.
// Optimizer state of either set is left alone.
inline void ema_update(ParamSet& teacher, const ParamSet& student, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ema_update: keep rate must be in [0, 1]");
  if (teacher.size() != student.size()) throw ContractError("ema_update: teacher and student differ in parameter count");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Param& t = teacher[i];
    const Param& s = student[i];
    if (t.name != s.name || t.value.shape() != s.value.shape()) {
      throw ContractError("ema_update: parameter mismatch '" + t.name + "' vs '" + s.name + "'");
    }
    std::vector<double> v(t.value.size());
    const auto tv = t.value.values();
    const auto sv = s.value.values();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = alpha * tv[k] + (1.0 - alpha) * sv[k];
    t.value = Tensor(t.value.shape(), std::move(v));
  }
}

inline double logit(double p) {
  const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(q / (1.0 - q));
}

// Temperature scaling of logits.
inline double sharpen(double z, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("sharpen: temperature must be positive");
  return z / temperature;
}

inline std::vector<double> sharpen(const std::vector<double>& z, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("sharpen: temperature must be positive");
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] / temperature;
  return out;
}

enum class FusionMode { none, probs, feats };

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "none") return FusionMode::none;
  if (s == "probs") return FusionMode::probs;
  if (s == "feats") return FusionMode::feats;
  throw ConfigError("unknown fusion mode '" + s + "' (expected none, probs or feats)");
}

inline const char* fusion_mode_name(FusionMode m) {
  return m == FusionMode::none ? "none" : m == FusionMode::probs ? "probs" : "feats";
}

struct FusionConfig {
  FusionMode mode = FusionMode::probs;
  std::size_t n_extra = 2;
  double max_range = 30.0;         // m
  bool along_trajectory = true;    // otherwise straight-line distance
  WarpMode feature_warp = WarpMode::nearest;
};

struct PseudoLabelConfig {
  std::optional<double> threshold = 0.6;
  std::optional<double> temperature;
  bool hard = false;
  bool two_sided = true;  // confidence max(p, 1-p); otherwise p alone
  FusionConfig fusion;

  void validate() const {
    if (threshold && !(*threshold >= 0.5 && *threshold < 1.0)) throw ConfigError("pseudo labels: threshold must be in [0.5, 1)");
    if (temperature && !(*temperature > 0.0)) throw ConfigError("pseudo labels: temperature must be positive");
    if (!(fusion.max_range > 0.0)) throw ConfigError("pseudo labels: fusion max_range must be positive");
  }
};

struct PseudoLabelBundle {
  Raster targets;                  // 3 channels
  std::vector<std::uint8_t> mask;  // 3 x cells, non-zero = supervise
  std::vector<std::int32_t> provenance;  // 3 x cells, 0 = current frame, i + 1 = extra frame i
  std::size_t kept = 0;
};

// phi: confidence thresholding on the (fused) probabilities, then optional
// sharpening in logit space, then optional binarisation at 0.5.
inline PseudoLabelBundle make_pseudo_labels(const Raster& probs, const PseudoLabelConfig& cfg,
                                            std::vector<std::int32_t> provenance = {}) {
  cfg.validate();
  const std::size_t n = probs.cells();
  PseudoLabelBundle b{Raster(probs.spec, probs.channels, 0.0), std::vector<std::uint8_t>(probs.channels * n, 0),
                      provenance.empty() ? std::vector<std::int32_t>(probs.channels * n, 0) : std::move(provenance), 0};
  b.targets.valid = probs.valid;
  for (std::size_t c = 0; c < probs.channels; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = c * n + i;
      const double p = probs.values[k];
      if (!probs.valid[i]) continue;
      const double conf = cfg.two_sided ? std::max(p, 1.0 - p) : p;
      const bool keep = !cfg.threshold || conf >= *cfg.threshold;
      double t = p;
      if (cfg.temperature) t = 1.0 / (1.0 + std::exp(-sharpen(logit(p), *cfg.temperature)));
      if (cfg.hard) t = p >= 0.5 ? 1.0 : 0.0;
      b.targets.values[k] = t;
      b.mask[k] = keep ? 1 : 0;
      b.kept += keep ? 1 : 0;
    }
  }
  return b;
}

struct FusionPick {
  std::size_t frame = 0;
  Pose2 relative;         // pose of the picked frame in the current frame
  double drawn = 0.0;     // sampled distance, signed (negative = past)
};

// Draws n_extra distances uniformly in (0, max_range], each towards the past
// or the future, and picks the frame nearest to each. Frames sharing a
// position (stationary spans) count once; a frame is reused only when there
// are fewer candidates than draws.
inline std::vector<FusionPick> select_fusion_frames(const std::vector<Pose2>& poses, std::size_t current,
                                                    std::size_t n_extra, double max_range, Rng& rng,
                                                    bool along_trajectory = true) {
  if (current >= poses.size()) throw ContractError("select_fusion_frames: current frame out of range");
  std::vector<double> s(poses.size(), 0.0);
  for (std::size_t i = 1; i < poses.size(); ++i) {
    s[i] = s[i - 1] + std::hypot(poses[i].x - poses[i - 1].x, poses[i].y - poses[i - 1].y);
  }
  auto offset = [&](std::size_t j) {
    if (along_trajectory) return s[j] - s[current];
    const double d = std::hypot(poses[j].x - poses[current].x, poses[j].y - poses[current].y);
    return j < current ? -d : d;
  };
  // One representative per stationary span: the member closest to `current`.
  struct Candidate {
    std::size_t frame;
    double offset;
  };
  std::vector<Candidate> cands;
  for (std::size_t j = 0; j < poses.size(); ++j) {
    if (j == current) continue;
    const double o = offset(j);
    if (std::fabs(o) > max_range) continue;
    bool merged = false;
    for (Candidate& c : cands) {
      if (s[c.frame] == s[j]) {
        const auto dist = [&](std::size_t f) { return f > current ? f - current : current - f; };
        if (dist(j) < dist(c.frame)) c = {j, o};
        merged = true;
        break;
      }
    }
    if (!merged) cands.push_back({j, o});
  }
  std::vector<FusionPick> picks;
  if (cands.empty()) return picks;
  std::vector<bool> used(cands.size(), false);
  std::size_t n_used = 0;
  for (std::size_t k = 0; k < n_extra; ++k) {
    const double d = max_range * (1.0 - rng.uniform());
    const double target = rng.bernoulli(0.5) ? d : -d;
    if (n_used == cands.size()) {
      std::fill(used.begin(), used.end(), false);
      n_used = 0;
    }
    std::size_t best = cands.size();
    double best_err = 0.0;
    for (std::size_t c = 0; c < cands.size(); ++c) {
      if (used[c]) continue;
      const double err = std::fabs(cands[c].offset - target);
      if (best == cands.size() || err < best_err) {
        best = c;
        best_err = err;
      }
    }
    used[best] = true;
    ++n_used;
    const std::size_t f = cands[best].frame;
    picks.push_back({f, relative_pose(poses[current], poses[f]), target});
  }
  return picks;
}

// Copies a [1, C, rows, cols] tensor into a fully valid raster.
inline Raster tensor_to_raster(const Tensor& t, const GridSpec& spec) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(2) != spec.rows() || t.dim(3) != spec.cols()) {
    throw ConfigError("tensor_to_raster: " + shape_str(t.shape()) + " does not fit the grid");
  }
  Raster r(spec, t.dim(1));
  r.values.assign(t.values().begin(), t.values().end());
  return r;
}

struct FusedTeacher {
  Raster probs;  // validity = cells covered by at least one frame
  std::vector<std::int32_t> provenance;
  Tensor features;  // fused late features (feats mode only)
};

// Probability fusion: each extra frame's probabilities, given with the pose
// of that frame relative to the current one, are warped (nearest) into the
// current frame. Per cell and class the most confident prediction
// (max |p - 0.5|) wins; ties keep the current frame, then the lower index.
inline FusedTeacher fuse_probs(const Raster& current, const std::vector<std::pair<Raster, Pose2>>& extras) {
  const std::size_t n = current.cells(), ch = current.channels;
  FusedTeacher f{current, std::vector<std::int32_t>(ch * n, 0), {}};
  std::vector<double> best(ch * n, -1.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!current.valid[i]) continue;
    for (std::size_t c = 0; c < ch; ++c) best[c * n + i] = std::fabs(current.values[c * n + i] - 0.5);
  }
  const Pose2 identity;
  for (std::size_t e = 0; e < extras.size(); ++e) {
    const Raster w = warp_raster(extras[e].first, extras[e].second, identity, WarpMode::nearest);
    for (std::size_t i = 0; i < n; ++i) {
      if (!w.valid[i]) continue;
      f.probs.valid[i] = 1;
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t k = c * n + i;
        const double conf = std::fabs(w.values[k] - 0.5);
        if (conf > best[k]) {
          best[k] = conf;
          f.probs.values[k] = w.values[k];
          f.provenance[k] = static_cast<std::int32_t>(e + 1);
        }
      }
    }
  }
  return f;
}

// Feature fusion: late features of every frame are warped into the current
// frame and averaged over the valid contributors, then the teacher's
// classification head is applied to the average.
inline FusedTeacher fuse_features(const ModelConfig& cfg, const Bindings& teacher, const Raster& current_feats,
                                  const std::vector<std::pair<Raster, Pose2>>& extras,
                                  WarpMode mode = WarpMode::nearest) {
  (void)cfg;
  const std::size_t n = current_feats.cells(), ch = current_feats.channels;
  std::vector<double> sum(ch * n, 0.0);
  std::vector<double> count(n, 0.0);
  auto add = [&](const Raster& r) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!r.valid[i]) continue;
      count[i] += 1.0;
      for (std::size_t c = 0; c < ch; ++c) sum[c * n + i] += r.values[c * n + i];
    }
  };
  add(current_feats);
  const Pose2 identity;
  for (const auto& [feats, rel] : extras) add(warp_raster(feats, rel, identity, mode));
  std::vector<double> avg(ch * n, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < n; ++i) avg[c * n + i] = count[i] > 0.0 ? sum[c * n + i] / count[i] : 0.0;
  }
  const GridSpec& g = current_feats.spec;
  FusedTeacher f;
  f.features = Tensor({1, ch, g.rows(), g.cols()}, std::move(avg));
  ForwardTrace t;
  classify(teacher, f.features, t);
  f.probs = tensor_to_raster(t.probs, g);
  for (std::size_t i = 0; i < n; ++i) f.probs.valid[i] = count[i] > 0.0;
  f.provenance.assign(kNumClasses * n, 0);
  return f;
}

}  // namespace bevssl
