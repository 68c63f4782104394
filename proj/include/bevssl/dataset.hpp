#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bevssl/raster_io.hpp"
#include "bevssl/rng.hpp"
#include "bevssl/synth_world.hpp"

namespace bevssl {

struct Sample {
  std::size_t sequence_id = 0;
  std::size_t frame = 0;
  Pose2 pose;
  Raster observation;
  Raster gt;
  std::vector<std::uint8_t> sector_map;
};

struct Sequence {
  std::size_t id = 0;
  std::uint64_t world_id = 0;
  std::string style;
  std::vector<Sample> frames;
};

struct DatasetConfig {
  std::string style = "city_A";
  std::size_t n_sequences = 40;
  SequenceParams sequence{10, 0.0, 10.0, 1.0, 0.15};
  double style_jitter = 0.25;  // per-world multiplicative spread of every style knob
  Extent extent{-150.0, -150.0, 150.0, 150.0};
  std::uint64_t seed = 0;
  std::size_t first_id = 0;    // id of the first generated sequence

  void validate() const {
    StyleParams::preset(style).validate();
    if (n_sequences == 0) throw ConfigError("dataset: n_sequences must be positive");
    if (sequence.n_frames == 0) throw ConfigError("dataset: frames per sequence must be positive");
    if (style_jitter < 0.0 || style_jitter >= 1.0) throw ConfigError("dataset: style_jitter must be in [0, 1)");
  }
};

// One fresh world per sequence; frame observations get their own noise seeds.
inline Sequence generate_sequence_samples(const DatasetConfig& cfg, const GridSpec& spec, std::size_t index) {
  const std::size_t id = cfg.first_id + index;
  const std::uint64_t world_seed = Rng::mix(cfg.seed, {0xD5, static_cast<std::uint64_t>(id)});
  Rng jitter = Rng::stream(world_seed, {0x1});
  const StyleParams style = jitter_style(StyleParams::preset(cfg.style), jitter, cfg.style_jitter);
  const WorldMap world = generate_world(world_seed, style, cfg.extent);
  Sequence seq;
  seq.id = id;
  seq.world_id = world_seed;
  seq.style = cfg.style;
  for (const FramePose& fp : generate_sequence(world, Rng::mix(world_seed, {0x2}), cfg.sequence)) {
    Sample s;
    s.sequence_id = id;
    s.frame = fp.frame;
    s.pose = fp.pose;
    s.gt = rasterize_gt(world, fp.pose, spec);
    Observation obs = render_observation(world, fp.pose, spec, Rng::mix(world_seed, {0x3, fp.frame}));
    s.observation = std::move(obs.raster);
    s.sector_map = std::move(obs.sectors);
    seq.frames.push_back(std::move(s));
  }
  return seq;
}

inline std::vector<Sequence> generate_dataset(const DatasetConfig& cfg, const GridSpec& spec) {
  cfg.validate();
  spec.validate();
  std::vector<Sequence> out;
  out.reserve(cfg.n_sequences);
  for (std::size_t i = 0; i < cfg.n_sequences; ++i) out.push_back(generate_sequence_samples(cfg, spec, i));
  return out;
}

struct DatasetSplit {
  std::vector<std::size_t> labelled;
  std::vector<std::size_t> unlabelled;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  double label_utilisation = 1.0;
};

struct SplitConfig {
  double utilisation = 0.1;
  std::size_t n_val = 4;
  std::size_t n_test = 8;
};

// Held-out sets take whole worlds, so no world contributes to both training
// and evaluation. Remaining sequences are training data, of which
// round(utilisation * n_train) keep their labels.
inline DatasetSplit make_splits(const std::vector<std::pair<std::size_t, std::uint64_t>>& sequence_worlds,
                                const SplitConfig& cfg, std::uint64_t seed) {
  if (!(cfg.utilisation > 0.0 && cfg.utilisation <= 1.0)) {
    throw ConfigError("make_splits: utilisation must be in (0, 1], got " + std::to_string(cfg.utilisation));
  }
  std::map<std::uint64_t, std::vector<std::size_t>> by_world;
  for (const auto& [id, world] : sequence_worlds) by_world[world].push_back(id);
  std::vector<std::uint64_t> worlds;
  for (const auto& kv : by_world) worlds.push_back(kv.first);
  Rng rng = Rng::stream(seed, {0x5B1});
  for (std::size_t i = worlds.size(); i > 1; --i) std::swap(worlds[i - 1], worlds[rng.index(i)]);

  DatasetSplit split;
  split.label_utilisation = cfg.utilisation;
  std::vector<std::size_t> train;
  for (std::uint64_t w : worlds) {
    const auto& ids = by_world[w];
    auto& dst = split.test.size() < cfg.n_test ? split.test : split.val.size() < cfg.n_val ? split.val : train;
    dst.insert(dst.end(), ids.begin(), ids.end());
  }
  if (split.test.size() < cfg.n_test || split.val.size() < cfg.n_val || train.empty()) {
    throw ConfigError("make_splits: not enough sequences for " + std::to_string(cfg.n_test) + " test, " +
                      std::to_string(cfg.n_val) + " validation and at least one training sequence");
  }
  for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[rng.index(i)]);
  const auto n_lab = static_cast<std::size_t>(std::lround(cfg.utilisation * static_cast<double>(train.size())));
  if (n_lab == 0) throw ConfigError("make_splits: utilisation leaves no labelled sequence");
  split.labelled.assign(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_lab));
  split.unlabelled.assign(train.begin() + static_cast<std::ptrdiff_t>(n_lab), train.end());
  for (auto* v : {&split.labelled, &split.unlabelled, &split.val, &split.test}) std::sort(v->begin(), v->end());
  return split;
}

inline DatasetSplit make_splits(const std::vector<Sequence>& sequences, const SplitConfig& cfg, std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::uint64_t>> sw;
  for (const Sequence& s : sequences) sw.emplace_back(s.id, s.world_id);
  return make_splits(sw, cfg, seed);
}

// One directory per sequence: poses.csv plus, per frame, the observation,
// ground truth and sector map as raster containers.
inline void export_dataset(const std::vector<Sequence>& sequences, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const Sequence& seq : sequences) {
    char name[32];
    std::snprintf(name, sizeof name, "seq_%04zu", seq.id);
    const fs::path sd = dir / name;
    fs::create_directories(sd);
    std::vector<PoseRow> rows;
    for (const Sample& s : seq.frames) {
      rows.push_back({s.frame, s.pose});
      char stem[32];
      std::snprintf(stem, sizeof stem, "frame_%04zu", s.frame);
      save_raster(s.observation, sd / (std::string(stem) + "_obs.bevras"));
      save_raster(s.gt, sd / (std::string(stem) + "_gt.bevras"));
      Raster sectors(s.gt.spec, 1);
      for (std::size_t i = 0; i < s.sector_map.size(); ++i) sectors.values[i] = s.sector_map[i];
      save_raster(sectors, sd / (std::string(stem) + "_sectors.bevras"));
    }
    save_poses_csv(rows, sd / "poses.csv");
  }
}

inline Sequence import_sequence(const std::filesystem::path& sd, std::size_t id) {
  Sequence seq;
  seq.id = id;
  for (const PoseRow& row : load_poses_csv(sd / "poses.csv")) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "frame_%04zu", row.frame);
    Sample s;
    s.sequence_id = id;
    s.frame = row.frame;
    s.pose = row.pose;
    s.observation = load_raster(sd / (std::string(stem) + "_obs.bevras"));
    s.gt = load_raster(sd / (std::string(stem) + "_gt.bevras"));
    const Raster sectors = load_raster(sd / (std::string(stem) + "_sectors.bevras"));
    s.sector_map.resize(sectors.cells());
    for (std::size_t i = 0; i < s.sector_map.size(); ++i) s.sector_map[i] = static_cast<std::uint8_t>(sectors.values[i]);
    seq.frames.push_back(std::move(s));
  }
  return seq;
}

}  // namespace bevssl
