#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "bevssl/bevssl.hpp"

using namespace bevssl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bevssl_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::pair<std::size_t, std::uint64_t>> one_world_each(std::size_t n) {
  std::vector<std::pair<std::size_t, std::uint64_t>> v;
  for (std::size_t i = 0; i < n; ++i) v.emplace_back(i, 1000 + i);
  return v;
}

// Tiny experiment that trains in well under a second.
ExperimentConfig quick_config() {
  ExperimentConfig c;
  c.world.n_sequences = 6;
  c.world.sequence.n_frames = 3;
  c.split.n_val = 1;
  c.split.n_test = 1;
  c.split.utilisation = 0.5;
  c.model = ModelConfig::tiny();
  c.train.steps = 12;
  c.train.eval_every = 6;
  c.train.log_every = 4;
  c.eval.render = false;
  return c;
}

}  // namespace

// ---- splits ----

TEST(Splits, DisjointAndComplete) {
  const auto sw = one_world_each(40);
  const DatasetSplit s = make_splits(sw, SplitConfig{0.1, 4, 8}, 3);
  EXPECT_EQ(s.test.size(), 8u);
  EXPECT_EQ(s.val.size(), 4u);
  EXPECT_EQ(s.labelled.size(), 3u);  // round(0.1 * 28)
  EXPECT_EQ(s.unlabelled.size(), 25u);
  std::set<std::size_t> all;
  for (const auto* v : {&s.labelled, &s.unlabelled, &s.val, &s.test}) all.insert(v->begin(), v->end());
  EXPECT_EQ(all.size(), 40u);
}

TEST(Splits, HeldOutSetsTakeWholeWorlds) {
  std::vector<std::pair<std::size_t, std::uint64_t>> sw;
  for (std::size_t i = 0; i < 30; ++i) sw.emplace_back(i, i / 3);  // three drives per world
  const DatasetSplit s = make_splits(sw, SplitConfig{0.5, 2, 2}, 9);
  auto worlds_of = [&](const std::vector<std::size_t>& ids) {
    std::set<std::uint64_t> w;
    for (std::size_t id : ids) w.insert(sw[id].second);
    return w;
  };
  std::set<std::uint64_t> train = worlds_of(s.labelled);
  for (auto w : worlds_of(s.unlabelled)) train.insert(w);
  for (auto w : worlds_of(s.test)) EXPECT_EQ(train.count(w), 0u);
  for (auto w : worlds_of(s.val)) EXPECT_EQ(train.count(w), 0u);
}

TEST(Splits, LabelledSetsAreNestedAcrossUtilisations) {
  const auto sw = one_world_each(40);
  std::vector<std::size_t> prev;
  for (double u : {0.025, 0.05, 0.1, 0.25, 0.5, 1.0}) {
    const DatasetSplit s = make_splits(sw, SplitConfig{u, 4, 8}, 5);
    for (std::size_t id : prev) EXPECT_TRUE(std::binary_search(s.labelled.begin(), s.labelled.end(), id));
    EXPECT_GE(s.labelled.size(), prev.size());
    prev = s.labelled;
  }
  EXPECT_EQ(prev.size(), 28u);
}

TEST(Splits, DeterministicAndSeedDependent) {
  const auto sw = one_world_each(20);
  const DatasetSplit a = make_splits(sw, SplitConfig{0.2, 2, 2}, 1), b = make_splits(sw, SplitConfig{0.2, 2, 2}, 1);
  const DatasetSplit c = make_splits(sw, SplitConfig{0.2, 2, 2}, 2);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.labelled, b.labelled);
  EXPECT_TRUE(a.test != c.test || a.labelled != c.labelled);
}

TEST(Splits, RejectsImpossibleRequests) {
  EXPECT_THROW(make_splits(one_world_each(5), SplitConfig{0.5, 2, 3}, 0), ConfigError);
  EXPECT_THROW(make_splits(one_world_each(10), SplitConfig{0.0, 2, 2}, 0), ConfigError);
  EXPECT_THROW(make_splits(one_world_each(10), SplitConfig{0.01, 2, 2}, 0), ConfigError);
}

// ---- dataset generation and IO ----

TEST(Dataset, DeterministicWithConsistentIds) {
  DatasetConfig cfg;
  cfg.n_sequences = 3;
  cfg.sequence.n_frames = 2;
  cfg.first_id = 7;
  const auto a = generate_dataset(cfg, GridSpec::small()), b = generate_dataset(cfg, GridSpec::small());
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].id, 7 + i);
    EXPECT_EQ(a[i].world_id, b[i].world_id);
    ASSERT_EQ(a[i].frames.size(), 2u);
    for (std::size_t f = 0; f < 2; ++f) {
      EXPECT_EQ(a[i].frames[f].sequence_id, a[i].id);
      EXPECT_EQ(a[i].frames[f].observation.values, b[i].frames[f].observation.values);
      EXPECT_EQ(a[i].frames[f].gt.values, b[i].frames[f].gt.values);
      EXPECT_EQ(a[i].frames[f].observation.channels, 5u);
      EXPECT_EQ(a[i].frames[f].gt.channels, 3u);
    }
  }
  EXPECT_NE(a[0].world_id, a[1].world_id);
}

TEST(Dataset, ExportImportRoundTripIsExact) {
  DatasetConfig cfg;
  cfg.n_sequences = 2;
  cfg.sequence.n_frames = 3;
  const auto seqs = generate_dataset(cfg, GridSpec::small());
  const fs::path dir = scratch("dataset");
  export_dataset(seqs, dir);
  for (const Sequence& s : seqs) {
    char name[32];
    std::snprintf(name, sizeof name, "seq_%04zu", s.id);
    const Sequence back = import_sequence(dir / name, s.id);
    ASSERT_EQ(back.frames.size(), s.frames.size());
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
      const Sample &x = s.frames[f], &y = back.frames[f];
      EXPECT_EQ(x.frame, y.frame);
      EXPECT_EQ(x.pose.x, y.pose.x);
      EXPECT_EQ(x.pose.y, y.pose.y);
      EXPECT_EQ(x.pose.yaw, y.pose.yaw);
      EXPECT_EQ(x.observation.values, y.observation.values);
      EXPECT_EQ(x.observation.valid, y.observation.valid);
      EXPECT_EQ(x.gt.values, y.gt.values);
      EXPECT_EQ(x.sector_map, y.sector_map);
    }
  }
  fs::remove_all(dir);
}

TEST(RasterIo, RoundTripAndCorruption) {
  Rng rng(3);
  Raster r(GridSpec::square(5, 0.7), 2);
  for (auto& v : r.values) v = rng.normal();
  for (auto& v : r.valid) v = rng.bernoulli(0.5);
  const auto bytes = encode_raster(r);
  const Raster back = decode_raster(bytes);
  EXPECT_EQ(back.values, r.values);
  EXPECT_EQ(back.valid, r.valid);
  EXPECT_EQ(back.spec, r.spec);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_raster(bad), IoError);
  auto cut = bytes;
  cut.pop_back();
  EXPECT_THROW(decode_raster(cut), IoError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_raster(extra), IoError);
  EXPECT_THROW(load_raster("/nonexistent/x.bevras"), IoError);
}

TEST(Export, PgmHeaderAndPixels) {
  Raster r(GridSpec::square(2, 1.0), 3, 0.0);
  r.values[0] = 1.0;
  r.values[1] = 0.5;
  r.values[2] = 2.0;  // clamped
  r.valid[3] = 0;
  r.values[3] = 1.0;  // invalid, black
  const fs::path dir = scratch("pgm");
  const auto files = render_raster(r, dir, "x");
  ASSERT_EQ(files.size(), 4u);
  std::ifstream in(dir / "x_c0.pgm", std::ios::binary);
  const std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(s.size(), header.size() + 4);
  EXPECT_EQ(s.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(s[header.size() + 0]), 255);
  EXPECT_EQ(static_cast<unsigned char>(s[header.size() + 1]), 128);
  EXPECT_EQ(static_cast<unsigned char>(s[header.size() + 2]), 255);
  EXPECT_EQ(static_cast<unsigned char>(s[header.size() + 3]), 0);
  EXPECT_EQ(fs::file_size(dir / "x.ppm"), std::string("P6\n2 2\n255\n").size() + 12);
  fs::remove_all(dir);
}

TEST(Export, FormatDouble) {
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(std::nan("")), "nan");
  EXPECT_EQ(std::stod(format_double(0.1)), 0.1);
}

// ---- configuration ----

TEST(Config, DefaultRoundTripIsCanonical) {
  const ExperimentConfig c;
  const std::string a = canonical_json(c);
  EXPECT_EQ(canonical_json(from_json(json::parse(a))), a);
}

TEST(Config, NonDefaultRoundTrip) {
  ExperimentConfig c = quick_config();
  c.ssl.pseudo.threshold.reset();
  c.ssl.pseudo.temperature = 0.5;
  c.ssl.pseudo.fusion.mode = FusionMode::feats;
  c.ssl.feat_loss = FeatureLoss::mse;
  c.augment.camdrop = true;
  c.eval.seeds = {3, 4};
  c.eval.scenario = "label-sweep";
  const std::string a = canonical_json(c);
  const ExperimentConfig back = from_json(json::parse(a));
  EXPECT_EQ(canonical_json(back), a);
  EXPECT_FALSE(back.ssl.pseudo.threshold.has_value());
  EXPECT_EQ(*back.ssl.pseudo.temperature, 0.5);
  EXPECT_EQ(back.eval.seeds, (std::vector<std::uint64_t>{3, 4}));
}

TEST(Config, PartialFileKeepsDefaults) {
  const ExperimentConfig c = from_json(json::parse(R"({"train": {"steps": 7}})"));
  EXPECT_EQ(c.train.steps, 7);
  EXPECT_EQ(c.world.n_sequences, ExperimentConfig{}.world.n_sequences);
}

TEST(Config, UnknownKeysAndBadValuesAreConfigErrors) {
  EXPECT_THROW(from_json(json::parse(R"({"train": {"stepz": 7}})")), ConfigError);
  EXPECT_THROW(from_json(json::parse(R"({"bogus": {}})")), ConfigError);
  EXPECT_THROW(from_json(json::parse(R"({"train": {"steps": "many"}})")), ConfigError);
  EXPECT_THROW(from_json(json::parse(R"({"ssl": {"threshold": 0.3}})")), ConfigError);
  EXPECT_THROW(from_json(json::parse(R"({"preset": "huge"})")), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/cfg.json"), Error);
}

// ---- scenarios ----

TEST(Scenario, ComponentGridNamesAndSwitches) {
  ExperimentConfig c = quick_config();
  c.eval.scenario = "ablation-grid";
  c.eval.grid = "components";
  const auto v = make_variants(c);
  std::vector<std::string> names;
  for (const auto& x : v) names.push_back(x.name);
  EXPECT_EQ(names, (std::vector<std::string>{"Core", "+Augs", "+Fusion", "+Featsim", "+Thr", "+Hard"}));
  EXPECT_FALSE(v[0].cfg.augment.photometric);
  EXPECT_FALSE(v[0].cfg.ssl.featsim);
  EXPECT_EQ(v[0].cfg.ssl.pseudo.fusion.mode, FusionMode::none);
  EXPECT_FALSE(v[0].cfg.ssl.pseudo.threshold.has_value());
  EXPECT_TRUE(v[1].cfg.augment.bevdrop);
  EXPECT_EQ(v[2].cfg.ssl.pseudo.fusion.mode, FusionMode::probs);
  EXPECT_TRUE(v[3].cfg.ssl.featsim);
  EXPECT_FALSE(v[3].cfg.ssl.pseudo.threshold.has_value());
  EXPECT_EQ(*v[4].cfg.ssl.pseudo.threshold, 0.6);
  EXPECT_FALSE(v[4].cfg.ssl.pseudo.hard);
  EXPECT_TRUE(v[5].cfg.ssl.pseudo.hard);
  for (const auto& x : v) EXPECT_TRUE(x.cfg.ssl.enabled);
}

TEST(Scenario, EveryGridBuildsValidVariants) {
  ExperimentConfig c = quick_config();
  c.eval.scenario = "ablation-grid";
  for (const std::string& g : grid_names()) {
    c.eval.grid = g;
    const auto v = make_variants(c);
    EXPECT_GE(v.size(), 2u) << g;
    std::set<std::string> names;
    for (const auto& x : v) {
      EXPECT_NO_THROW(x.cfg.validate()) << g << " " << x.name;
      names.insert(x.name);
    }
    EXPECT_EQ(names.size(), v.size()) << g;
  }
  c.eval.grid = "nope";
  EXPECT_THROW(make_variants(c), ConfigError);
}

TEST(Scenario, LabelSweepPairsEveryUtilisation) {
  ExperimentConfig c = quick_config();
  c.eval.scenario = "label-sweep";
  c.eval.utilisations = {0.1, 1.0};
  const auto v = make_variants(c);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[0].name, "supervised-u0.1");
  EXPECT_FALSE(v[0].cfg.ssl.enabled);
  EXPECT_EQ(v[1].name, "ssl-u0.1");
  EXPECT_TRUE(v[1].cfg.ssl.enabled);
  EXPECT_EQ(v[2].name, "supervised-u1");
}

TEST(Scenario, CityAdaptPoolsAreNestedAndHeldOut) {
  ExperimentConfig c = quick_config();
  c.eval.scenario = "city-adapt";
  c.eval.source_sequences = 2;
  c.eval.target_unlabelled = {0, 1, 3};
  const auto v = make_variants(c);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_FALSE(v[0].cfg.ssl.enabled);
  std::vector<std::size_t> prev;
  for (const auto& x : v) {
    const ScenarioData d = build_data(x);
    EXPECT_EQ(d.split.labelled, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(d.split.unlabelled.size(), *x.target_unlabelled);
    for (std::size_t id : prev) EXPECT_TRUE(std::binary_search(d.split.unlabelled.begin(), d.split.unlabelled.end(), id));
    for (std::size_t id : d.split.unlabelled) {
      EXPECT_GE(id, 2u);
      EXPECT_EQ(std::count(d.split.test.begin(), d.split.test.end(), id), 0);
      EXPECT_EQ(std::count(d.split.val.begin(), d.split.val.end(), id), 0);
    }
    for (const Sequence& s : d.sequences) EXPECT_EQ(s.style, s.id < 2 ? "city_A" : "city_B");
    prev = d.split.unlabelled;
  }
}

TEST(Scenario, RunsAreReproducible) {
  ExperimentConfig c = quick_config();
  const Variant v{"ssl", c, {}};
  const RunResult a = run_one(v, 4), b = run_one(v, 4), other = run_one(v, 5);
  ASSERT_TRUE(a.ok) << a.error;
  EXPECT_TRUE(a.best.same_values(b.best));
  EXPECT_EQ(a.test.miou, b.test.miou);
  EXPECT_EQ(a.best_step, b.best_step);
  EXPECT_FALSE(a.best.same_values(other.best));
}

TEST(Scenario, FailedRunIsRecordedNotThrown) {
  ExperimentConfig c = quick_config();
  c.split.n_test = 50;
  const RunResult r = run_one({"broken", c, {}}, 0);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.error.find("make_splits"), std::string::npos);
}

TEST(Scenario, ThreadCountDoesNotChangeResults) {
  ExperimentConfig c = quick_config();
  c.eval.scenario = "label-sweep";
  c.eval.utilisations = {0.5};
  c.eval.seeds = {0, 1};
  const ScenarioResult one = run_scenario(c, make_variants(c), 1);
  const ScenarioResult three = run_scenario(c, make_variants(c), 3);
  EXPECT_EQ(metrics_csv(one), metrics_csv(three));
  EXPECT_EQ(summary_csv(one), summary_csv(three));
}

TEST(Scenario, MetricsCsvLayout) {
  ExperimentConfig c = quick_config();
  c.eval.scenario = "supervised";
  const ScenarioResult res = run_scenario(c);
  const std::string csv = metrics_csv(res);
  EXPECT_EQ(csv.substr(0, csv.find('\n') + 1), kMetricsHeader);
  // header + (3 classes + mean) for val and test
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_NE(csv.find("supervised,supervised,0,"), std::string::npos);

  const fs::path dir = scratch("artifacts");
  export_artifacts(res, c, dir);
  for (const char* f : {"config.json", "metrics.csv", "summary.csv", "validation_log.csv", "train_log.csv", "failures.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "supervised_seed0.ckpt"));
  EXPECT_TRUE(load_checkpoint(dir / "checkpoints" / "supervised_seed0.ckpt").same_values(res.runs[0].best));
  EXPECT_EQ(canonical_json(load_config(dir / "config.json")), canonical_json(c));
  fs::remove_all(dir);
}
