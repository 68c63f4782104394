// bevssl command line: world generation, training, evaluation, ablations,
// city adaptation and raster rendering.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bevssl/bevssl.hpp"

namespace fs = std::filesystem;
using namespace bevssl;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::optional<std::size_t> threads;
};

ExperimentConfig load_or_default(const std::string& path, const Globals& g) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  if (g.seed) cfg.eval.seeds = {*g.seed};
  if (g.preset) cfg.preset = *g.preset;
  if (g.threads) cfg.eval.threads = *g.threads;
  cfg.validate();
  return cfg;
}

void print_summary(const ScenarioResult& res) {
  std::printf("%-28s %5s %9s %9s %9s\n", "variant", "runs", "mean", "std", "median");
  for (const VariantSummary& s : res.summary) {
    std::printf("%-28s %2zu/%-2zu %9.4f %9.4f %9.4f\n", s.variant.c_str(), s.completed, s.runs, s.mean, s.stddev,
                s.median);
  }
  for (const RunResult& r : res.runs) {
    if (!r.ok) std::fprintf(stderr, "run %s seed %llu failed: %s\n", r.variant.c_str(),
                            static_cast<unsigned long long>(r.seed), r.error.c_str());
  }
}

// Observation, ground truth and prediction of the first test frame of each
// variant's first completed run.
void render_examples(const ScenarioResult& res, const std::vector<Variant>& variants, const fs::path& out) {
  for (const Variant& v : variants) {
    for (const RunResult& r : res.runs) {
      if (r.variant != v.name || !r.ok) continue;
      const ScenarioData data = build_data(v);
      const SequenceStore store(data.sequences);
      if (data.split.test.empty()) break;
      const Sample& s = store.at(data.split.test.front()).frames.front();
      const fs::path dir = out / "renders" / safe_name(v.name);
      render_raster(s.observation, dir, "observation");
      render_raster(s.gt, dir, "gt");
      const ForwardTrace t = forward(v.cfg.model, r.best.bind(nullptr), s.observation);
      render_raster(tensor_to_raster(t.probs, s.gt.spec), dir, "prediction");
      break;
    }
  }
}

int run_and_export(const ExperimentConfig& cfg, const fs::path& out) {
  const std::vector<Variant> variants = make_variants(cfg);
  const ScenarioResult res = run_scenario(cfg, variants, cfg.eval.threads);
  export_artifacts(res, cfg, out);
  if (cfg.eval.render) render_examples(res, variants, out);
  print_summary(res);
  for (const RunResult& r : res.runs) {
    if (!r.ok) return 3;
  }
  return 0;
}

void check_checkpoint(const ModelConfig& model, const ParamSet& loaded) {
  const ParamSet ref = init_params(model, 0);
  if (ref.size() != loaded.size()) throw ConfigError("checkpoint does not match the model configuration (parameter count)");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref[i].name != loaded[i].name || ref[i].value.shape() != loaded[i].value.shape()) {
      throw ConfigError("checkpoint does not match the model configuration at '" + loaded[i].name + "'");
    }
  }
}

json world_json(const WorldMap& w) {
  json polylines = json::array();
  for (const Polyline& p : w.polylines) {
    json pts = json::array();
    for (const Vec2& v : p.points) pts.push_back({v.x, v.y});
    polylines.push_back({{"class", kClassNames[static_cast<std::size_t>(p.cls)]},
                         {"closed", p.closed},
                         {"dashed", p.dashed},
                         {"points", pts}});
  }
  json clutter = json::array();
  for (const ClutterItem& c : w.clutter) {
    json pts = json::array();
    for (const Vec2& v : c.points) pts.push_back({v.x, v.y});
    clutter.push_back({{"mimics", kClassNames[static_cast<std::size_t>(c.mimics)]}, {"points", pts}});
  }
  return {{"seed", w.seed},
          {"extent", {w.extent.x_min, w.extent.y_min, w.extent.x_max, w.extent.y_max}},
          {"style",
           {{"curvature_scale", w.style.curvature_scale},
            {"road_density", w.style.road_density},
            {"lane_width", w.style.lane_width},
            {"crossing_frequency", w.style.crossing_frequency},
            {"noise_level", w.style.noise_level},
            {"clutter_density", w.style.clutter_density}}},
          {"polylines", polylines},
          {"clutter", clutter}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised BEV mapping laboratory"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  std::string preset_value;
  std::size_t threads_value = 1;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed (world seed for gen-world, run seed otherwise)");
  auto* preset_opt = app.add_option("--preset", preset_value, "Grid preset")->check(CLI::IsMember({"small", "paper"}));
  auto* threads_opt = app.add_option("--threads", threads_value, "Concurrent training runs")->check(CLI::PositiveNumber);

  std::string style = "city_A", out, config, checkpoint, split = "test", scenario, raster;

  auto* gen = app.add_subcommand("gen-world", "Generate a world, one drive through it and its rasters");
  gen->add_option("--style", style, "Style preset")->check(CLI::IsMember({"city_A", "city_B", "A", "B"}));
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train the configured scheme for every seed");
  train->add_option("--config", config, "Experiment config (JSON)");
  train->add_option("--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", split, "Split")->check(CLI::IsMember({"labelled", "unlabelled", "val", "test"}));
  eval->add_option("--config", config, "Experiment config the checkpoint was trained with");
  eval->add_option("--out", out, "Output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid or scenario");
  ablate->add_option("--scenario", scenario, "Grid name or scenario kind")->required();
  ablate->add_option("--config", config, "Base experiment config");
  ablate->add_option("--out", out, "Output directory")->required();

  auto* adapt = app.add_subcommand("adapt", "City adaptation: source labels, growing target unlabelled pool");
  adapt->add_option("--config", config, "Experiment config");
  adapt->add_option("--out", out, "Output directory")->required();

  auto* render = app.add_subcommand("render", "Write PGM/PPM images of a raster container");
  render->add_option("--raster", raster, "Raster file (.bevras)")->required();
  render->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (seed_opt->count()) g.seed = seed_value;
  if (preset_opt->count()) g.preset = preset_value;
  if (threads_opt->count()) g.threads = threads_value;

  try {
    if (*gen) {
      const std::uint64_t seed = g.seed.value_or(0);
      const GridSpec grid = g.preset.value_or("small") == "paper" ? GridSpec::paper() : GridSpec::small();
      const WorldMap world = generate_world(seed, StyleParams::preset(style));
      Sequence seq;
      seq.world_id = seed;
      seq.style = style;
      for (const FramePose& fp : generate_sequence(world, Rng::mix(seed, {0x2}), SequenceParams{})) {
        Sample s;
        s.frame = fp.frame;
        s.pose = fp.pose;
        s.gt = rasterize_gt(world, fp.pose, grid);
        Observation obs = render_observation(world, fp.pose, grid, Rng::mix(seed, {0x3, fp.frame}));
        s.observation = std::move(obs.raster);
        s.sector_map = std::move(obs.sectors);
        seq.frames.push_back(std::move(s));
      }
      const fs::path dir(out);
      write_text(dir / "world.json", world_json(world).dump(2) + "\n");
      export_dataset({seq}, dir);
      render_raster(seq.frames.front().observation, dir / "renders", "observation");
      render_raster(seq.frames.front().gt, dir / "renders", "gt");
      std::printf("world %llu: %zu polylines (%zu crossings, %zu dividers, %zu boundaries), %zu frames -> %s\n",
                  static_cast<unsigned long long>(seed), world.polylines.size(), world.count(MapClass::ped_crossing),
                  world.count(MapClass::divider), world.count(MapClass::boundary), seq.frames.size(), out.c_str());
      return 0;
    }
    if (*train) {
      ExperimentConfig cfg = load_or_default(config, g);
      cfg.eval.scenario = cfg.ssl.enabled ? "ssl" : "supervised";
      return run_and_export(cfg, out);
    }
    if (*ablate) {
      ExperimentConfig cfg = load_or_default(config, g);
      const auto& grids = grid_names();
      const auto& kinds = scenario_kinds();
      if (std::find(grids.begin(), grids.end(), scenario) != grids.end()) {
        cfg.eval.scenario = "ablation-grid";
        cfg.eval.grid = scenario;
      } else if (std::find(kinds.begin(), kinds.end(), scenario) != kinds.end()) {
        cfg.eval.scenario = scenario;
      } else {
        throw ConfigError("unknown scenario '" + scenario + "'");
      }
      return run_and_export(cfg, out);
    }
    if (*adapt) {
      ExperimentConfig cfg = load_or_default(config, g);
      cfg.eval.scenario = "city-adapt";
      return run_and_export(cfg, out);
    }
    if (*eval) {
      const ExperimentConfig cfg = load_or_default(config, g);
      const ParamSet params = load_checkpoint(checkpoint);
      check_checkpoint(cfg.model, params);
      const std::vector<Variant> variants = make_variants(cfg);
      const ScenarioData data = build_data(variants.back());
      const SequenceStore store(data.sequences);
      const auto& ids = split == "labelled" ? data.split.labelled
                        : split == "unlabelled" ? data.split.unlabelled
                        : split == "val" ? data.split.val
                                         : data.split.test;
      if (ids.empty()) throw ConfigError("split '" + split + "' is empty for this configuration");
      RunResult r;
      r.variant = fs::path(checkpoint).stem().string();
      r.seed = g.seed.value_or(0);
      r.ok = true;
      r.test = evaluate(cfg.model, params, store, ids, cfg.eval.binarize_at);
      r.window.loss_sup = r.window.loss_cls = r.window.loss_feat = std::nan("");
      std::string csv = kMetricsHeader;
      append_metrics_rows(csv, "eval", r, r.test, split);
      const fs::path dir(out);
      write_text(dir / "metrics.csv", csv);
      const Sample& s = store.at(ids.front()).frames.front();
      const ForwardTrace t = forward(cfg.model, params.bind(nullptr), s.observation);
      render_raster(tensor_to_raster(t.probs, s.gt.spec), dir / "renders", "prediction");
      render_raster(s.gt, dir / "renders", "gt");
      std::printf("%s on %s: mIoU %.4f (%s %.4f, %s %.4f, %s %.4f)\n", r.variant.c_str(), split.c_str(), r.test.miou,
                  kClassNames[0], r.test.iou[0], kClassNames[1], r.test.iou[1], kClassNames[2], r.test.iou[2]);
      for (const std::string& w : r.test.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      return 0;
    }
    if (*render) {
      const Raster r = load_raster(raster);
      const auto files = render_raster(r, out, fs::path(raster).stem().string());
      for (const auto& f : files) std::printf("%s\n", f.string().c_str());
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
