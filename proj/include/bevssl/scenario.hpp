#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "bevssl/checkpoint.hpp"
#include "bevssl/config.hpp"
#include "bevssl/export.hpp"
#include "bevssl/trainer.hpp"

namespace bevssl {

struct Variant {
  std::string name;
  ExperimentConfig cfg;
  std::optional<std::size_t> target_unlabelled;  // city adaptation only
};

namespace scenario_detail {

inline std::string trim_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Teacher-student with no augmentation, fusion, feature loss or threshold.
inline ExperimentConfig core(ExperimentConfig c) {
  c.ssl.enabled = true;
  c.ssl.strong_student = false;
  c.augment = AugmentConfig::none();
  c.ssl.pseudo.fusion.mode = FusionMode::none;
  c.ssl.featsim = false;
  c.ssl.pseudo.threshold.reset();
  c.ssl.pseudo.temperature.reset();
  c.ssl.pseudo.hard = false;
  return c;
}

inline ExperimentConfig with_augs(ExperimentConfig c, const ExperimentConfig& base) {
  c.ssl.strong_student = true;
  c.augment = base.augment;
  c.augment.photometric = c.augment.cutout = c.augment.bevdrop = true;
  c.augment.camdrop = false;
  return c;
}

inline std::vector<Variant> components(const ExperimentConfig& base) {
  std::vector<Variant> v;
  ExperimentConfig c = core(base);
  v.push_back({"Core", c, {}});
  c = with_augs(c, base);
  v.push_back({"+Augs", c, {}});
  c.ssl.pseudo.fusion = base.ssl.pseudo.fusion;
  if (c.ssl.pseudo.fusion.mode == FusionMode::none) c.ssl.pseudo.fusion.mode = FusionMode::probs;
  v.push_back({"+Fusion", c, {}});
  c.ssl.featsim = true;
  v.push_back({"+Featsim", c, {}});
  c.ssl.pseudo.threshold = base.ssl.pseudo.threshold.value_or(0.6);
  v.push_back({"+Thr", c, {}});
  c.ssl.pseudo.hard = true;
  v.push_back({"+Hard", c, {}});
  return v;
}

inline std::vector<Variant> augmentations(const ExperimentConfig& base) {
  const ExperimentConfig c0 = core(base);
  std::vector<Variant> v;
  auto add = [&](const std::string& name, bool photo, bool cut, bool cam, bool bev) {
    ExperimentConfig c = c0;
    c.augment = base.augment;
    c.augment.photometric = photo;
    c.augment.cutout = cut;
    c.augment.camdrop = cam;
    c.augment.bevdrop = bev;
    c.ssl.strong_student = photo || cut || cam || bev;
    v.push_back({name, c, {}});
  };
  add("none", false, false, false, false);
  add("photometric", true, false, false, false);
  add("cutout", false, true, false, false);
  add("camdrop", false, false, true, false);
  add("bevdrop", false, false, false, true);
  add("photometric+camdrop+bevdrop", true, false, true, true);
  add("photometric+cutout+bevdrop", true, true, false, true);
  return v;
}

inline std::vector<Variant> threshold_grid(const ExperimentConfig& base) {
  std::vector<Variant> v;
  const ExperimentConfig a = with_augs(core(base), base);
  v.push_back({"thr-off", a, {}});
  for (double t : {0.55, 0.6, 0.7, 0.8, 0.9}) {
    ExperimentConfig c = a;
    c.ssl.pseudo.threshold = t;
    v.push_back({"thr-" + trim_number(t), c, {}});
  }
  return v;
}

inline std::vector<Variant> temperature_grid(const ExperimentConfig& base) {
  std::vector<Variant> v;
  const ExperimentConfig a = with_augs(core(base), base);
  v.push_back({"T-off", a, {}});
  for (double t : {0.05, 0.25, 0.5, 0.75, 0.95}) {
    ExperimentConfig c = a;
    c.ssl.pseudo.temperature = t;
    v.push_back({"T-" + trim_number(t), c, {}});
  }
  return v;
}

inline std::vector<Variant> featsim_grid(const ExperimentConfig& base) {
  std::vector<Variant> v;
  const ExperimentConfig a = with_augs(core(base), base);
  v.push_back({"featsim-off", a, {}});
  for (double w : {0.1, 0.25, 0.5, 1.0}) {
    ExperimentConfig c = a;
    c.ssl.featsim = true;
    c.ssl.weights.w_feat = w;
    c.ssl.feat_loss = FeatureLoss::cosine;
    c.ssl.feat_tap = FeatTap::late;
    v.push_back({"cos-late-" + trim_number(w), c, {}});
  }
  for (FeatureLoss fl : {FeatureLoss::mse, FeatureLoss::cosine}) {
    for (FeatTap tap : {FeatTap::early, FeatTap::late}) {
      if (fl == FeatureLoss::cosine && tap == FeatTap::late) continue;  // already in the weight sweep
      ExperimentConfig c = a;
      c.ssl.featsim = true;
      c.ssl.weights.w_feat = 0.25;
      c.ssl.feat_loss = fl;
      c.ssl.feat_tap = tap;
      v.push_back({std::string(fl == FeatureLoss::mse ? "mse" : "cos") + (tap == FeatTap::early ? "-early" : "-late") +
                       "-0.25",
                   c, {}});
    }
  }
  return v;
}

inline std::vector<Variant> fusion_range_grid(const ExperimentConfig& base) {
  std::vector<Variant> v;
  const ExperimentConfig a = with_augs(core(base), base);
  v.push_back({"fusion-off", a, {}});
  for (FusionMode m : {FusionMode::probs, FusionMode::feats}) {
    for (bool thr : {false, true}) {
      for (double r : {10.0, 20.0, 30.0, 40.0}) {
        ExperimentConfig c = a;
        c.ssl.pseudo.fusion.mode = m;
        c.ssl.pseudo.fusion.max_range = r;
        if (thr) c.ssl.pseudo.threshold = base.ssl.pseudo.threshold.value_or(0.6);
        v.push_back({std::string(fusion_mode_name(m)) + (thr ? "+thr-" : "-") + trim_number(r) + "m", c, {}});
      }
    }
  }
  return v;
}

inline std::vector<Variant> fusion_frames_grid(const ExperimentConfig& base) {
  std::vector<Variant> v;
  ExperimentConfig a = with_augs(core(base), base);
  a.ssl.pseudo.fusion.mode = FusionMode::probs;
  for (std::size_t n : {1, 2, 3, 4}) {
    ExperimentConfig c = a;
    c.ssl.pseudo.fusion.n_extra = n;
    v.push_back({"frames-" + std::to_string(n), c, {}});
  }
  return v;
}

}  // namespace scenario_detail

inline const std::vector<std::string>& grid_names() {
  static const std::vector<std::string> names{"components", "augmentations", "threshold", "temperature",
                                              "featsim",    "fusion-range",  "fusion-frames"};
  return names;
}

inline const std::vector<std::string>& scenario_kinds() {
  static const std::vector<std::string> kinds{"supervised", "ssl", "ablation-grid", "label-sweep", "city-adapt"};
  return kinds;
}

// Expands a configuration into the variants its scenario compares.
inline std::vector<Variant> make_variants(const ExperimentConfig& base) {
  using namespace scenario_detail;
  const std::string& kind = base.eval.scenario;
  if (kind == "supervised") {
    ExperimentConfig c = base;
    c.ssl.enabled = false;
    return {{"supervised", c, {}}};
  }
  if (kind == "ssl") return {{"ssl", base, {}}};
  if (kind == "ablation-grid") {
    const std::string& g = base.eval.grid;
    if (g == "components") return components(base);
    if (g == "augmentations") return augmentations(base);
    if (g == "threshold") return threshold_grid(base);
    if (g == "temperature") return temperature_grid(base);
    if (g == "featsim") return featsim_grid(base);
    if (g == "fusion-range") return fusion_range_grid(base);
    if (g == "fusion-frames") return fusion_frames_grid(base);
    throw ConfigError("unknown ablation grid '" + g + "'");
  }
  if (kind == "label-sweep") {
    std::vector<Variant> v;
    for (double u : base.eval.utilisations) {
      ExperimentConfig sup = base, ssl = base;
      sup.ssl.enabled = false;
      sup.split.utilisation = ssl.split.utilisation = u;
      v.push_back({"supervised-u" + trim_number(u), sup, {}});
      if (u < 1.0) v.push_back({"ssl-u" + trim_number(u), ssl, {}});
    }
    return v;
  }
  if (kind == "city-adapt") {
    std::vector<Variant> v;
    for (std::size_t n : base.eval.target_unlabelled) {
      ExperimentConfig c = base;
      c.ssl.enabled = n > 0;
      v.push_back({"target-unlabelled-" + std::to_string(n), c, n});
    }
    return v;
  }
  throw ConfigError("unknown scenario '" + kind + "'");
}

struct ScenarioData {
  std::vector<Sequence> sequences;
  DatasetSplit split;
};

// Standard scenarios split one dataset. City adaptation labels a source-style
// dataset completely and draws validation, test and the first n unlabelled
// sequences from a target-style dataset, so unlabelled pools are nested.
inline ScenarioData build_data(const Variant& v) {
  const ExperimentConfig& c = v.cfg;
  const GridSpec g = c.grid();
  ScenarioData d;
  if (!v.target_unlabelled) {
    d.sequences = generate_dataset(c.world, g);
    d.split = make_splits(d.sequences, c.split, c.world.seed);
    return d;
  }
  const std::size_t max_target = *std::max_element(c.eval.target_unlabelled.begin(), c.eval.target_unlabelled.end());
  DatasetConfig src = c.world;
  src.n_sequences = c.eval.source_sequences;
  DatasetConfig tgt = c.world;
  tgt.style = c.eval.target_style;
  tgt.seed = Rng::mix(c.world.seed, {0x7A6});
  tgt.first_id = src.n_sequences;
  tgt.n_sequences = c.split.n_val + c.split.n_test + max_target;
  d.sequences = generate_dataset(src, g);
  for (Sequence& s : generate_dataset(tgt, g)) d.sequences.push_back(std::move(s));
  // Target worlds: test first, then validation, the rest form the pool.
  std::vector<std::size_t> target;
  for (std::size_t i = src.n_sequences; i < d.sequences.size(); ++i) target.push_back(d.sequences[i].id);
  Rng rng = Rng::stream(c.world.seed, {0x7A7});
  for (std::size_t i = target.size(); i > 1; --i) std::swap(target[i - 1], target[rng.index(i)]);
  for (std::size_t i = 0; i < src.n_sequences; ++i) d.split.labelled.push_back(d.sequences[i].id);
  auto it = target.begin();
  d.split.test.assign(it, it + static_cast<std::ptrdiff_t>(c.split.n_test));
  it += static_cast<std::ptrdiff_t>(c.split.n_test);
  d.split.val.assign(it, it + static_cast<std::ptrdiff_t>(c.split.n_val));
  it += static_cast<std::ptrdiff_t>(c.split.n_val);
  const std::vector<std::size_t> pool(it, target.end());
  const std::size_t n = std::min(*v.target_unlabelled, pool.size());
  d.split.unlabelled.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
  for (auto* ids : {&d.split.test, &d.split.val, &d.split.unlabelled}) std::sort(ids->begin(), ids->end());
  d.split.label_utilisation = 1.0;
  return d;
}

struct RunResult {
  std::string variant;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  long best_step = 0;
  Metrics val;
  Metrics test;
  StepRecord window;
  std::vector<ValidationRecord> validation;
  std::vector<StepRecord> log;
  ParamSet best;
};

// Seeds of one run: parameter init and batch sampling. Variants sharing a
// seed share both, which pairs their comparison.
inline std::uint64_t init_seed_for(std::uint64_t seed) { return Rng::mix(seed, {0x1417}); }
inline std::uint64_t sample_seed_for(std::uint64_t seed) { return Rng::mix(seed, {0x5A4}); }

inline RunResult run_one(const Variant& v, std::uint64_t seed) {
  RunResult r;
  r.variant = v.name;
  r.seed = seed;
  try {
    v.cfg.validate();
    const ScenarioData data = build_data(v);
    const SequenceStore store(data.sequences);
    TrainContext ctx{v.cfg.model, v.cfg.train, v.cfg.augment, v.cfg.ssl, &store, data.split, sample_seed_for(seed)};
    TrainResult tr = train(ctx, init_seed_for(seed));
    r.best_step = tr.best_step;
    r.val = tr.best_val;
    r.test = evaluate(v.cfg.model, tr.best, store, data.split.test, v.cfg.eval.binarize_at);
    r.test.split = "test";
    r.test.step = tr.best_step;
    r.window = tr.window;
    r.validation = std::move(tr.validation);
    r.log = std::move(tr.log);
    r.best = std::move(tr.best);
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

struct VariantSummary {
  std::string variant;
  std::size_t runs = 0;
  std::size_t completed = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for one run
  double median = 0.0;
};

struct ScenarioResult {
  std::string scenario;
  std::vector<RunResult> runs;  // variant-major, seeds in config order
  std::vector<VariantSummary> summary;

  const VariantSummary& at(const std::string& variant) const {
    for (const auto& s : summary) {
      if (s.variant == variant) return s;
    }
    throw ContractError("scenario result: no variant '" + variant + "'");
  }
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline VariantSummary summarize(const std::string& variant, const std::vector<RunResult>& runs) {
  VariantSummary s;
  s.variant = variant;
  std::vector<double> m;
  for (const RunResult& r : runs) {
    if (r.variant != variant) continue;
    ++s.runs;
    if (r.ok) m.push_back(r.test.miou);
  }
  s.completed = m.size();
  if (m.empty()) return s;
  double sum = 0.0;
  for (double x : m) sum += x;
  s.mean = sum / static_cast<double>(m.size());
  if (m.size() > 1) {
    double ss = 0.0;
    for (double x : m) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(m.size() - 1));
  }
  s.median = median_of(m);
  return s;
}

inline std::string scenario_label(const ExperimentConfig& cfg) {
  return cfg.eval.scenario == "ablation-grid" ? "ablation-" + cfg.eval.grid : cfg.eval.scenario;
}

// Every (variant, seed) run, spread over `threads` workers. Results land in
// fixed slots, so the table does not depend on scheduling.
inline ScenarioResult run_scenario(const ExperimentConfig& cfg, const std::vector<Variant>& variants,
                                   std::size_t threads = 1) {
  cfg.validate();
  struct Job {
    const Variant* v;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const Variant& v : variants) {
    for (std::uint64_t s : cfg.eval.seeds) jobs.push_back({&v, s});
  }
  ScenarioResult res;
  res.scenario = scenario_label(cfg);
  res.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) res.runs[i] = run_one(*jobs[i].v, jobs[i].seed);
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const Variant& v : variants) res.summary.push_back(summarize(v.name, res.runs));
  return res;
}

inline ScenarioResult run_scenario(const ExperimentConfig& cfg) {
  return run_scenario(cfg, make_variants(cfg), cfg.eval.threads);
}

// ---- tables ----

inline const char* kMetricsHeader = "scenario,variant,seed,step,split,class,iou,miou,loss_sup,loss_cls,loss_feat\n";

inline void append_metrics_rows(std::string& out, const std::string& scenario, const RunResult& r, const Metrics& m,
                                const std::string& split) {
  const std::string prefix = scenario + "," + r.variant + "," + std::to_string(r.seed) + "," + std::to_string(m.step) + "," +
                             split + ",";
  const std::string losses =
      format_double(r.window.loss_sup) + "," + format_double(r.window.loss_cls) + "," + format_double(r.window.loss_feat) + "\n";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    out += prefix + kClassNames[c] + "," + (m.present[c] ? format_double(m.iou[c]) : std::string("nan")) + "," +
           format_double(m.miou) + "," + losses;
  }
  out += prefix + "mean," + format_double(m.miou) + "," + format_double(m.miou) + "," + losses;
}

// Completed runs only; failures go to failures.csv.
inline std::string metrics_csv(const ScenarioResult& res) {
  std::string out = kMetricsHeader;
  for (const RunResult& r : res.runs) {
    if (!r.ok) continue;
    append_metrics_rows(out, res.scenario, r, r.val, "val");
    append_metrics_rows(out, res.scenario, r, r.test, "test");
  }
  return out;
}

inline std::string summary_csv(const ScenarioResult& res) {
  std::string out = "scenario,variant,runs,completed,miou_mean,miou_std,miou_median\n";
  for (const VariantSummary& s : res.summary) {
    out += res.scenario + "," + s.variant + "," + std::to_string(s.runs) + "," + std::to_string(s.completed) + "," +
           format_double(s.mean) + "," + format_double(s.stddev) + "," + format_double(s.median) + "\n";
  }
  return out;
}

inline std::string validation_csv(const ScenarioResult& res) {
  std::string out = "scenario,variant,seed,step,val_miou,selected\n";
  for (const RunResult& r : res.runs) {
    for (const ValidationRecord& v : r.validation) {
      out += res.scenario + "," + r.variant + "," + std::to_string(r.seed) + "," + std::to_string(v.step) + "," +
             format_double(v.miou) + "," + (v.selected ? "1" : "0") + "\n";
    }
  }
  return out;
}

inline std::string train_log_csv(const ScenarioResult& res) {
  std::string out = "scenario,variant,seed,step,loss_total,loss_sup,loss_cls,loss_feat,w_cls,w_feat,masked_fraction\n";
  for (const RunResult& r : res.runs) {
    for (const StepRecord& s : r.log) {
      out += res.scenario + "," + r.variant + "," + std::to_string(r.seed) + "," + std::to_string(s.step) + "," +
             format_double(s.total) + "," + format_double(s.loss_sup) + "," + format_double(s.loss_cls) + "," +
             format_double(s.loss_feat) + "," + format_double(s.w_cls) + "," + format_double(s.w_feat) + "," +
             format_double(s.masked_fraction) + "\n";
    }
  }
  return out;
}

inline std::string failures_csv(const ScenarioResult& res) {
  std::string out = "scenario,variant,seed,error\n";
  for (const RunResult& r : res.runs) {
    if (r.ok) continue;
    std::string msg = r.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out += res.scenario + "," + r.variant + "," + std::to_string(r.seed) + "," + msg + "\n";
  }
  return out;
}

inline std::string safe_name(std::string s) {
  for (char& ch : s) {
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '.' || ch == '_')) ch = '_';
  }
  return s;
}

// Writes the tables, the config echo and (when enabled) the best checkpoint
// of every completed run.
inline void export_artifacts(const ScenarioResult& res, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", canonical_json(cfg));
  write_text(dir / "metrics.csv", metrics_csv(res));
  write_text(dir / "summary.csv", summary_csv(res));
  write_text(dir / "validation_log.csv", validation_csv(res));
  write_text(dir / "train_log.csv", train_log_csv(res));
  write_text(dir / "failures.csv", failures_csv(res));
  if (!cfg.eval.save_checkpoints) return;
  for (const RunResult& r : res.runs) {
    if (!r.ok) continue;
    save_checkpoint(r.best, dir / "checkpoints" / (safe_name(r.variant) + "_seed" + std::to_string(r.seed) + ".ckpt"));
  }
}

}  // namespace bevssl
