#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevssl/dataset.hpp"
#include "bevssl/trainer.hpp"

namespace bevssl {

using json = nlohmann::json;

struct EvalConfig {
  std::string scenario = "ssl";  // supervised | ssl | ablation-grid | label-sweep | city-adapt
  std::string grid = "components";
  std::vector<std::uint64_t> seeds{0};
  double binarize_at = 0.5;
  std::vector<double> utilisations{0.025, 0.05, 0.1, 0.25, 0.5, 1.0};
  std::vector<std::size_t> target_unlabelled{0, 8, 32};
  std::string target_style = "city_B";
  std::size_t source_sequences = 8;  // city adaptation: labelled source-style sequences
  std::size_t threads = 1;
  bool save_checkpoints = true;
  bool render = true;
};

// Full experiment description; mirrors the config file sections.
struct ExperimentConfig {
  std::string preset = "small";
  DatasetConfig world;
  SplitConfig split;
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  SslConfig ssl;
  EvalConfig eval;

  GridSpec grid() const {
    if (preset == "small") return GridSpec::small();
    if (preset == "paper") return GridSpec::paper();
    throw ConfigError("unknown preset '" + preset + "' (expected small or paper)");
  }

  void validate() const {
    (void)grid();
    world.validate();
    model.validate();
    train.validate();
    augment.validate();
    ssl.validate();
    if (eval.seeds.empty()) throw ConfigError("eval: seeds list must not be empty");
    if (!(split.utilisation > 0.0 && split.utilisation <= 1.0)) throw ConfigError("train: utilisation must be in (0, 1]");
    for (double u : eval.utilisations) {
      if (!(u > 0.0 && u <= 1.0)) throw ConfigError("eval: utilisations must be in (0, 1]");
    }
    StyleParams::preset(eval.target_style);
    if (eval.threads == 0) throw ConfigError("eval: threads must be positive");
  }
};

namespace config_detail {

// Reads `key` into `out` when present and removes it from `j`, so leftover
// keys can be reported.
template <typename T>
void take(json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
  j.erase(it);
}

inline void take_optional(json& j, const char* key, std::optional<double>& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (it->is_null()) {
    out.reset();
  } else if (it->is_number()) {
    out = it->get<double>();
  } else {
    throw ConfigError(std::string("config: '") + key + "' must be a number or null");
  }
  j.erase(it);
}

inline json section(json& root, const char* name) {
  auto it = root.find(name);
  if (it == root.end()) return json::object();
  if (!it->is_object()) throw ConfigError(std::string("config: section '") + name + "' must be an object");
  json s = *it;
  root.erase(it);
  return s;
}

inline void finish(const json& j, const std::string& where) {
  if (!j.empty()) throw ConfigError("config: unknown key '" + j.begin().key() + "' in " + where);
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace config_detail

inline json to_json(const ExperimentConfig& c) {
  using config_detail::optional_json;
  json j;
  j["preset"] = c.preset;
  j["world"] = {{"style", c.world.style},
                {"n_sequences", c.world.n_sequences},
                {"frames_per_sequence", c.world.sequence.n_frames},
                {"speed_min", c.world.sequence.speed_min},
                {"speed_max", c.world.sequence.speed_max},
                {"frame_dt", c.world.sequence.frame_dt},
                {"dwell_probability", c.world.sequence.dwell_probability},
                {"style_jitter", c.world.style_jitter},
                {"extent", {c.world.extent.x_min, c.world.extent.y_min, c.world.extent.x_max, c.world.extent.y_max}},
                {"seed", c.world.seed},
                {"n_val", c.split.n_val},
                {"n_test", c.split.n_test}};
  j["model"] = {{"encoder_widths", c.model.encoder_widths},
                {"encoder_strides", c.model.encoder_strides},
                {"encoder_kernel", c.model.encoder_kernel},
                {"bev_channels", c.model.bev_channels},
                {"decoder_mid_channels", c.model.decoder_mid_channels},
                {"decoder_channels", c.model.decoder_channels},
                {"decoder_kernel", c.model.decoder_kernel}};
  j["train"] = {{"steps", c.train.steps},
                {"lr", c.train.optim.lr},
                {"weight_decay", c.train.optim.weight_decay},
                {"beta1", c.train.optim.beta1},
                {"beta2", c.train.optim.beta2},
                {"eps", c.train.optim.eps},
                {"batch_labelled", c.train.batch_labelled},
                {"batch_unlabelled", c.train.batch_unlabelled},
                {"eval_every", c.train.eval_every},
                {"log_every", c.train.log_every},
                {"labelled_strong", c.train.labelled_strong},
                {"utilisation", c.split.utilisation}};
  j["augment"] = {{"photometric", c.augment.photometric},
                  {"gain_min", c.augment.gain_min},
                  {"gain_max", c.augment.gain_max},
                  {"bias_min", c.augment.bias_min},
                  {"bias_max", c.augment.bias_max},
                  {"swap_probability", c.augment.swap_probability},
                  {"cutout", c.augment.cutout},
                  {"cutout_fraction", c.augment.cutout_fraction},
                  {"camdrop", c.augment.camdrop},
                  {"camdrop_count", c.augment.camdrop_count},
                  {"bevdrop", c.augment.bevdrop},
                  {"bevdrop_rate", c.augment.bevdrop_rate}};
  const auto& p = c.ssl.pseudo;
  j["ssl"] = {{"enabled", c.ssl.enabled},
              {"w_cls", c.ssl.weights.w_cls},
              {"w_feat", c.ssl.weights.w_feat},
              {"rampup_fraction", c.ssl.weights.rampup_fraction},
              {"focal_gamma", c.ssl.weights.focal_gamma},
              {"focal_alpha", c.ssl.weights.focal_alpha},
              {"focal_form", focal_form_name(c.ssl.weights.focal_form)},
              {"featsim", c.ssl.featsim},
              {"feat_loss", c.ssl.feat_loss == FeatureLoss::mse ? "mse" : "cosine"},
              {"feat_tap", c.ssl.feat_tap == FeatTap::early ? "early" : "late"},
              {"threshold", optional_json(p.threshold)},
              {"temperature", optional_json(p.temperature)},
              {"hard", p.hard},
              {"two_sided", p.two_sided},
              {"fusion", fusion_mode_name(p.fusion.mode)},
              {"fusion_extra", p.fusion.n_extra},
              {"fusion_range", p.fusion.max_range},
              {"fusion_along_trajectory", p.fusion.along_trajectory},
              {"fusion_feature_warp", p.fusion.feature_warp == WarpMode::nearest ? "nearest" : "bilinear"},
              {"ema_keep_rate", c.ssl.ema_keep_rate},
              {"strong_student", c.ssl.strong_student},
              {"teacher_photometric", c.ssl.teacher_photometric},
              {"evaluate_teacher", c.ssl.evaluate_teacher}};
  j["eval"] = {{"scenario", c.eval.scenario},
               {"grid", c.eval.grid},
               {"seeds", c.eval.seeds},
               {"binarize_at", c.eval.binarize_at},
               {"utilisations", c.eval.utilisations},
               {"target_unlabelled", c.eval.target_unlabelled},
               {"target_style", c.eval.target_style},
               {"source_sequences", c.eval.source_sequences},
               {"threads", c.eval.threads},
               {"save_checkpoints", c.eval.save_checkpoints},
               {"render", c.eval.render}};
  return j;
}

// Missing keys keep their defaults; unknown keys are configuration errors.
inline ExperimentConfig from_json(json root) {
  using namespace config_detail;
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  ExperimentConfig c;
  take(root, "preset", c.preset);

  json w = section(root, "world");
  take(w, "style", c.world.style);
  take(w, "n_sequences", c.world.n_sequences);
  take(w, "frames_per_sequence", c.world.sequence.n_frames);
  take(w, "speed_min", c.world.sequence.speed_min);
  take(w, "speed_max", c.world.sequence.speed_max);
  take(w, "frame_dt", c.world.sequence.frame_dt);
  take(w, "dwell_probability", c.world.sequence.dwell_probability);
  take(w, "style_jitter", c.world.style_jitter);
  std::vector<double> extent;
  take(w, "extent", extent);
  if (!extent.empty()) {
    if (extent.size() != 4) throw ConfigError("config: world.extent must be [x_min, y_min, x_max, y_max]");
    c.world.extent = {extent[0], extent[1], extent[2], extent[3]};
  }
  take(w, "seed", c.world.seed);
  take(w, "n_val", c.split.n_val);
  take(w, "n_test", c.split.n_test);
  finish(w, "world");

  json m = section(root, "model");
  take(m, "encoder_widths", c.model.encoder_widths);
  take(m, "encoder_strides", c.model.encoder_strides);
  take(m, "encoder_kernel", c.model.encoder_kernel);
  take(m, "bev_channels", c.model.bev_channels);
  take(m, "decoder_mid_channels", c.model.decoder_mid_channels);
  take(m, "decoder_channels", c.model.decoder_channels);
  take(m, "decoder_kernel", c.model.decoder_kernel);
  finish(m, "model");

  json t = section(root, "train");
  take(t, "steps", c.train.steps);
  take(t, "lr", c.train.optim.lr);
  take(t, "weight_decay", c.train.optim.weight_decay);
  take(t, "beta1", c.train.optim.beta1);
  take(t, "beta2", c.train.optim.beta2);
  take(t, "eps", c.train.optim.eps);
  take(t, "batch_labelled", c.train.batch_labelled);
  take(t, "batch_unlabelled", c.train.batch_unlabelled);
  take(t, "eval_every", c.train.eval_every);
  take(t, "log_every", c.train.log_every);
  take(t, "labelled_strong", c.train.labelled_strong);
  take(t, "utilisation", c.split.utilisation);
  finish(t, "train");

  json a = section(root, "augment");
  take(a, "photometric", c.augment.photometric);
  take(a, "gain_min", c.augment.gain_min);
  take(a, "gain_max", c.augment.gain_max);
  take(a, "bias_min", c.augment.bias_min);
  take(a, "bias_max", c.augment.bias_max);
  take(a, "swap_probability", c.augment.swap_probability);
  take(a, "cutout", c.augment.cutout);
  take(a, "cutout_fraction", c.augment.cutout_fraction);
  take(a, "camdrop", c.augment.camdrop);
  take(a, "camdrop_count", c.augment.camdrop_count);
  take(a, "bevdrop", c.augment.bevdrop);
  take(a, "bevdrop_rate", c.augment.bevdrop_rate);
  finish(a, "augment");

  json s = section(root, "ssl");
  auto& p = c.ssl.pseudo;
  take(s, "enabled", c.ssl.enabled);
  take(s, "w_cls", c.ssl.weights.w_cls);
  take(s, "w_feat", c.ssl.weights.w_feat);
  take(s, "rampup_fraction", c.ssl.weights.rampup_fraction);
  take(s, "focal_gamma", c.ssl.weights.focal_gamma);
  take(s, "focal_alpha", c.ssl.weights.focal_alpha);
  take(s, "featsim", c.ssl.featsim);
  std::string text;
  if (s.contains("focal_form")) {
    take(s, "focal_form", text);
    c.ssl.weights.focal_form = parse_focal_form(text);
  }
  if (s.contains("feat_loss")) {
    take(s, "feat_loss", text);
    c.ssl.feat_loss = parse_feature_loss(text);
  }
  if (s.contains("feat_tap")) {
    take(s, "feat_tap", text);
    c.ssl.feat_tap = parse_feat_tap(text);
  }
  take_optional(s, "threshold", p.threshold);
  take_optional(s, "temperature", p.temperature);
  take(s, "hard", p.hard);
  take(s, "two_sided", p.two_sided);
  if (s.contains("fusion")) {
    take(s, "fusion", text);
    p.fusion.mode = parse_fusion_mode(text);
  }
  take(s, "fusion_extra", p.fusion.n_extra);
  take(s, "fusion_range", p.fusion.max_range);
  take(s, "fusion_along_trajectory", p.fusion.along_trajectory);
  if (s.contains("fusion_feature_warp")) {
    take(s, "fusion_feature_warp", text);
    if (text != "nearest" && text != "bilinear") throw ConfigError("config: fusion_feature_warp must be nearest or bilinear");
    p.fusion.feature_warp = text == "nearest" ? WarpMode::nearest : WarpMode::bilinear;
  }
  take(s, "ema_keep_rate", c.ssl.ema_keep_rate);
  take(s, "strong_student", c.ssl.strong_student);
  take(s, "teacher_photometric", c.ssl.teacher_photometric);
  take(s, "evaluate_teacher", c.ssl.evaluate_teacher);
  finish(s, "ssl");

  json e = section(root, "eval");
  take(e, "scenario", c.eval.scenario);
  take(e, "grid", c.eval.grid);
  take(e, "seeds", c.eval.seeds);
  take(e, "binarize_at", c.eval.binarize_at);
  take(e, "utilisations", c.eval.utilisations);
  take(e, "target_unlabelled", c.eval.target_unlabelled);
  take(e, "target_style", c.eval.target_style);
  take(e, "source_sequences", c.eval.source_sequences);
  take(e, "threads", c.eval.threads);
  take(e, "save_checkpoints", c.eval.save_checkpoints);
  take(e, "render", c.eval.render);
  finish(e, "eval");

  finish(root, "config");
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(std::move(j));
}

// Sorted keys, two-space indentation, trailing newline.
inline std::string canonical_json(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace bevssl
