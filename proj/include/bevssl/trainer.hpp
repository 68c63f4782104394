#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bevssl/augment.hpp"
#include "bevssl/dataset.hpp"
#include "bevssl/losses.hpp"
#include "bevssl/metrics.hpp"
#include "bevssl/model.hpp"
#include "bevssl/optimizer.hpp"
#include "bevssl/ssl_engine.hpp"

namespace bevssl {

enum class FeatTap { early, late };

inline FeatTap parse_feat_tap(const std::string& s) {
  if (s == "early") return FeatTap::early;
  if (s == "late") return FeatTap::late;
  throw ConfigError("unknown feature tap '" + s + "' (expected early or late)");
}

struct SslConfig {
  bool enabled = true;          // false: labelled data only
  LossWeights weights;
  bool featsim = true;
  FeatureLoss feat_loss = FeatureLoss::cosine;
  FeatTap feat_tap = FeatTap::late;
  PseudoLabelConfig pseudo;
  double ema_keep_rate = 0.999;
  bool strong_student = true;   // false: the student sees the teacher's view
  bool teacher_photometric = false;
  bool evaluate_teacher = false;  // validate and keep the EMA weights instead of the student

  void validate() const {
    weights.validate();
    pseudo.validate();
    if (!(ema_keep_rate >= 0.0 && ema_keep_rate <= 1.0)) throw ConfigError("ssl: ema_keep_rate must be in [0, 1]");
  }
};

struct TrainConfig {
  long steps = 3000;
  AdamWConfig optim;
  std::size_t batch_labelled = 1;
  std::size_t batch_unlabelled = 1;
  long eval_every = 250;
  bool labelled_strong = false;  // strong view for labelled samples as well
  long log_every = 50;

  void validate() const {
    if (steps <= 0) throw ConfigError("train: steps must be positive");
    if (eval_every <= 0 || log_every <= 0) throw ConfigError("train: eval_every and log_every must be positive");
    if (batch_labelled == 0) throw ConfigError("train: batch_labelled must be positive");
    if (!(optim.lr >= 0.0) || optim.weight_decay < 0.0) throw ConfigError("train: invalid optimizer settings");
  }
};

// Sequences looked up by id.
class SequenceStore {
 public:
  explicit SequenceStore(const std::vector<Sequence>& seqs) : seqs_(&seqs) {
    for (std::size_t i = 0; i < seqs.size(); ++i) index_[seqs[i].id] = i;
  }
  const Sequence& at(std::size_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ContractError("sequence store: no sequence with id " + std::to_string(id));
    return (*seqs_)[it->second];
  }

 private:
  const std::vector<Sequence>* seqs_;
  std::unordered_map<std::size_t, std::size_t> index_;
};

struct TrainContext {
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  SslConfig ssl;
  const SequenceStore* data = nullptr;
  DatasetSplit split;
  std::uint64_t seed = 0;
};

struct TrainState {
  ParamSet student;
  ParamSet teacher;
};

struct StepRecord {
  long step = 0;
  double total = 0.0;
  double loss_sup = 0.0;
  double loss_cls = 0.0;
  double loss_feat = 0.0;
  double w_cls = 0.0;
  double w_feat = 0.0;
  double masked_fraction = 0.0;  // share of pseudo-label elements excluded
};

namespace train_detail {

inline constexpr std::uint64_t kLabelledStream = 0x1AB;
inline constexpr std::uint64_t kUnlabelledStream = 0x2AB;

inline Raster weak_view(const Raster& obs, Rng& rng, bool mild_photometric) {
  if (!mild_photometric) return obs;
  AugmentConfig mild;
  mild.gain_min = 0.95;
  mild.gain_max = 1.05;
  mild.bias_min = -0.02;
  mild.bias_max = 0.02;
  mild.swap_probability = 0.0;
  return photometric(obs, rng, mild);
}

inline Tensor gt_tensor(const Raster& gt) { return Tensor({1, gt.channels, gt.rows(), gt.cols()}, gt.values); }

}  // namespace train_detail

// One optimisation step: supervised focal loss on the labelled batch, then
// (when enabled and weighted) pseudo-label and feature consistency losses on
// the unlabelled batch against the EMA teacher, an AdamW step on the student
// and the EMA update of the teacher. `step` is 0-based.
inline StepRecord train_step(TrainState& st, const TrainContext& ctx, long step) {
  using namespace train_detail;
  const TrainConfig& tc = ctx.train;
  const SslConfig& sc = ctx.ssl;
  if (ctx.split.labelled.empty()) throw ContractError("train_step: empty labelled batch");
  if (step < 0 || step >= tc.steps) throw ContractError("train_step: step outside [0, total_steps)");
  const LossWeights& w = sc.weights;

  Tape tape;
  const Bindings sb = st.student.bind(&tape);
  std::vector<Tensor> sup, cls, feat;

  for (std::size_t b = 0; b < tc.batch_labelled; ++b) {
    Rng rng = Rng::stream(ctx.seed, {kLabelledStream, static_cast<std::uint64_t>(step), b});
    const Sequence& seq = ctx.data->at(ctx.split.labelled[rng.index(ctx.split.labelled.size())]);
    const Sample& s = seq.frames[rng.index(seq.frames.size())];
    ForwardTrace t;
    LossMask fov;
    if (tc.labelled_strong) {
      StrongView v = strong_view(s.observation, s.sector_map, rng, ctx.augment);
      t = forward(ctx.model, sb, v.obs, v.bev_drop.empty() ? nullptr : &v.bev_drop);
      fov = std::move(v.fov_mask);
    } else {
      t = forward(ctx.model, sb, s.observation);
    }
    sup.push_back(focal_loss(t.probs, gt_tensor(s.gt), fov.empty() ? nullptr : &fov, w.focal_gamma, w.focal_alpha, w.focal_form).loss);
  }

  StepRecord rec;
  rec.step = step;
  const double w_cls = rampup_weight(step, tc.steps, w.w_cls, w.rampup_fraction);
  const double w_feat = sc.featsim ? rampup_weight(step, tc.steps, w.w_feat, w.rampup_fraction) : 0.0;
  const bool unlabelled = sc.enabled && !ctx.split.unlabelled.empty() && tc.batch_unlabelled > 0 && (w_cls > 0.0 || w_feat > 0.0);
  std::size_t kept = 0, considered = 0;
  if (unlabelled) {
    const Bindings tb = st.teacher.bind(nullptr);
    for (std::size_t b = 0; b < tc.batch_unlabelled; ++b) {
      Rng rng = Rng::stream(ctx.seed, {kUnlabelledStream, static_cast<std::uint64_t>(step), b});
      const Sequence& seq = ctx.data->at(ctx.split.unlabelled[rng.index(ctx.split.unlabelled.size())]);
      const std::size_t f = rng.index(seq.frames.size());
      const Sample& s = seq.frames[f];
      const GridSpec& g = s.observation.spec;

      const Raster weak = weak_view(s.observation, rng, sc.teacher_photometric);
      const ForwardTrace t0 = forward(ctx.model, tb, weak);
      const FusionConfig& fc = sc.pseudo.fusion;
      FusedTeacher fused;
      if (fc.mode != FusionMode::none && fc.n_extra > 0) {
        std::vector<Pose2> poses;
        for (const Sample& fr : seq.frames) poses.push_back(fr.pose);
        const auto picks = select_fusion_frames(poses, f, fc.n_extra, fc.max_range, rng, fc.along_trajectory);
        std::vector<std::pair<Raster, Pose2>> extras;
        for (const FusionPick& p : picks) {
          const ForwardTrace te = forward(ctx.model, tb, weak_view(seq.frames[p.frame].observation, rng, sc.teacher_photometric));
          extras.emplace_back(tensor_to_raster(fc.mode == FusionMode::probs ? te.probs : te.z_dec, g), p.relative);
        }
        fused = fc.mode == FusionMode::probs
                    ? fuse_probs(tensor_to_raster(t0.probs, g), extras)
                    : fuse_features(ctx.model, tb, tensor_to_raster(t0.z_dec, g), extras, fc.feature_warp);
      } else {
        fused.probs = tensor_to_raster(t0.probs, g);
        fused.provenance.assign(kNumClasses * g.cells(), 0);
      }
      const PseudoLabelBundle bundle = make_pseudo_labels(fused.probs, sc.pseudo, fused.provenance);

      ForwardTrace ts;
      LossMask mask = bundle.mask;
      if (sc.strong_student) {
        StrongView v = strong_view(s.observation, s.sector_map, rng, ctx.augment);
        ts = forward(ctx.model, sb, v.obs, v.bev_drop.empty() ? nullptr : &v.bev_drop);
        mask = combine_masks(std::move(mask), v.fov_mask);
      } else {
        ts = forward(ctx.model, sb, weak);
      }
      for (auto m : mask) kept += m ? 1 : 0;
      considered += mask.size();
      if (w_cls > 0.0) {
        const Tensor y({1, kNumClasses, g.rows(), g.cols()}, bundle.targets.values);
        cls.push_back(focal_loss(ts.probs, y, &mask, w.focal_gamma, w.focal_alpha, w.focal_form).loss);
      }
      if (w_feat > 0.0) {
        const bool early = sc.feat_tap == FeatTap::early;
        const Tensor& zs = early ? ts.z_bev : ts.z_dec;
        const Tensor& zt = early ? t0.z_bev : (fused.features.defined() ? fused.features : t0.z_dec);
        feat.push_back(feature_similarity_loss(zs, zt, sc.feat_loss));
      }
    }
  }

  const LossBreakdown lb = total_loss(sup, cls, feat, w, step, tc.steps);
  rec.total = lb.total.item();
  rec.loss_sup = lb.sup;
  rec.loss_cls = lb.cls;
  rec.loss_feat = lb.feat;
  rec.w_cls = unlabelled ? lb.w_cls : 0.0;
  rec.w_feat = unlabelled ? lb.w_feat : 0.0;
  rec.masked_fraction = considered ? 1.0 - static_cast<double>(kept) / static_cast<double>(considered) : 0.0;

  backward(lb.total, st.student);
  optimizer_step(st.student, tc.optim, step + 1);
  ema_update(st.teacher, st.student, sc.ema_keep_rate);
  return rec;
}

// Student predictions over every frame of the given sequences.
inline Metrics evaluate(const ModelConfig& model, const ParamSet& params, const SequenceStore& data,
                        const std::vector<std::size_t>& ids, double binarize_at = 0.5) {
  IouAccumulator acc(binarize_at);
  const Bindings b = params.bind(nullptr);
  for (std::size_t id : ids) {
    for (const Sample& s : data.at(id).frames) {
      const ForwardTrace t = forward(model, b, s.observation);
      acc.add(tensor_to_raster(t.probs, s.gt.spec), s.gt);
    }
  }
  return acc.finish();
}

struct ValidationRecord {
  long step = 0;
  double miou = 0.0;
  bool selected = false;  // new best at this point
};

struct TrainResult {
  ParamSet best;             // evaluated weights at the best validation step
  long best_step = 0;
  Metrics best_val;
  std::vector<ValidationRecord> validation;
  std::vector<StepRecord> log;  // every log_every steps
  StepRecord window;         // mean losses over the eval window ending at best_step
};

// Runs the configured number of steps, validating every eval_every steps
// and at the end; keeps the weights with the highest validation mIoU
// (earliest on ties).
inline TrainResult train(const TrainContext& ctx, std::uint64_t init_seed) {
  ctx.model.validate();
  ctx.train.validate();
  ctx.augment.validate();
  ctx.ssl.validate();
  if (!ctx.data) throw ContractError("train: no data");
  TrainState st{init_params(ctx.model, init_seed), {}};
  st.teacher = st.student;
  TrainResult res;
  bool have_best = false;
  StepRecord acc;
  long acc_n = 0;
  for (long step = 0; step < ctx.train.steps; ++step) {
    const StepRecord r = train_step(st, ctx, step);
    acc.total += r.total;
    acc.loss_sup += r.loss_sup;
    acc.loss_cls += r.loss_cls;
    acc.loss_feat += r.loss_feat;
    acc.masked_fraction += r.masked_fraction;
    ++acc_n;
    if ((step + 1) % ctx.train.log_every == 0) res.log.push_back(r);
    const long done = step + 1;
    if (done % ctx.train.eval_every == 0 || done == ctx.train.steps) {
      ValidationRecord v{done, 0.0, false};
      const ParamSet& candidate = ctx.ssl.enabled && ctx.ssl.evaluate_teacher ? st.teacher : st.student;
      const Metrics m = ctx.split.val.empty() ? Metrics{} : evaluate(ctx.model, candidate, *ctx.data, ctx.split.val);
      v.miou = m.miou;
      if (!have_best || m.miou > res.best_val.miou) {
        have_best = true;
        v.selected = true;
        res.best = candidate;
        res.best_step = done;
        res.best_val = m;
        const double n = static_cast<double>(acc_n);
        res.window = {done, acc.total / n, acc.loss_sup / n, acc.loss_cls / n, acc.loss_feat / n, r.w_cls, r.w_feat,
                      acc.masked_fraction / n};
      }
      res.validation.push_back(v);
      acc = {};
      acc_n = 0;
    }
  }
  res.best_val.split = "val";
  res.best_val.step = res.best_step;
  return res;
}

}  // namespace bevssl
